#pragma once

// Figures and tables rendered from an agreement report. Plots are plain SVG
// text with no external assets; tables are CSV.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace sleeprad::report {

struct PlotToggles {
  bool oahi = true;        ///< OAHI scatter and Bland-Altman
  bool roc = true;         ///< ROC curves at the three cutoffs
  bool confusion = true;   ///< stage confusion heatmaps
  bool sleep_time = true;  ///< TST and per-stage duration scatter and Bland-Altman
};

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

/// Device (y) against reference (x) with the identity line.
std::string scatter_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                        const std::vector<double>& reference, const std::vector<double>& device);

/// Mean of the two methods against their difference, with horizontal lines at
/// the bias and both limits of agreement (class "ref-line").
std::string bland_altman_svg(const std::string& title, const std::string& unit, const std::vector<double>& reference,
                             const std::vector<double>& device);

/// One polyline per series on the unit square plus the chance diagonal
/// (class "diagonal").
std::string roc_svg(const std::string& title, const std::vector<Series>& curves);

/// Row-normalised heatmap with the raw counts printed in each cell.
std::string heatmap_svg(const std::string& title, const std::vector<std::string>& classes,
                        const std::vector<std::vector<double>>& counts);

/// Writes every enabled figure and the CSV tables into `out_dir` and returns
/// the file names in the order written. Throws EmptyInputError when the
/// report holds no subjects and DataError when it is malformed (not an
/// object, or a non-array subject list).
std::vector<std::string> write_report(const nlohmann::json& agreement, const std::filesystem::path& out_dir,
                                      const PlotToggles& toggles = {});

}  // namespace sleeprad::report
