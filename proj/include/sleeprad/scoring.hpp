#pragma once

// From per-frame probabilities to clinical indices: event assembly and typing,
// OAHI / CAI, severity grading, sleep architecture and stage collapsing.

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "sleeprad/ppg_features.hpp"
#include "sleeprad/types.hpp"

namespace sleeprad::scoring {

struct Thresholds {
  double enter = 0.6;
  double exit = 0.4;
  double min_cycles = 2.0;    ///< shorter runs are discarded
  double merge_cycles = 0.5;  ///< runs separated by less than this are merged
};

struct Candidate {
  double start_s = 0.0;
  double duration_s = 0.0;
  std::size_t first_frame = 0;
  std::size_t end_frame = 0;  ///< exclusive
  double end_s() const { return start_s + duration_s; }
};

/// Hysteresis thresholding of per-frame probabilities. Nearby runs are merged
/// first, then runs shorter than min_cycles breaths are dropped. Throws
/// std::invalid_argument when breath_period_s <= 0 or the lengths disagree.
std::vector<Candidate> assemble_events(std::span<const double> event_probs, const Framing& framing,
                                       double breath_period_s, const Thresholds& th = {});

struct ClassifyConfig {
  double edge_trim = 0.15;         ///< fraction ignored at each end of the window
  double absent_effort = 0.1;      ///< effort ratio below this counts as no effort
  double present_effort = 0.5;
  double apnea_drop = 0.9;         ///< flow drop for an apnea
  double hypopnea_drop = 0.3;
  double desat_before_s = 10.0;
  double desat_after_s = 45.0;
};

struct Classification {
  std::optional<EventKind> kind;
  double effort_first = 0.0;   ///< median effort ratio, first half
  double effort_second = 0.0;
  double flow_drop = 0.0;      ///< 1 - median flow ratio
  double desat_pct = 0.0;      ///< deepest coincident desaturation, 0 when none
  std::string diagnostic;      ///< reason when kind is empty
};

Classification classify_event(const Candidate& window, std::span<const double> effort_ratio,
                              std::span<const double> flow_ratio, std::span<const ppg::Desaturation> desats,
                              const ClassifyConfig& cfg = {});

/// Obstructive, mixed and hypopnea events per hour of sleep. Throws
/// std::invalid_argument when tst_h <= 0.
double compute_oahi(std::span<const RespiratoryEvent> events, double tst_h);
/// Central apneas per hour of sleep.
double compute_cai(std::span<const RespiratoryEvent> events, double tst_h);
/// Healthy <= 1 < Mild <= 5 < Moderate <= 10 < Severe.
Severity grade_severity(double oahi);

struct SleepReport {
  double oahi = 0.0;
  double cai = 0.0;
  double odi = 0.0;
  double tst_h = 0.0;
  double time_in_bed_h = 0.0;
  double sleep_efficiency_pct = 0.0;
  double sleep_latency_min = 0.0;
  std::array<double, 4> stage_pct{};  ///< N1, N2, N3, REM as percent of TST
  std::size_t wake_epochs = 0;
  Severity severity = Severity::Healthy;
  std::array<std::size_t, 4> event_counts{};  ///< indexed by EventKind
};

/// Architecture fields only (TST, efficiency, latency, stage shares, wake
/// epochs). Throws std::invalid_argument on an empty hypnogram or TIB <= 0.
SleepReport stage_metrics(const Hypnogram& hyp, double time_in_bed_h);

/// Completes a report with event indices and the severity grade.
SleepReport make_report(const Hypnogram& hyp, double time_in_bed_h, std::span<const RespiratoryEvent> events,
                        double odi);

nlohmann::json to_json(const SleepReport& r);
SleepReport report_from_json(const nlohmann::json& j);

enum class StageScheme { WS, WRLD, WRNN };

std::string_view to_string(StageScheme s);
std::size_t num_classes(StageScheme s);
/// Class names in label order, e.g. WRLD -> Wake, REM, Light, Deep.
const std::vector<std::string>& class_names(StageScheme s);

struct CollapsedHypnogram {
  StageScheme scheme = StageScheme::WRNN;
  std::vector<std::uint8_t> labels;
};

CollapsedHypnogram collapse_stages(const Hypnogram& hyp, StageScheme scheme);
/// Further collapse of an already collapsed sequence. Throws
/// std::invalid_argument when `to` is finer than the input scheme.
CollapsedHypnogram collapse_stages(const CollapsedHypnogram& in, StageScheme to);

struct MatchResult {
  std::size_t true_positive = 0;
  std::size_t false_positive = 0;
  std::size_t false_negative = 0;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  ///< (detected, truth)
  double recall() const;
  double precision() const;
};

/// Greedy one-to-one matching by overlap: a pair qualifies when the
/// intersection covers at least `min_overlap` of the shorter event.
MatchResult match_events(std::span<const RespiratoryEvent> detected, std::span<const RespiratoryEvent> truth,
                         double min_overlap = 0.5);

}  // namespace sleeprad::scoring
