#pragma once

// Record- and cohort-level orchestration shared by the CLI and the tests.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "sleeprad/features.hpp"
#include "sleeprad/model.hpp"
#include "sleeprad/scoring.hpp"
#include "sleeprad/sim.hpp"
#include "sleeprad/stats.hpp"

namespace sleeprad::pipeline {

/// Either the rule-based oracle or a trained network with its normalizer.
struct Detector {
  std::optional<model::Network> network;
  features::Normalizer normalizer;
  model::OracleConfig oracle;
  scoring::Thresholds thresholds;
  scoring::ClassifyConfig classify;

  static Detector make_oracle() { return {}; }
  static Detector from_checkpoint(const std::filesystem::path& path);
  bool is_oracle() const { return !network.has_value(); }
};

struct ProcessedRecord {
  std::string subject_id;
  Hypnogram hypnogram;
  std::vector<RespiratoryEvent> events;
  scoring::SleepReport report;
  std::vector<std::string> diagnostics;  ///< candidates dropped by the typing rules
  double breath_period_s = 0.0;
};

model::ModelOutput detect(const Detector& det, const features::RecordFeatures& f);

/// Hypnogram from the per-epoch argmax, events from the assembled and typed
/// candidates, and the sleep report over the full recording as time in bed.
ProcessedRecord score(const features::RecordFeatures& f, const model::ModelOutput& out, const Detector& det,
                      const std::string& subject_id);

ProcessedRecord process(const sim::RecordBundle& bundle, const Detector& det);

/// Training example for the network from a record with ground truth.
model::Sample make_sample(const features::RecordFeatures& f, const sim::RecordBundle& bundle);

struct CohortConfig {
  std::size_t cohort_size = 24;
  std::vector<double> severity_mix = {1.0 / 3.0, 1.0 / 3.0, 0.0, 1.0 / 3.0};  ///< Healthy, Mild, Moderate, Severe
  double duration_h = 8.0;
  std::uint64_t seed = 1;
  std::size_t folds = 4;

  /// Throws ConfigError when the mix does not sum to 1, has a negative entry,
  /// or the cohort is smaller than the fold count.
  void validate() const;
};

/// Subject profiles with severities dealt by largest-remainder apportionment
/// of the mix, ids "subj-000", "subj-001", ...
std::vector<sim::SubjectProfile> make_cohort(const CohortConfig& cfg);

/// Per-subject truth versus device result, the input to the agreement report.
struct SubjectResult {
  std::string subject_id;
  Severity truth_severity = Severity::Healthy;
  scoring::SleepReport truth;
  scoring::SleepReport device;
  Hypnogram truth_hypnogram;
  Hypnogram device_hypnogram;
  scoring::MatchResult matches;
};

SubjectResult compare(const sim::RecordBundle& bundle, const ProcessedRecord& device);

/// Loads (or simulates) record i, processes it and compares it with its
/// ground truth, `jobs` records at a time. Results are stored by index, so
/// the output does not depend on `jobs`. The lowest-index failure is rethrown.
std::vector<SubjectResult> evaluate_records(std::size_t n, const std::function<sim::RecordBundle(std::size_t)>& load,
                                            const std::function<const Detector&(std::size_t)>& detector_for,
                                            std::size_t jobs);
std::vector<SubjectResult> evaluate_records(std::size_t n, const std::function<sim::RecordBundle(std::size_t)>& load,
                                            const Detector& det, std::size_t jobs);

/// Cohort-level statistics in the layout of the clinical evaluation: OAHI/TST
/// agreement, diagnostic cutoffs 1/5/10, stage confusion under all three
/// schemes, event detection totals and the per-subject table.
/// Subjects are assigned to `folds` grouped, severity-stratified folds for
/// the per-fold breakdown.
nlohmann::json agreement_report(const std::vector<SubjectResult>& results, std::size_t folds, std::uint64_t seed);

}  // namespace sleeprad::pipeline
