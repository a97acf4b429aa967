#pragma once

// Agreement and diagnostic-accuracy statistics for device-versus-reference
// comparisons.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace sleeprad::stats {

struct Pair {
  std::string subject_id;
  double a = 0.0;  ///< device
  double b = 0.0;  ///< reference
};

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

struct IccResult {
  double value = 0.0;
  Interval ci;
  double ms_rows = 0.0;    ///< between-subject mean square
  double ms_cols = 0.0;    ///< between-rater mean square
  double ms_error = 0.0;
  std::size_t n = 0;
};

/// Single-measure absolute-agreement ICC from a two-way random-effects ANOVA
/// with an F-based confidence interval. Identical raters give 1 with a
/// degenerate interval. Throws DataError for n < 2 or non-finite values.
IccResult icc_a1(std::span<const Pair> pairs, double alpha = 0.05);

/// Percentile bootstrap over subjects, seeded.
Interval icc_bootstrap_ci(std::span<const Pair> pairs, std::uint64_t seed, std::size_t resamples = 2000,
                          double alpha = 0.05);

struct BlandAltman {
  double bias = 0.0;
  double sd = 0.0;
  double loa_low = 0.0;
  double loa_high = 0.0;
  double fraction_within = 0.0;
  std::size_t n = 0;
};

/// Differences a - b; limits of agreement bias +/- 1.96 sample sd.
BlandAltman bland_altman(std::span<const Pair> pairs);

enum class CiMethod { Wald, Wilson };

struct Proportion {
  double value = 0.0;
  Interval ci;
  std::size_t n = 0;
};

/// 95% interval of a binomial proportion p over n trials, clamped to [0, 1].
Interval proportion_interval(double p, std::size_t n, CiMethod method = CiMethod::Wald);
Proportion proportion(std::size_t successes, std::size_t n, CiMethod method = CiMethod::Wald);

struct SensSpec {
  Proportion sensitivity;
  Proportion specificity;
};

SensSpec sens_spec_ci(std::size_t tp, std::size_t fn, std::size_t tn, std::size_t fp,
                      CiMethod method = CiMethod::Wald);

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocResult {
  std::vector<RocPoint> curve;  ///< from (0,0) to (1,1)
  double auc = 0.0;
  double se = 0.0;              ///< Hanley-McNeil
  Interval ci;
};

/// Higher score = more likely positive. Throws DataError unless both classes
/// are present and the lengths agree.
RocResult roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Square count matrix, rows = reference class, columns = predicted class.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);
  std::size_t classes() const { return k_; }
  std::size_t& at(std::size_t truth, std::size_t pred) { return counts_[truth * k_ + pred]; }
  std::size_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * k_ + pred]; }
  void add(std::size_t truth, std::size_t pred) { ++at(truth, pred); }
  std::size_t total() const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);

 private:
  std::size_t k_;
  std::vector<std::size_t> counts_;
};

struct ConfusionMetrics {
  double accuracy = 0.0;
  std::vector<double> recall;     ///< NaN for classes without reference samples
  std::vector<double> precision;  ///< NaN for classes never predicted
  double macro_recall = 0.0;
  double macro_precision = 0.0;
};

ConfusionMetrics confusion_metrics(const ConfusionMatrix& cm);

/// Unweighted mean ignoring NaN entries.
double macro_mean(std::span<const double> values);

/// Chance-corrected agreement with marginal-product expectation. Throws
/// DataError on an empty matrix.
double cohen_kappa(const ConfusionMatrix& cm);

/// Test fold of every row. Rows sharing a subject id share a fold; subjects
/// are shuffled by seed, grouped by label and dealt round-robin with the
/// rotation carried across labels. Throws ConfigError when k < 2 or there are
/// fewer subjects than folds.
std::vector<std::size_t> grouped_kfold(std::span<const std::string> subject_ids, std::span<const int> labels,
                                       std::size_t k, std::uint64_t seed);

struct Summary {
  double median = 0.0;
  double p25 = 0.0;
  double p75 = 0.0;
  double mean = 0.0;
  double sd = 0.0;
  std::size_t n = 0;
};

/// Quartiles by linear interpolation between order statistics (inclusive
/// definition). Throws EmptyInputError on an empty sample.
Summary describe(std::span<const double> values);

}  // namespace sleeprad::stats
