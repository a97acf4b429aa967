#include "sleeprad/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include <boost/math/distributions/fisher_f.hpp>

#include "sleeprad/error.hpp"
#include "sleeprad/signal.hpp"
#include "sleeprad/types.hpp"

namespace sleeprad::stats {
namespace {

constexpr double kZ95 = 1.96;

void check_pairs(std::span<const Pair> pairs) {
  if (pairs.size() < 2) throw DataError("at least two subjects are required");
  for (const auto& p : pairs) {
    if (!std::isfinite(p.a) || !std::isfinite(p.b)) throw DataError("non-finite measurement");
  }
}

double f_quantile(double p, double df1, double df2) {
  boost::math::fisher_f_distribution<double> f(df1, df2);
  return boost::math::quantile(f, p);
}

Interval clamp01(double lo, double hi) { return {std::clamp(lo, 0.0, 1.0), std::clamp(hi, 0.0, 1.0)}; }

}  // namespace

IccResult icc_a1(std::span<const Pair> pairs, double alpha) {
  check_pairs(pairs);
  const double n = static_cast<double>(pairs.size());
  constexpr double k = 2.0;
  double grand = 0.0, col_a = 0.0, col_b = 0.0;
  for (const auto& p : pairs) {
    col_a += p.a;
    col_b += p.b;
  }
  grand = (col_a + col_b) / (k * n);
  col_a /= n;
  col_b /= n;
  double ss_rows = 0.0, ss_total = 0.0;
  for (const auto& p : pairs) {
    const double row = 0.5 * (p.a + p.b);
    ss_rows += k * (row - grand) * (row - grand);
    ss_total += (p.a - grand) * (p.a - grand) + (p.b - grand) * (p.b - grand);
  }
  const double ss_cols = n * ((col_a - grand) * (col_a - grand) + (col_b - grand) * (col_b - grand));
  const double ss_error = std::max(0.0, ss_total - ss_rows - ss_cols);

  IccResult r;
  r.n = pairs.size();
  r.ms_rows = ss_rows / (n - 1.0);
  r.ms_cols = ss_cols / (k - 1.0);
  r.ms_error = ss_error / ((n - 1.0) * (k - 1.0));

  const bool identical = std::all_of(pairs.begin(), pairs.end(), [](const Pair& p) { return p.a == p.b; });
  if (identical) {
    r.value = 1.0;
    r.ci = {1.0, 1.0};
    return r;
  }
  const double denom = r.ms_rows + (k - 1.0) * r.ms_error + (k / n) * (r.ms_cols - r.ms_error);
  if (!(denom > 0.0)) throw DataError("ICC undefined: zero total variance");
  r.value = (r.ms_rows - r.ms_error) / denom;

  // F-based interval for ICC(A,1) with Satterthwaite degrees of freedom.
  const double icc = r.value;
  if (icc >= 1.0 - 1e-12) {
    r.ci = {1.0, 1.0};
    return r;
  }
  const double a = k * icc / (n * (1.0 - icc));
  const double b = 1.0 + k * icc * (n - 1.0) / (n * (1.0 - icc));
  const double am = a * r.ms_cols, bm = b * r.ms_error;
  const double v_den = am * am / (k - 1.0) + bm * bm / ((n - 1.0) * (k - 1.0));
  const double v = v_den > 0.0 ? (am + bm) * (am + bm) / v_den : std::numeric_limits<double>::infinity();
  const double q = 1.0 - alpha / 2.0;
  const double v_eff = std::isfinite(v) ? std::max(v, 1e-6) : 1e12;
  const double fl = f_quantile(q, n - 1.0, v_eff);
  const double fu = f_quantile(q, v_eff, n - 1.0);
  const double mix = k * r.ms_cols + (k * n - k - n) * r.ms_error;
  r.ci.lower = n * (r.ms_rows - fl * r.ms_error) / (fl * mix + n * r.ms_rows);
  r.ci.upper = n * (fu * r.ms_rows - r.ms_error) / (mix + n * fu * r.ms_rows);
  return r;
}

Interval icc_bootstrap_ci(std::span<const Pair> pairs, std::uint64_t seed, std::size_t resamples, double alpha) {
  check_pairs(pairs);
  if (resamples == 0) throw ConfigError("bootstrap needs at least one resample");
  std::mt19937_64 rng(mix_seed(seed, 300));
  std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
  std::vector<double> values;
  values.reserve(resamples);
  std::vector<Pair> draw(pairs.size());
  for (std::size_t r = 0; r < resamples; ++r) {
    for (auto& d : draw) d = pairs[pick(rng)];
    try {
      values.push_back(icc_a1(draw, alpha).value);
    } catch (const DataError&) {
      // Degenerate resample (all draws the same subject); skip it.
    }
  }
  if (values.empty()) throw DataError("no valid bootstrap resample");
  return {signal::percentile(values, 100.0 * alpha / 2.0), signal::percentile(values, 100.0 * (1.0 - alpha / 2.0))};
}

BlandAltman bland_altman(std::span<const Pair> pairs) {
  check_pairs(pairs);
  const double n = static_cast<double>(pairs.size());
  double mean = 0.0;
  for (const auto& p : pairs) mean += p.a - p.b;
  mean /= n;
  double ss = 0.0;
  for (const auto& p : pairs) ss += (p.a - p.b - mean) * (p.a - p.b - mean);
  BlandAltman ba;
  ba.n = pairs.size();
  ba.bias = mean;
  ba.sd = std::sqrt(ss / (n - 1.0));
  ba.loa_low = mean - kZ95 * ba.sd;
  ba.loa_high = mean + kZ95 * ba.sd;
  std::size_t within = 0;
  for (const auto& p : pairs) {
    const double d = p.a - p.b;
    within += d >= ba.loa_low - 1e-12 && d <= ba.loa_high + 1e-12;
  }
  ba.fraction_within = static_cast<double>(within) / n;
  return ba;
}

Interval proportion_interval(double p, std::size_t n, CiMethod method) {
  if (n == 0) return {0.0, 1.0};
  const double nn = static_cast<double>(n);
  if (method == CiMethod::Wald) {
    const double half = kZ95 * std::sqrt(p * (1.0 - p) / nn);
    return clamp01(p - half, p + half);
  }
  const double z2 = kZ95 * kZ95;
  const double centre = (p + z2 / (2.0 * nn)) / (1.0 + z2 / nn);
  const double half = kZ95 * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn)) / (1.0 + z2 / nn);
  return clamp01(centre - half, centre + half);
}

Proportion proportion(std::size_t successes, std::size_t n, CiMethod method) {
  Proportion p;
  p.n = n;
  p.value = n == 0 ? std::nan("") : static_cast<double>(successes) / static_cast<double>(n);
  p.ci = n == 0 ? Interval{std::nan(""), std::nan("")} : proportion_interval(p.value, n, method);
  return p;
}

SensSpec sens_spec_ci(std::size_t tp, std::size_t fn, std::size_t tn, std::size_t fp, CiMethod method) {
  return {proportion(tp, tp + fn, method), proportion(tn, tn + fp, method)};
}

RocResult roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw DataError("scores and labels differ in length");
  const auto n_pos = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](auto l) { return l != 0; }));
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DataError("ROC needs both positive and negative cases");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return scores[i] > scores[j]; });

  RocResult r;
  r.curve.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  double auc = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    const double thr = scores[order[i]];
    std::size_t j = i;
    for (; j < order.size() && scores[order[j]] == thr; ++j) (labels[order[j]] ? tp : fp)++;
    const auto& prev = r.curve.back();
    const double fpr = static_cast<double>(fp) / static_cast<double>(n_neg);
    const double tpr = static_cast<double>(tp) / static_cast<double>(n_pos);
    auc += (fpr - prev.fpr) * (tpr + prev.tpr) / 2.0;
    r.curve.push_back({thr, fpr, tpr});
    i = j;
  }
  r.auc = auc;
  const double a = auc;
  const double q1 = a / (2.0 - a), q2 = 2.0 * a * a / (1.0 + a);
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  const double var = (a * (1.0 - a) + (np - 1.0) * (q1 - a * a) + (nn - 1.0) * (q2 - a * a)) / (np * nn);
  r.se = std::sqrt(std::max(0.0, var));
  r.ci = clamp01(a - kZ95 * r.se, a + kZ95 * r.se);
  return r;
}

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : k_(classes), counts_(classes * classes, 0) {
  if (classes == 0) throw std::invalid_argument("confusion matrix needs at least one class");
}

std::size_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0}); }

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw std::invalid_argument("confusion matrices differ in size");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

double macro_mean(std::span<const double> values) {
  double s = 0.0;
  std::size_t n = 0;
  for (double v : values) {
    if (std::isnan(v)) continue;
    s += v;
    ++n;
  }
  return n == 0 ? std::nan("") : s / static_cast<double>(n);
}

ConfusionMetrics confusion_metrics(const ConfusionMatrix& cm) {
  const std::size_t k = cm.classes();
  const double total = static_cast<double>(cm.total());
  if (total == 0.0) throw DataError("empty confusion matrix");
  ConfusionMetrics m;
  m.recall.assign(k, std::nan(""));
  m.precision.assign(k, std::nan(""));
  double diag = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    double row = 0.0, col = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      row += static_cast<double>(cm.at(i, j));
      col += static_cast<double>(cm.at(j, i));
    }
    const double d = static_cast<double>(cm.at(i, i));
    diag += d;
    if (row > 0.0) m.recall[i] = d / row;
    if (col > 0.0) m.precision[i] = d / col;
  }
  m.accuracy = diag / total;
  m.macro_recall = macro_mean(m.recall);
  m.macro_precision = macro_mean(m.precision);
  return m;
}

double cohen_kappa(const ConfusionMatrix& cm) {
  const std::size_t k = cm.classes();
  const double total = static_cast<double>(cm.total());
  if (total == 0.0) throw DataError("empty confusion matrix");
  double po = 0.0, pe = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    double row = 0.0, col = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      row += static_cast<double>(cm.at(i, j));
      col += static_cast<double>(cm.at(j, i));
    }
    po += static_cast<double>(cm.at(i, i));
    pe += row * col;
  }
  po /= total;
  pe /= total * total;
  if (pe >= 1.0) return po >= 1.0 ? 1.0 : 0.0;
  return (po - pe) / (1.0 - pe);
}

std::vector<std::size_t> grouped_kfold(std::span<const std::string> subject_ids, std::span<const int> labels,
                                       std::size_t k, std::uint64_t seed) {
  if (subject_ids.size() != labels.size()) throw ConfigError("ids and labels differ in length");
  if (k < 2) throw ConfigError("need at least two folds");
  std::map<std::string, int> subject_label;
  std::vector<std::string> subjects;
  for (std::size_t i = 0; i < subject_ids.size(); ++i) {
    if (subject_label.emplace(subject_ids[i], labels[i]).second) subjects.push_back(subject_ids[i]);
  }
  if (subjects.size() < k) throw ConfigError("fewer subjects than folds");
  std::sort(subjects.begin(), subjects.end());
  std::mt19937_64 rng(mix_seed(seed, 400));
  std::shuffle(subjects.begin(), subjects.end(), rng);
  std::stable_sort(subjects.begin(), subjects.end(),
                   [&](const auto& x, const auto& y) { return subject_label[x] < subject_label[y]; });
  std::map<std::string, std::size_t> fold_of;
  for (std::size_t i = 0; i < subjects.size(); ++i) fold_of[subjects[i]] = i % k;
  std::vector<std::size_t> out(subject_ids.size());
  for (std::size_t i = 0; i < subject_ids.size(); ++i) out[i] = fold_of[subject_ids[i]];
  return out;
}

Summary describe(std::span<const double> values) {
  if (values.empty()) throw EmptyInputError("cannot summarize an empty sample");
  Summary s;
  s.n = values.size();
  std::vector<double> v(values.begin(), values.end());
  s.median = signal::percentile(v, 50.0);
  s.p25 = signal::percentile(v, 25.0);
  s.p75 = signal::percentile(v, 75.0);
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return s;
}

}  // namespace sleeprad::stats
