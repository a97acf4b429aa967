#include "sleeprad/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sleeprad/error.hpp"

namespace sleeprad::pipeline {
namespace {

constexpr double kCutoffs[] = {1.0, 5.0, 10.0};

nlohmann::json interval_json(const stats::Interval& i) { return {i.lower, i.upper}; }

nlohmann::json agreement_json(const std::vector<stats::Pair>& pairs, std::uint64_t seed) {
  nlohmann::json j;
  const auto icc = stats::icc_a1(pairs);
  j["icc"] = {{"value", icc.value}, {"ci95", interval_json(icc.ci)},
              {"bootstrap_ci95", interval_json(stats::icc_bootstrap_ci(pairs, seed))}};
  const auto ba = stats::bland_altman(pairs);
  j["bland_altman"] = {{"bias", ba.bias},       {"sd", ba.sd},
                       {"loa_low", ba.loa_low}, {"loa_high", ba.loa_high},
                       {"fraction_within", ba.fraction_within}};
  std::vector<double> a, b;
  for (const auto& p : pairs) {
    a.push_back(p.a);
    b.push_back(p.b);
  }
  auto summary = [](const std::vector<double>& v) {
    const auto s = stats::describe(v);
    return nlohmann::json{{"median", s.median}, {"p25", s.p25}, {"p75", s.p75}, {"mean", s.mean}, {"sd", s.sd}};
  };
  j["device_summary"] = summary(a);
  j["reference_summary"] = summary(b);
  return j;
}

nlohmann::json confusion_json(const stats::ConfusionMatrix& cm, scoring::StageScheme scheme) {
  nlohmann::json j;
  j["classes"] = scoring::class_names(scheme);
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t k = 0; k < cm.classes(); ++k) row.push_back(cm.at(i, k));
    rows.push_back(row);
  }
  j["confusion"] = rows;
  const auto m = stats::confusion_metrics(cm);
  j["accuracy"] = m.accuracy;
  j["kappa"] = stats::cohen_kappa(cm);
  j["recall"] = m.recall;
  j["precision"] = m.precision;
  j["macro_recall"] = m.macro_recall;
  j["macro_precision"] = m.macro_precision;
  return j;
}

stats::ConfusionMatrix stage_confusion(const std::vector<SubjectResult>& rs, scoring::StageScheme scheme) {
  stats::ConfusionMatrix cm(scoring::num_classes(scheme));
  for (const auto& r : rs) {
    const auto t = scoring::collapse_stages(r.truth_hypnogram, scheme);
    const auto d = scoring::collapse_stages(r.device_hypnogram, scheme);
    const std::size_t n = std::min(t.labels.size(), d.labels.size());
    for (std::size_t e = 0; e < n; ++e) cm.add(t.labels[e], d.labels[e]);
  }
  return cm;
}

}  // namespace

Detector Detector::from_checkpoint(const std::filesystem::path& path) {
  const auto ck = model::load_checkpoint(path);
  Detector d;
  d.network.emplace(model::network_from(ck));
  d.normalizer = ck.normalizer;
  return d;
}

model::ModelOutput detect(const Detector& det, const features::RecordFeatures& f) {
  if (det.is_oracle()) return model::rule_based_oracle(f, det.oracle);
  auto x = features::input_matrix(f);
  det.normalizer.apply(x);
  const auto ep = f.frame_epochs();
  return det.network->forward(x, ep, f.n_epochs);
}

ProcessedRecord score(const features::RecordFeatures& f, const model::ModelOutput& out, const Detector& det,
                      const std::string& subject_id) {
  ProcessedRecord r;
  r.subject_id = subject_id;
  r.breath_period_s = f.breath_period_s;
  r.hypnogram.epoch_len_s = f.epoch_len_s;
  for (std::size_t e = 0; e < out.stage_probs.rows; ++e) {
    const double* p = out.stage_probs.row(e);
    r.hypnogram.stages.push_back(static_cast<Stage>(std::max_element(p, p + kNumStages) - p));
  }

  const auto cands = scoring::assemble_events(out.event_probs, f.framing(), f.breath_period_s, det.thresholds);
  for (const auto& c : cands) {
    const auto cls = scoring::classify_event(c, f.ratios.effort_ratio, f.ratios.flow_ratio, f.ppg.desats, det.classify);
    std::ostringstream where;
    where.precision(1);
    where << std::fixed << "event at " << c.start_s << " s: ";
    if (!cls.kind) {
      r.diagnostics.push_back(where.str() + cls.diagnostic);
      continue;
    }
    const auto epoch = std::min(r.hypnogram.size() - 1,
                                static_cast<std::size_t>((c.start_s + 0.5 * c.duration_s) / f.epoch_len_s));
    if (r.hypnogram.stages[epoch] == Stage::Wake) {
      r.diagnostics.push_back(where.str() + "falls in a wake epoch");
      continue;
    }
    r.events.push_back({*cls.kind, c.start_s, c.duration_s, cls.desat_pct});
  }
  const double tib_h = static_cast<double>(f.framing().n_frames - 1) * f.framing().hop_s / 3600.0 +
                       f.framing().frame_len_s / 3600.0;
  r.report = scoring::make_report(r.hypnogram, tib_h, r.events, f.ppg.odi_per_h);
  return r;
}

ProcessedRecord process(const sim::RecordBundle& bundle, const Detector& det) {
  const auto f = features::compute(bundle);
  return score(f, detect(det, f), det, bundle.profile.subject_id);
}

model::Sample make_sample(const features::RecordFeatures& f, const sim::RecordBundle& bundle) {
  model::Sample s;
  s.inputs = features::input_matrix(f);
  s.frame_epoch = f.frame_epochs();
  s.n_epochs = f.n_epochs;
  s.stage_labels.assign(f.n_epochs, -1);
  for (std::size_t e = 0; e < std::min(f.n_epochs, bundle.truth_hypnogram.size()); ++e) {
    s.stage_labels[e] = static_cast<int>(bundle.truth_hypnogram.stages[e]);
  }
  s.event_labels = features::frame_event_labels(f.framing(), bundle.truth_events);
  return s;
}

void CohortConfig::validate() const {
  if (severity_mix.size() != kNumSeverities) throw ConfigError("severity mix needs four entries");
  double sum = 0.0;
  for (double v : severity_mix) {
    if (!(v >= 0.0)) throw ConfigError("severity mix entries must be non-negative");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw ConfigError("severity mix must sum to 1");
  if (folds < 2) throw ConfigError("need at least two folds");
  if (cohort_size < folds) throw ConfigError("cohort must be at least as large as the fold count");
  if (!(duration_h >= 1.0 && duration_h <= 12.0)) throw ConfigError("duration must be within 1-12 h");
}

std::vector<sim::SubjectProfile> make_cohort(const CohortConfig& cfg) {
  cfg.validate();
  // Largest-remainder apportionment; ties go to the milder class.
  std::vector<std::size_t> counts(kNumSeverities);
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t assigned = 0;
  for (std::size_t s = 0; s < kNumSeverities; ++s) {
    const double exact = cfg.severity_mix[s] * static_cast<double>(cfg.cohort_size);
    counts[s] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    assigned += counts[s];
    rem.emplace_back(exact - static_cast<double>(counts[s]), s);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < cfg.cohort_size; ++i, ++assigned) ++counts[rem[i % rem.size()].second];

  std::vector<sim::SubjectProfile> out;
  for (std::size_t s = 0; s < kNumSeverities; ++s) {
    for (std::size_t i = 0; i < counts[s]; ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "subj-%03zu", out.size());
      out.push_back(sim::make_profile(id, static_cast<Severity>(s), mix_seed(cfg.seed, out.size())));
    }
  }
  return out;
}

SubjectResult compare(const sim::RecordBundle& bundle, const ProcessedRecord& device) {
  SubjectResult r;
  r.subject_id = bundle.profile.subject_id;
  r.truth_severity = bundle.profile.severity_class;
  r.truth_hypnogram = bundle.truth_hypnogram;
  r.device_hypnogram = device.hypnogram;
  const double tib_h = bundle.duration_s() / 3600.0;
  const auto n_desat = std::count_if(bundle.truth_events.begin(), bundle.truth_events.end(),
                                     [](const auto& e) { return e.desat_depth_pct >= 3.0; });
  r.truth = scoring::make_report(bundle.truth_hypnogram, tib_h, bundle.truth_events,
                                 static_cast<double>(n_desat) / tib_h);
  r.device = device.report;
  r.matches = scoring::match_events(device.events, bundle.truth_events);
  return r;
}

std::vector<SubjectResult> evaluate_records(std::size_t n, const std::function<sim::RecordBundle(std::size_t)>& load,
                                            const Detector& det, std::size_t jobs) {
  return evaluate_records(n, load, [&det](std::size_t) -> const Detector& { return det; }, jobs);
}

std::vector<SubjectResult> evaluate_records(std::size_t n, const std::function<sim::RecordBundle(std::size_t)>& load,
                                            const std::function<const Detector&(std::size_t)>& detector_for,
                                            std::size_t jobs) {
  std::vector<SubjectResult> out(n);
  std::vector<std::exception_ptr> errors(n);
  const int threads = static_cast<int>(std::max<std::size_t>(1, jobs));
#pragma omp parallel for num_threads(threads) schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    try {
      const auto bundle = load(static_cast<std::size_t>(i));
      out[i] = compare(bundle, process(bundle, detector_for(static_cast<std::size_t>(i))));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

nlohmann::json agreement_report(const std::vector<SubjectResult>& results, std::size_t folds, std::uint64_t seed) {
  if (results.empty()) throw EmptyInputError("no subjects to evaluate");
  nlohmann::json j;
  j["n_subjects"] = results.size();
  j["seed"] = seed;

  std::vector<stats::Pair> oahi, cai, tst;
  // Stage shares: N1, N2, N3, REM and light sleep (N1 + N2).
  std::array<std::vector<stats::Pair>, 5> stage_pct;
  for (const auto& r : results) {
    oahi.push_back({r.subject_id, r.device.oahi, r.truth.oahi});
    cai.push_back({r.subject_id, r.device.cai, r.truth.cai});
    tst.push_back({r.subject_id, r.device.tst_h, r.truth.tst_h});
    for (std::size_t s = 0; s < 4; ++s) stage_pct[s].push_back({r.subject_id, r.device.stage_pct[s], r.truth.stage_pct[s]});
    stage_pct[4].push_back({r.subject_id, r.device.stage_pct[0] + r.device.stage_pct[1],
                            r.truth.stage_pct[0] + r.truth.stage_pct[1]});
  }
  if (results.size() >= 2) {
    j["oahi"] = agreement_json(oahi, seed);
    j["cai"] = agreement_json(cai, seed);
    j["tst_h"] = agreement_json(tst, seed);
    const char* names[5] = {"N1", "N2", "N3", "REM", "Light"};
    for (std::size_t s = 0; s < 5; ++s) j["stage_pct"][names[s]] = agreement_json(stage_pct[s], seed);
  }

  // Diagnostic performance at the three severity cutoffs.
  j["cutoffs"] = nlohmann::json::array();
  for (double cut : kCutoffs) {
    std::size_t tp = 0, fn = 0, tn = 0, fp = 0;
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    for (const auto& r : results) {
      const bool pos = r.truth.oahi > cut, called = r.device.oahi > cut;
      (pos ? (called ? tp : fn) : (called ? fp : tn))++;
      scores.push_back(r.device.oahi);
      labels.push_back(pos ? 1 : 0);
    }
    const auto ss = stats::sens_spec_ci(tp, fn, tn, fp);
    nlohmann::json row;
    row["cutoff"] = cut;
    row["tp"] = tp;
    row["fn"] = fn;
    row["tn"] = tn;
    row["fp"] = fp;
    row["sensitivity"] = {{"value", ss.sensitivity.value}, {"ci95", interval_json(ss.sensitivity.ci)}};
    row["specificity"] = {{"value", ss.specificity.value}, {"ci95", interval_json(ss.specificity.ci)}};
    if (tp + fn > 0 && tn + fp > 0) {
      const auto roc = stats::roc_auc(scores, labels);
      nlohmann::json curve = nlohmann::json::array();
      for (const auto& p : roc.curve) curve.push_back({p.fpr, p.tpr});
      row["roc"] = {{"auc", roc.auc}, {"se", roc.se}, {"ci95", interval_json(roc.ci)}, {"curve", curve}};
    } else {
      row["roc"] = nullptr;
    }
    j["cutoffs"].push_back(row);
  }

  stats::ConfusionMatrix sev(kNumSeverities);
  for (const auto& r : results) {
    sev.add(static_cast<std::size_t>(scoring::grade_severity(r.truth.oahi)), static_cast<std::size_t>(r.device.severity));
  }
  std::size_t agree = 0;
  for (std::size_t i = 0; i < kNumSeverities; ++i) agree += sev.at(i, i);
  j["severity"] = {{"agree", agree}, {"n", results.size()}};
  {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < kNumSeverities; ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t k = 0; k < kNumSeverities; ++k) row.push_back(sev.at(i, k));
      rows.push_back(row);
    }
    j["severity"]["confusion"] = rows;
  }

  for (auto scheme : {scoring::StageScheme::WS, scoring::StageScheme::WRLD, scoring::StageScheme::WRNN}) {
    j["staging"][std::string(scoring::to_string(scheme))] = confusion_json(stage_confusion(results, scheme), scheme);
  }

  scoring::MatchResult total;
  for (const auto& r : results) {
    total.true_positive += r.matches.true_positive;
    total.false_positive += r.matches.false_positive;
    total.false_negative += r.matches.false_negative;
  }
  j["events"] = {{"true_positive", total.true_positive}, {"false_positive", total.false_positive},
                 {"false_negative", total.false_negative}, {"recall", total.recall()},
                 {"precision", total.precision()}, {"min_overlap", 0.5}};

  // Grouped, stratified folds: per-fold breakdown of the same quantities.
  std::vector<std::string> ids;
  std::vector<int> labels;
  for (const auto& r : results) {
    ids.push_back(r.subject_id);
    labels.push_back(static_cast<int>(r.truth_severity));
  }
  const std::size_t k = std::min(folds, results.size());
  j["folds"] = nlohmann::json::array();
  if (k >= 2) {
    const auto fold = stats::grouped_kfold(ids, labels, k, seed);
    for (std::size_t f = 0; f < k; ++f) {
      std::vector<SubjectResult> part;
      for (std::size_t i = 0; i < results.size(); ++i) {
        if (fold[i] == f) part.push_back(results[i]);
      }
      nlohmann::json fj;
      fj["fold"] = f;
      nlohmann::json members = nlohmann::json::array();
      double abs_err = 0.0;
      for (const auto& r : part) {
        members.push_back(r.subject_id);
        abs_err += std::abs(r.device.oahi - r.truth.oahi);
      }
      fj["subjects"] = members;
      fj["oahi_mae"] = abs_err / static_cast<double>(part.size());
      const auto cm = stage_confusion(part, scoring::StageScheme::WRNN);
      fj["wrnn_accuracy"] = stats::confusion_metrics(cm).accuracy;
      fj["wrnn_kappa"] = stats::cohen_kappa(cm);
      j["folds"].push_back(fj);
    }
  }

  j["subjects"] = nlohmann::json::array();
  for (const auto& r : results) {
    j["subjects"].push_back({{"subject_id", r.subject_id},
                             {"truth_severity", std::string(to_string(r.truth_severity))},
                             {"truth", scoring::to_json(r.truth)},
                             {"device", scoring::to_json(r.device)},
                             {"events_matched", r.matches.true_positive},
                             {"events_missed", r.matches.false_negative},
                             {"events_spurious", r.matches.false_positive}});
  }
  return j;
}

}  // namespace sleeprad::pipeline
