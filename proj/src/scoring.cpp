#include "sleeprad/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <tuple>

#include <nlohmann/json.hpp>

#include "sleeprad/error.hpp"
#include "sleeprad/signal.hpp"

namespace sleeprad::scoring {
namespace {

double median_of(std::span<const double> x, std::size_t lo, std::size_t hi) {
  if (lo >= hi) return 0.0;
  return signal::percentile(std::vector<double>(x.begin() + static_cast<std::ptrdiff_t>(lo),
                                                x.begin() + static_cast<std::ptrdiff_t>(hi)),
                            50.0);
}

void require_tst(double tst_h) {
  if (!(tst_h > 0.0)) throw std::invalid_argument("total sleep time must be positive");
}

}  // namespace

std::vector<Candidate> assemble_events(std::span<const double> event_probs, const Framing& framing,
                                       double breath_period_s, const Thresholds& th) {
  if (!(breath_period_s > 0.0)) throw std::invalid_argument("breath period must be positive");
  if (event_probs.size() != framing.n_frames) throw std::invalid_argument("probabilities do not match the framing");

  // Hysteresis runs as [first, end) frame ranges.
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  bool active = false;
  std::size_t first = 0;
  for (std::size_t k = 0; k < event_probs.size(); ++k) {
    const double p = event_probs[k];
    if (!active && p >= th.enter) {
      active = true;
      first = k;
    } else if (active && p < th.exit) {
      runs.emplace_back(first, k);
      active = false;
    }
  }
  if (active) runs.emplace_back(first, event_probs.size());

  auto start_of = [&](std::size_t k) { return framing.center(k) - 0.5 * framing.hop_s; };
  auto end_of = [&](std::size_t k_end) { return framing.center(k_end - 1) + 0.5 * framing.hop_s; };

  std::vector<std::pair<std::size_t, std::size_t>> merged;
  for (const auto& r : runs) {
    if (!merged.empty() && start_of(r.first) - end_of(merged.back().second) < th.merge_cycles * breath_period_s) {
      merged.back().second = r.second;
    } else {
      merged.push_back(r);
    }
  }

  std::vector<Candidate> out;
  for (const auto& [a, b] : merged) {
    const double s = start_of(a), e = end_of(b);
    if (e - s + 1e-9 < th.min_cycles * breath_period_s) continue;
    out.push_back({s, e - s, a, b});
  }
  return out;
}

Classification classify_event(const Candidate& window, std::span<const double> effort_ratio,
                              std::span<const double> flow_ratio, std::span<const ppg::Desaturation> desats,
                              const ClassifyConfig& cfg) {
  if (effort_ratio.size() != flow_ratio.size() || window.end_frame > effort_ratio.size() ||
      window.first_frame >= window.end_frame) {
    throw std::invalid_argument("event window outside the channel range");
  }
  const std::size_t len = window.end_frame - window.first_frame;
  const auto trim = static_cast<std::size_t>(std::floor(cfg.edge_trim * static_cast<double>(len)));
  const std::size_t lo = window.first_frame + trim;
  const std::size_t hi = window.end_frame - trim;
  const std::size_t mid = lo + (hi - lo) / 2;

  Classification c;
  c.effort_first = median_of(effort_ratio, lo, std::max(mid, lo + 1));
  c.effort_second = median_of(effort_ratio, mid, hi);
  const double effort_all = median_of(effort_ratio, lo, hi);
  c.flow_drop = 1.0 - median_of(flow_ratio, lo, hi);
  for (const auto& d : desats) {
    if (d.start_s >= window.start_s - cfg.desat_before_s && d.start_s <= window.end_s() + cfg.desat_after_s) {
      c.desat_pct = std::max(c.desat_pct, d.depth_pct);
    }
  }

  const bool absent_first = c.effort_first < cfg.absent_effort;
  if (absent_first && c.effort_second < cfg.absent_effort) {
    c.kind = EventKind::CentralApnea;
  } else if (absent_first && c.effort_second >= cfg.present_effort) {
    c.kind = EventKind::MixedApnea;
  } else if (c.flow_drop >= cfg.apnea_drop && effort_all >= cfg.present_effort) {
    c.kind = EventKind::ObstructiveApnea;
  } else if (c.flow_drop >= cfg.hypopnea_drop && c.flow_drop < cfg.apnea_drop && c.desat_pct >= 3.0) {
    c.kind = EventKind::ObstructiveHypopnea;
  } else if (c.flow_drop >= cfg.hypopnea_drop && c.flow_drop < cfg.apnea_drop) {
    c.diagnostic = "partial flow reduction without a coincident desaturation";
  } else {
    c.diagnostic = "effort and flow pattern matches no event type";
  }
  return c;
}

double compute_oahi(std::span<const RespiratoryEvent> events, double tst_h) {
  require_tst(tst_h);
  const auto n = std::count_if(events.begin(), events.end(), [](const auto& e) { return is_obstructive_type(e.kind); });
  return static_cast<double>(n) / tst_h;
}

double compute_cai(std::span<const RespiratoryEvent> events, double tst_h) {
  require_tst(tst_h);
  const auto n = std::count_if(events.begin(), events.end(),
                               [](const auto& e) { return e.kind == EventKind::CentralApnea; });
  return static_cast<double>(n) / tst_h;
}

Severity grade_severity(double oahi) {
  if (oahi <= 1.0) return Severity::Healthy;
  if (oahi <= 5.0) return Severity::Mild;
  if (oahi <= 10.0) return Severity::Moderate;
  return Severity::Severe;
}

SleepReport stage_metrics(const Hypnogram& hyp, double time_in_bed_h) {
  hyp.validate();
  if (!(time_in_bed_h > 0.0)) throw std::invalid_argument("time in bed must be positive");
  SleepReport r;
  r.time_in_bed_h = time_in_bed_h;
  std::array<std::size_t, kNumStages> counts{};
  for (Stage s : hyp.stages) ++counts[static_cast<std::size_t>(s)];
  const std::size_t sleep_epochs = hyp.size() - counts[0];
  r.wake_epochs = counts[0];
  r.tst_h = static_cast<double>(sleep_epochs) * hyp.epoch_len_s / 3600.0;
  r.sleep_efficiency_pct = std::clamp(100.0 * r.tst_h / time_in_bed_h, 0.0, 100.0);
  const auto first_sleep = std::find_if(hyp.stages.begin(), hyp.stages.end(), is_sleep);
  r.sleep_latency_min = first_sleep == hyp.stages.end()
                            ? time_in_bed_h * 60.0
                            : static_cast<double>(first_sleep - hyp.stages.begin()) * hyp.epoch_len_s / 60.0;
  if (sleep_epochs > 0) {
    const Stage order[4] = {Stage::N1, Stage::N2, Stage::N3, Stage::REM};
    for (std::size_t i = 0; i < 4; ++i) {
      r.stage_pct[i] = 100.0 * static_cast<double>(counts[static_cast<std::size_t>(order[i])]) /
                       static_cast<double>(sleep_epochs);
    }
  }
  return r;
}

SleepReport make_report(const Hypnogram& hyp, double time_in_bed_h, std::span<const RespiratoryEvent> events,
                        double odi) {
  SleepReport r = stage_metrics(hyp, time_in_bed_h);
  if (r.tst_h <= 0.0) throw DataError("no sleep detected; indices per hour of sleep are undefined");
  r.oahi = compute_oahi(events, r.tst_h);
  r.cai = compute_cai(events, r.tst_h);
  r.odi = odi;
  r.severity = grade_severity(r.oahi);
  for (const auto& e : events) ++r.event_counts[static_cast<std::size_t>(e.kind)];
  return r;
}

nlohmann::json to_json(const SleepReport& r) {
  nlohmann::json j;
  j["oahi"] = r.oahi;
  j["cai"] = r.cai;
  j["odi"] = r.odi;
  j["tst_h"] = r.tst_h;
  j["time_in_bed_h"] = r.time_in_bed_h;
  j["sleep_efficiency_pct"] = r.sleep_efficiency_pct;
  j["sleep_latency_min"] = r.sleep_latency_min;
  j["stage_pct"] = {{"N1", r.stage_pct[0]}, {"N2", r.stage_pct[1]}, {"N3", r.stage_pct[2]}, {"REM", r.stage_pct[3]}};
  j["wake_epochs"] = r.wake_epochs;
  j["severity"] = std::string(to_string(r.severity));
  nlohmann::json counts;
  for (std::size_t k = 0; k < r.event_counts.size(); ++k) {
    counts[std::string(to_string(static_cast<EventKind>(k)))] = r.event_counts[k];
  }
  j["event_counts"] = counts;
  return j;
}

SleepReport report_from_json(const nlohmann::json& j) {
  SleepReport r;
  try {
    r.oahi = j.at("oahi");
    r.cai = j.at("cai");
    r.odi = j.at("odi");
    r.tst_h = j.at("tst_h");
    r.time_in_bed_h = j.at("time_in_bed_h");
    r.sleep_efficiency_pct = j.at("sleep_efficiency_pct");
    r.sleep_latency_min = j.at("sleep_latency_min");
    const auto& sp = j.at("stage_pct");
    r.stage_pct = {sp.at("N1"), sp.at("N2"), sp.at("N3"), sp.at("REM")};
    r.wake_epochs = j.at("wake_epochs");
    const auto sev = parse_severity(j.at("severity").get<std::string>());
    if (!sev) throw DataError("unknown severity in report");
    r.severity = *sev;
    for (std::size_t k = 0; k < r.event_counts.size(); ++k) {
      r.event_counts[k] = j.at("event_counts").at(std::string(to_string(static_cast<EventKind>(k))));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed sleep report: ") + e.what());
  }
  return r;
}

std::string_view to_string(StageScheme s) {
  switch (s) {
    case StageScheme::WS: return "WS";
    case StageScheme::WRLD: return "WRLD";
    case StageScheme::WRNN: return "WRNN";
  }
  return "?";
}

const std::vector<std::string>& class_names(StageScheme s) {
  static const std::vector<std::string> ws = {"Wake", "Sleep"};
  static const std::vector<std::string> wrld = {"Wake", "REM", "Light", "Deep"};
  static const std::vector<std::string> wrnn = {"Wake", "REM", "N1", "N2", "N3"};
  switch (s) {
    case StageScheme::WS: return ws;
    case StageScheme::WRLD: return wrld;
    case StageScheme::WRNN: return wrnn;
  }
  return wrnn;
}

std::size_t num_classes(StageScheme s) { return class_names(s).size(); }

namespace {

// WRNN label of a stage.
std::uint8_t wrnn_label(Stage s) {
  switch (s) {
    case Stage::Wake: return 0;
    case Stage::REM: return 1;
    case Stage::N1: return 2;
    case Stage::N2: return 3;
    case Stage::N3: return 4;
  }
  return 0;
}

// Coarsening tables indexed by the finer label.
constexpr std::uint8_t kWrnnToWrld[5] = {0, 1, 2, 2, 3};
constexpr std::uint8_t kWrldToWs[4] = {0, 1, 1, 1};

}  // namespace

CollapsedHypnogram collapse_stages(const Hypnogram& hyp, StageScheme scheme) {
  CollapsedHypnogram c{StageScheme::WRNN, {}};
  c.labels.reserve(hyp.size());
  for (Stage s : hyp.stages) c.labels.push_back(wrnn_label(s));
  return collapse_stages(c, scheme);
}

CollapsedHypnogram collapse_stages(const CollapsedHypnogram& in, StageScheme to) {
  if (static_cast<int>(to) > static_cast<int>(in.scheme)) {
    throw std::invalid_argument("cannot refine a collapsed hypnogram");
  }
  CollapsedHypnogram out = in;
  if (out.scheme == StageScheme::WRNN && to != StageScheme::WRNN) {
    for (auto& l : out.labels) l = kWrnnToWrld[l];
    out.scheme = StageScheme::WRLD;
  }
  if (out.scheme == StageScheme::WRLD && to == StageScheme::WS) {
    for (auto& l : out.labels) l = kWrldToWs[l];
    out.scheme = StageScheme::WS;
  }
  return out;
}

double MatchResult::recall() const {
  const std::size_t n = true_positive + false_negative;
  return n == 0 ? 1.0 : static_cast<double>(true_positive) / static_cast<double>(n);
}

double MatchResult::precision() const {
  const std::size_t n = true_positive + false_positive;
  return n == 0 ? 1.0 : static_cast<double>(true_positive) / static_cast<double>(n);
}

MatchResult match_events(std::span<const RespiratoryEvent> detected, std::span<const RespiratoryEvent> truth,
                         double min_overlap) {
  std::vector<std::tuple<double, std::size_t, std::size_t>> cand;
  for (std::size_t i = 0; i < detected.size(); ++i) {
    for (std::size_t j = 0; j < truth.size(); ++j) {
      const double inter = std::min(detected[i].end_s(), truth[j].end_s()) -
                           std::max(detected[i].start_s, truth[j].start_s);
      const double shorter = std::min(detected[i].duration_s, truth[j].duration_s);
      if (inter > 0.0 && inter + 1e-9 >= min_overlap * shorter) cand.emplace_back(inter, i, j);
    }
  }
  std::stable_sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) { return std::get<0>(a) > std::get<0>(b); });
  std::vector<std::uint8_t> used_d(detected.size(), 0), used_t(truth.size(), 0);
  MatchResult m;
  for (const auto& [ov, i, j] : cand) {
    if (used_d[i] || used_t[j]) continue;
    used_d[i] = used_t[j] = 1;
    m.pairs.emplace_back(i, j);
  }
  std::sort(m.pairs.begin(), m.pairs.end());
  m.true_positive = m.pairs.size();
  m.false_positive = detected.size() - m.true_positive;
  m.false_negative = truth.size() - m.true_positive;
  return m;
}

}  // namespace sleeprad::scoring
