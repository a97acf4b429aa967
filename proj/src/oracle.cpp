#include <algorithm>
#include <array>
#include <cmath>

#include "sleeprad/model.hpp"
#include "sleeprad/signal.hpp"

namespace sleeprad::model {
namespace {

struct Prototype {
  double mean;
  double sd;
};

// Per-stage centres of the epoch descriptors; order Wake, N1, N2, N3, REM.
constexpr std::array<Prototype, kNumStages> kPulseBpm = {{{99.0, 3.5}, {90.0, 2.5}, {82.0, 1.8}, {74.0, 1.5}, {93.5, 2.5}}};
constexpr std::array<Prototype, kNumStages> kEffortMm = {{{2.2, 0.4}, {2.2, 0.3}, {2.5, 0.25}, {2.9, 0.25}, {1.87, 0.3}}};
constexpr std::array<Prototype, kNumStages> kBreathBpm = {{{21.3, 2.5}, {19.7, 1.8}, {18.2, 1.8}, {15.7, 1.5}, {21.0, 2.5}}};
constexpr std::array<Prototype, kNumStages> kSdnnMs = {{{27.0, 10.0}, {28.0, 7.0}, {28.7, 4.5}, {16.0, 5.0}, {30.0, 4.5}}};

double log_gauss(double x, const Prototype& p) {
  const double z = (x - p.mean) / p.sd;
  return -0.5 * z * z - std::log(p.sd);
}

struct EpochDescriptors {
  std::vector<double> pulse, effort, breath, sdnn, movement;
  std::vector<std::uint8_t> has_pulse, has_breath;
};

EpochDescriptors describe_epochs(const features::RecordFeatures& f, const OracleConfig& cfg) {
  const std::size_t ne = f.n_epochs;
  const auto ep = f.frame_epochs();
  const double mp_floor = cfg.movement_factor * signal::percentile(f.radar.movement_power, 50.0);
  EpochDescriptors d;
  d.pulse.assign(ne, 0.0);
  d.effort.assign(ne, 0.0);
  d.breath.assign(ne, 0.0);
  d.sdnn.assign(ne, 0.0);
  d.movement.assign(ne, 0.0);
  std::vector<double> n_frames(ne, 0.0), n_pulse(ne, 0.0), n_breath(ne, 0.0);
  for (std::size_t k = 0; k < ep.size(); ++k) {
    const std::size_t e = ep[k];
    n_frames[e] += 1.0;
    d.effort[e] += f.radar.effort[k];
    d.movement[e] += f.radar.movement_power[k] > mp_floor ? 1.0 : 0.0;
    if (!f.ppg.rate_mask[k]) {
      d.pulse[e] += f.ppg.pulse_rate_bpm[k];
      d.sdnn[e] += f.ppg.prv_sdnn_ms[k];
      n_pulse[e] += 1.0;
    }
    if (f.ratios.peak_hz[k] > 0.0) {
      d.breath[e] += 60.0 * f.ratios.peak_hz[k];
      n_breath[e] += 1.0;
    }
  }
  d.has_pulse.assign(ne, 0);
  d.has_breath.assign(ne, 0);
  for (std::size_t e = 0; e < ne; ++e) {
    const double nf = std::max(1.0, n_frames[e]);
    d.effort[e] /= nf;
    d.movement[e] /= nf;
    if (n_pulse[e] > 0.0) {
      d.pulse[e] /= n_pulse[e];
      d.sdnn[e] /= n_pulse[e];
      d.has_pulse[e] = 1;
    }
    if (n_breath[e] > 0.0) {
      d.breath[e] /= n_breath[e];
      d.has_breath[e] = 1;
    }
  }
  return d;
}

// Mean over the epoch and its neighbours, skipping epochs without data.
double context_mean(const std::vector<double>& v, const std::vector<std::uint8_t>& ok, std::size_t e, std::size_t half) {
  const std::size_t lo = e >= half ? e - half : 0;
  const std::size_t hi = std::min(v.size() - 1, e + half);
  double s = 0.0, n = 0.0;
  for (std::size_t j = lo; j <= hi; ++j) {
    if (!ok[j]) continue;
    s += v[j];
    n += 1.0;
  }
  return n > 0.0 ? s / n : std::nan("");
}

}  // namespace

ModelOutput rule_based_oracle(const features::RecordFeatures& f, const OracleConfig& cfg) {
  const std::size_t ne = f.n_epochs;
  const std::size_t nf = f.framing().n_frames;
  const auto d = describe_epochs(f, cfg);
  const std::vector<std::uint8_t> all(ne, 1);

  ModelOutput out;
  out.stage_probs = Matrix(ne, kNumStages);
  std::vector<std::uint8_t> wake(ne, 0);
  for (std::size_t e = 0; e < ne; ++e) {
    std::array<double, kNumStages> score{};
    if (d.movement[e] >= cfg.wake_movement_frac) {
      score = {0.0, -30.0, -30.0, -30.0, -30.0};
    } else {
      const double pulse = context_mean(d.pulse, d.has_pulse, e, 1);
      const double sdnn = context_mean(d.sdnn, d.has_pulse, e, 1);
      const double breath = context_mean(d.breath, d.has_breath, e, 1);
      const double effort = context_mean(d.effort, all, e, 1);
      for (std::size_t s = 0; s < kNumStages; ++s) {
        double v = log_gauss(effort, kEffortMm[s]);
        if (!std::isnan(pulse)) v += log_gauss(pulse, kPulseBpm[s]) + log_gauss(sdnn, kSdnnMs[s]);
        if (!std::isnan(breath)) v += log_gauss(breath, kBreathBpm[s]);
        score[s] = v;
      }
    }
    const double top = *std::max_element(score.begin(), score.end());
    double sum = 0.0;
    for (std::size_t s = 0; s < kNumStages; ++s) sum += out.stage_probs(e, s) = std::exp(score[s] - top);
    for (std::size_t s = 0; s < kNumStages; ++s) out.stage_probs(e, s) /= sum;
    wake[e] = score[0] == top;
  }

  // Event probability from the larger of the flow and effort drops; a nearby
  // desaturation lifts partial drops above the detection threshold.
  const auto& desats = f.ppg.desats;
  const auto ep = f.frame_epochs();
  out.event_probs.assign(nf, 0.0);
  std::size_t first_desat = 0;
  const double span = cfg.event_full_drop - cfg.event_min_drop;
  for (std::size_t k = 0; k < nf; ++k) {
    if (wake[ep[k]]) continue;
    const double t = f.framing().center(k);
    const double drop = std::max(1.0 - f.ratios.flow_ratio[k], 1.0 - f.ratios.effort_ratio[k]);
    while (first_desat < desats.size() && desats[first_desat].start_s < t - cfg.desat_before_s) ++first_desat;
    const bool desat = first_desat < desats.size() && desats[first_desat].start_s <= t + cfg.desat_after_s;
    double p;
    if (drop >= cfg.event_full_drop) {
      p = 1.0;
    } else if (drop < cfg.event_min_drop) {
      p = 0.0;
    } else if (desat) {
      p = 0.6 + 0.4 * (drop - cfg.event_min_drop) / span;
    } else {
      p = (drop - cfg.event_min_drop) / span;
    }
    out.event_probs[k] = std::clamp(p, 0.0, 1.0);
  }
  return out;
}

}  // namespace sleeprad::model
