#include "sleeprad/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "sleeprad/error.hpp"

namespace sleeprad::sim {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Seed streams; one per independent random process.
enum Stream : std::uint64_t {
  kStreamProfile = 0,
  kStreamHypnogram = 1,
  kStreamEvents = 2,
  kStreamTrajectory = 3,
  kStreamMovement = 4,
  kStreamRadarNoise = 5,
  kStreamSpo2 = 6,
};

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double smoothstep(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

// Ornstein-Uhlenbeck process with unit variance sampled once per second.
std::vector<double> ou_process(std::mt19937_64& rng, std::size_t n, double tau_s) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> x(n);
  const double a = std::exp(-1.0 / tau_s);
  const double b = std::sqrt(1.0 - a * a);
  double v = normal(rng);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = v;
    v = a * v + b * normal(rng);
  }
  return x;
}

// Linear interpolation on a 1 Hz grid.
double at_time(const std::vector<double>& grid, double t) {
  if (t <= 0.0) return grid.front();
  const auto i = static_cast<std::size_t>(t);
  if (i + 1 >= grid.size()) return grid.back();
  const double f = t - static_cast<double>(i);
  return grid[i] * (1.0 - f) + grid[i + 1] * f;
}

// Per-second stage-dependent target, smoothed over ~10 s so that vital
// signs change continuously at epoch boundaries.
std::vector<double> stage_track(const Hypnogram& hyp, std::size_t n_sec,
                                double (*pick)(const StageVitals&), const PhysioConfig& cfg) {
  std::vector<double> raw(n_sec);
  for (std::size_t s = 0; s < n_sec; ++s) {
    auto e = std::min(static_cast<std::size_t>(static_cast<double>(s) / hyp.epoch_len_s), hyp.size() - 1);
    raw[s] = pick(cfg.at(hyp.stages[e]));
  }
  constexpr std::size_t half = 5;
  std::vector<double> out(n_sec);
  for (std::size_t s = 0; s < n_sec; ++s) {
    const std::size_t lo = s > half ? s - half : 0;
    const std::size_t hi = std::min(n_sec, s + half + 1);
    double acc = 0.0;
    for (std::size_t i = lo; i < hi; ++i) acc += raw[i];
    out[s] = acc / static_cast<double>(hi - lo);
  }
  return out;
}

double hash_unit(std::uint64_t seed, double t) {
  const auto key = static_cast<std::uint64_t>(std::llround(t * 1000.0));
  return static_cast<double>(mix_seed(seed, key) >> 11) * 0x1.0p-53;
}

// Slow physiological signals on a 1 Hz control grid, shared by the radar and
// PPG renderers so breathing and pulse stay mutually consistent.
struct Trajectory {
  std::vector<double> resp_rate_hz;
  std::vector<double> resp_amp_mm;
  std::vector<double> pulse_rate_bpm;
  std::vector<double> rsa_bpm;
  std::vector<double> lf_bpm;
  double lf_phase = 0.0;
};

Trajectory make_trajectory(const Hypnogram& hyp, std::span<const RespiratoryEvent> events,
                           const PhysioConfig& cfg, std::uint64_t seed) {
  const auto n_sec = static_cast<std::size_t>(std::ceil(hyp.duration_s())) + 2;
  std::mt19937_64 rng(mix_seed(seed, kStreamTrajectory));
  const auto rate_noise = ou_process(rng, n_sec, 30.0);
  const auto amp_noise = ou_process(rng, n_sec, 20.0);
  const auto pulse_noise = ou_process(rng, n_sec, 40.0);

  const auto rate = stage_track(hyp, n_sec, [](const StageVitals& v) { return v.resp_rate_bpm; }, cfg);
  const auto rate_var = stage_track(hyp, n_sec, [](const StageVitals& v) { return v.resp_rate_variability; }, cfg);
  const auto amp = stage_track(hyp, n_sec, [](const StageVitals& v) { return v.chest_amp_mm; }, cfg);
  const auto amp_var = stage_track(hyp, n_sec, [](const StageVitals& v) { return v.amp_variability; }, cfg);
  const auto pulse = stage_track(hyp, n_sec, [](const StageVitals& v) { return v.pulse_rate_bpm; }, cfg);
  const auto pulse_var = stage_track(hyp, n_sec, [](const StageVitals& v) { return v.pulse_variability; }, cfg);

  Trajectory tr;
  tr.rsa_bpm = stage_track(hyp, n_sec, [](const StageVitals& v) { return v.rsa_bpm; }, cfg);
  tr.lf_bpm = stage_track(hyp, n_sec, [](const StageVitals& v) { return v.lf_bpm; }, cfg);
  tr.lf_phase = uniform(rng, 0.0, kTwoPi);
  tr.resp_rate_hz.resize(n_sec);
  tr.resp_amp_mm.resize(n_sec);
  tr.pulse_rate_bpm.resize(n_sec);
  for (std::size_t s = 0; s < n_sec; ++s) {
    tr.resp_rate_hz[s] = rate[s] / 60.0 * std::exp(rate_var[s] * rate_noise[s]);
    tr.resp_amp_mm[s] = amp[s] * std::exp(amp_var[s] * amp_noise[s]);
    tr.pulse_rate_bpm[s] = pulse[s] * std::exp(pulse_var[s] * pulse_noise[s]);
  }
  // Post-apnea arousal tachycardia.
  for (const auto& ev : events) {
    if (ev.kind == EventKind::ObstructiveHypopnea) continue;
    const auto s0 = static_cast<std::size_t>(ev.end_s());
    for (std::size_t s = s0; s < std::min(n_sec, s0 + 15); ++s) {
      tr.pulse_rate_bpm[s] += 6.0 * std::sin(std::numbers::pi * static_cast<double>(s - s0) / 15.0);
    }
  }
  return tr;
}

// Respiratory gating: `flow` scales the tidal component at the breathing rate,
// `paradox` is the amplitude of the frequency-doubled paradoxical effort that
// persists against an obstructed airway.
struct Gates {
  std::vector<double> flow;
  std::vector<double> paradox;
};

Gates event_gates(std::span<const RespiratoryEvent> events, std::size_t n, double fs,
                  const PhysioConfig& cfg, std::uint64_t seed) {
  Gates g{std::vector<double>(n, 1.0), std::vector<double>(n, 0.0)};
  constexpr double ramp = 1.0;
  for (const auto& ev : events) {
    const double t0 = ev.start_s, t1 = ev.end_s(), mid = 0.5 * (t0 + t1);
    const double hypopnea_flow = 0.4 + 0.2 * hash_unit(seed, ev.start_s);
    const auto lo = static_cast<std::size_t>(std::max(0.0, (t0 - ramp) * fs));
    const auto hi = std::min(n, static_cast<std::size_t>((t1 + ramp) * fs) + 1);
    for (std::size_t i = lo; i < hi; ++i) {
      const double t = static_cast<double>(i) / fs;
      const double inside = smoothstep((t - (t0 - 0.5 * ramp)) / ramp) *
                            (1.0 - smoothstep((t - (t1 - 0.5 * ramp)) / ramp));
      double flow_in = 0.0, paradox_in = 0.0;
      switch (ev.kind) {
        case EventKind::CentralApnea: break;
        case EventKind::ObstructiveApnea: paradox_in = cfg.paradox_effort; break;
        case EventKind::MixedApnea:
          paradox_in = cfg.paradox_effort * smoothstep((t - (mid - 0.5 * ramp)) / ramp);
          break;
        case EventKind::ObstructiveHypopnea: flow_in = hypopnea_flow; break;
      }
      g.flow[i] = std::min(g.flow[i], 1.0 - inside * (1.0 - flow_in));
      g.paradox[i] = std::max(g.paradox[i], inside * paradox_in);
    }
  }
  return g;
}

// Body movement: a few-second burst of 2-5 Hz motion on top of a smooth
// posture shift.
void add_movements(std::vector<double>& d, const Hypnogram& hyp, const PhysioConfig& cfg,
                   double fs, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, kStreamMovement));
  std::vector<double> settled(d.size() + 1, 0.0);  // posture offsets, as increments
  for (std::size_t e = 0; e < hyp.size(); ++e) {
    const double rate = cfg.at(hyp.stages[e]).movement_rate_per_h;
    const double expected = rate * hyp.epoch_len_s / 3600.0;
    const auto count = std::poisson_distribution<int>(expected)(rng);
    for (int m = 0; m < count; ++m) {
      const double start = (static_cast<double>(e) + uniform(rng, 0.0, 1.0)) * hyp.epoch_len_s;
      const double dur = uniform(rng, 2.0, 8.0);
      const double amp = cfg.movement_amp_mm * uniform(rng, 0.6, 1.0) / 3.0;
      const double shift = uniform(rng, -cfg.posture_shift_mm, cfg.posture_shift_mm);
      std::array<double, 3> freq{}, phase{};
      for (std::size_t j = 0; j < 3; ++j) {
        freq[j] = uniform(rng, 2.0, 5.0);
        phase[j] = uniform(rng, 0.0, kTwoPi);
      }
      const auto lo = std::min(d.size(), static_cast<std::size_t>(start * fs));
      const auto hi = std::min(d.size(), static_cast<std::size_t>(std::ceil((start + dur) * fs)));
      for (std::size_t i = lo; i < hi; ++i) {
        const double t = static_cast<double>(i) / fs - start;
        const double u = t / dur;
        const double taper = 0.5 - 0.5 * std::cos(kTwoPi * u);
        double burst = 0.0;
        for (std::size_t j = 0; j < 3; ++j) burst += std::sin(kTwoPi * freq[j] * t + phase[j]);
        d[i] += amp * taper * burst + shift * smoothstep(u);
      }
      settled[hi] += shift;
    }
  }
  double offset = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    offset += settled[i];
    d[i] += offset;
  }
}

double pulse_template(double frac) {
  const double sys = (frac - 0.25) / 0.08;
  const double dic = (frac - 0.55) / 0.10;
  return std::exp(-0.5 * sys * sys) + 0.25 * std::exp(-0.5 * dic * dic);
}

std::size_t n_samples(const Hypnogram& hyp, double fs) {
  return static_cast<std::size_t>(std::llround(hyp.duration_s() * fs));
}

}  // namespace

void SubjectProfile::validate() const {
  if (age_years < 1.0 || age_years > 18.0) throw ConfigError("age must be within 1-18 years");
  const auto [lo, hi] = severity_band(severity_class);
  const bool inside = severity_class == Severity::Healthy ? (target_oahi >= 0.0 && target_oahi <= hi)
                                                          : (target_oahi > lo && target_oahi <= hi);
  if (!inside) throw ConfigError("target OAHI outside the band of severity " + std::string(to_string(severity_class)));
}

std::pair<double, double> severity_band(Severity s) {
  switch (s) {
    case Severity::Healthy: return {0.0, 1.0};
    case Severity::Mild: return {1.0, 5.0};
    case Severity::Moderate: return {5.0, 10.0};
    case Severity::Severe: return {10.0, std::numeric_limits<double>::infinity()};
  }
  return {0.0, 1.0};
}

SubjectProfile make_profile(std::string subject_id, Severity severity, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, kStreamProfile));
  SubjectProfile p;
  p.subject_id = std::move(subject_id);
  p.severity_class = severity;
  p.seed = seed;
  p.age_years = uniform(rng, 3.0, 14.0);
  switch (severity) {
    case Severity::Healthy: p.target_oahi = uniform(rng, 0.2, 0.8); break;
    case Severity::Mild: p.target_oahi = uniform(rng, 1.6, 4.2); break;
    case Severity::Moderate: p.target_oahi = uniform(rng, 6.0, 9.0); break;
    case Severity::Severe: p.target_oahi = uniform(rng, 12.0, 20.0); break;
  }
  return p;
}

std::array<StageVitals, kNumStages> PhysioConfig::default_vitals() {
  std::array<StageVitals, kNumStages> v{};
  //                     amp  rate  rvar  avar  pulse pvar  rsa  lf   moves/h
  v[static_cast<std::size_t>(Stage::Wake)] = {2.2, 22.0, 0.12, 0.20, 100.0, 0.03, 3.0, 4.0, 90.0};
  v[static_cast<std::size_t>(Stage::N1)] = {2.3, 20.0, 0.07, 0.12, 90.0, 0.02, 3.0, 3.0, 6.0};
  v[static_cast<std::size_t>(Stage::N2)] = {2.6, 18.0, 0.04, 0.06, 82.0, 0.015, 4.0, 2.0, 2.0};
  v[static_cast<std::size_t>(Stage::N3)] = {3.0, 15.5, 0.02, 0.03, 74.0, 0.01, 1.5, 1.0, 0.5};
  v[static_cast<std::size_t>(Stage::REM)] = {1.9, 21.0, 0.12, 0.18, 94.0, 0.03, 4.0, 4.0, 3.0};
  return v;
}

double PhysioConfig::baseline_breath_period_s() const {
  double acc = 0.0;
  for (Stage s : {Stage::N1, Stage::N2, Stage::N3, Stage::REM}) acc += at(s).resp_rate_bpm;
  return 60.0 / (acc / 4.0);
}

void PhysioConfig::validate() const {
  if (!(radar_wavelength_m > 0.0)) throw ConfigError("radar wavelength must be positive");
  for (const auto& v : vitals) {
    if (!(v.chest_amp_mm > 0.0) || !(v.resp_rate_bpm > 0.0) || !(v.pulse_rate_bpm > 0.0)) {
      throw ConfigError("stage vitals must be strictly positive");
    }
    if (v.movement_rate_per_h < 0.0 || v.resp_rate_variability < 0.0 || v.amp_variability < 0.0 ||
        v.pulse_variability < 0.0) {
      throw ConfigError("variabilities and movement rates must be non-negative");
    }
  }
  if (!(radar_fs_hz > 0.0) || !(ppg_fs_hz > 0.0) || !(spo2_fs_hz > 0.0)) {
    throw ConfigError("sample rates must be positive");
  }
  if (!(desat_lag_s >= 0.0) || !(desat_recovery_tau_s > 0.0)) throw ConfigError("invalid desaturation timing");
  if (spo2_baseline_pct < 70.0 || spo2_baseline_pct > 100.0) throw ConfigError("SpO2 baseline outside [70, 100]");
}

Hypnogram generate_hypnogram(const SubjectProfile& profile, double duration_h, double epoch_len_s) {
  if (!(duration_h >= 1.0 && duration_h <= 12.0)) throw ConfigError("duration must be within 1-12 h");
  if (!(epoch_len_s > 0.0)) throw ConfigError("epoch length must be positive");
  std::mt19937_64 rng(mix_seed(profile.seed, kStreamHypnogram));
  const auto n = static_cast<std::size_t>(std::llround(duration_h * 3600.0 / epoch_len_s));

  // Mean dwell (epochs) and exit distribution per stage; Wake, N1, N2, N3, REM.
  constexpr std::array<double, kNumStages> dwell = {4.0, 6.0, 30.0, 30.0, 24.0};
  constexpr std::array<std::array<double, kNumStages>, kNumStages> exits = {{
      {0.00, 0.85, 0.15, 0.00, 0.00},
      {0.15, 0.00, 0.75, 0.00, 0.10},
      {0.15, 0.10, 0.00, 0.45, 0.30},
      {0.10, 0.00, 0.90, 0.00, 0.00},
      {0.20, 0.30, 0.50, 0.00, 0.00},
  }};
  // Dwell scaled to 30 s epochs so stage durations are epoch-length independent.
  const double scale = 30.0 / epoch_len_s;

  Hypnogram hyp;
  hyp.epoch_len_s = epoch_len_s;
  hyp.stages.reserve(n);
  const auto onset = static_cast<std::size_t>(uniform(rng, 10.0, 40.0) * scale);
  for (std::size_t i = 0; i < std::min(onset, n); ++i) hyp.stages.push_back(Stage::Wake);
  std::size_t cur = static_cast<std::size_t>(Stage::N1);
  while (hyp.stages.size() < n) {
    hyp.stages.push_back(static_cast<Stage>(cur));
    const double stay = 1.0 - 1.0 / (dwell[cur] * scale);
    if (uniform(rng, 0.0, 1.0) < stay) continue;
    std::discrete_distribution<std::size_t> next(exits[cur].begin(), exits[cur].end());
    cur = next(rng);
  }
  return hyp;
}

std::vector<RespiratoryEvent> plant_events(const Hypnogram& hyp, const SubjectProfile& profile,
                                           const PhysioConfig& cfg) {
  hyp.validate();
  std::mt19937_64 rng(mix_seed(profile.seed, kStreamEvents));

  // Contiguous sleep runs in seconds.
  std::vector<std::pair<double, double>> runs;
  double tst_s = 0.0;
  for (std::size_t e = 0; e < hyp.size();) {
    if (!is_sleep(hyp.stages[e])) {
      ++e;
      continue;
    }
    std::size_t f = e;
    while (f < hyp.size() && is_sleep(hyp.stages[f])) ++f;
    runs.emplace_back(static_cast<double>(e) * hyp.epoch_len_s, static_cast<double>(f) * hyp.epoch_len_s);
    tst_s += static_cast<double>(f - e) * hyp.epoch_len_s;
    e = f;
  }
  const double tst_h = tst_s / 3600.0;

  const auto n_obs = static_cast<std::size_t>(std::llround(std::max(0.0, profile.target_oahi) * tst_h));
  double central_rate = 0.3;
  switch (profile.severity_class) {
    case Severity::Healthy: central_rate = 0.3; break;
    case Severity::Mild: central_rate = 0.5; break;
    case Severity::Moderate: central_rate = 0.7; break;
    case Severity::Severe: central_rate = 1.0; break;
  }
  const auto n_central = static_cast<std::size_t>(std::floor(central_rate * tst_h + uniform(rng, 0.0, 1.0)));

  std::vector<EventKind> kinds;
  std::size_t n_oa = static_cast<std::size_t>(std::llround(0.30 * static_cast<double>(n_obs)));
  std::size_t n_ma = static_cast<std::size_t>(std::llround(0.15 * static_cast<double>(n_obs)));
  if (n_obs >= 3) {
    n_oa = std::max<std::size_t>(n_oa, 1);
    n_ma = std::max<std::size_t>(n_ma, 1);
  }
  n_ma = std::min(n_ma, n_obs - std::min(n_obs, n_oa));
  n_oa = std::min(n_oa, n_obs);
  kinds.insert(kinds.end(), n_oa, EventKind::ObstructiveApnea);
  kinds.insert(kinds.end(), n_ma, EventKind::MixedApnea);
  kinds.insert(kinds.end(), n_obs - n_oa - n_ma, EventKind::ObstructiveHypopnea);
  kinds.insert(kinds.end(), n_central, EventKind::CentralApnea);
  std::shuffle(kinds.begin(), kinds.end(), rng);

  const double min_dur = std::max(10.0, 2.0 * cfg.baseline_breath_period_s() + 1.0);
  constexpr double edge_margin = 5.0;  // keep clear of Wake epochs
  constexpr double min_gap = 60.0;     // lets SpO2 recover between events

  std::vector<RespiratoryEvent> events;
  for (EventKind kind : kinds) {
    RespiratoryEvent ev;
    ev.kind = kind;
    switch (kind) {
      case EventKind::ObstructiveHypopnea:
        ev.duration_s = std::max(min_dur, uniform(rng, 12.0, 22.0));
        ev.desat_depth_pct = uniform(rng, 3.5, 6.0);
        break;
      case EventKind::CentralApnea:
        ev.duration_s = std::max(min_dur, uniform(rng, 10.0, 16.0));
        ev.desat_depth_pct = uniform(rng, 1.0, 4.0);
        break;
      default:
        ev.duration_s = std::max(min_dur, uniform(rng, 10.0, 18.0));
        ev.desat_depth_pct = uniform(rng, 4.0, 8.0);
        break;
    }
    bool placed = false;
    for (int attempt = 0; attempt < 5000 && !placed; ++attempt) {
      double u = uniform(rng, 0.0, tst_s);
      for (const auto& [a, b] : runs) {
        if (u >= b - a) {
          u -= b - a;
          continue;
        }
        const double start = std::round((a + u) * 10.0) / 10.0;
        if (start < a + edge_margin || start + ev.duration_s > b - edge_margin) break;
        const bool clear = std::none_of(events.begin(), events.end(), [&](const RespiratoryEvent& o) {
          return start < o.end_s() + min_gap && o.start_s < start + ev.duration_s + min_gap;
        });
        if (clear) {
          ev.start_s = start;
          placed = true;
        }
        break;
      }
    }
    if (!placed) throw ConfigError("sleep time too short to host the requested event density");
    events.push_back(ev);
  }
  std::sort(events.begin(), events.end(),
            [](const RespiratoryEvent& a, const RespiratoryEvent& b) { return a.start_s < b.start_s; });
  return events;
}

std::vector<double> chest_displacement(const Hypnogram& hyp, std::span<const RespiratoryEvent> events,
                                       const PhysioConfig& cfg, std::uint64_t seed) {
  hyp.validate();
  cfg.validate();
  const double fs = cfg.radar_fs_hz;
  const std::size_t n = n_samples(hyp, fs);
  const auto tr = make_trajectory(hyp, events, cfg, seed);
  const auto gates = event_gates(events, n, fs, cfg, seed);

  std::vector<double> d(n);
  double resp_phase = 0.0, card_phase = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    const double amp = at_time(tr.resp_amp_mm, t);
    d[i] = amp * (gates.flow[i] * std::sin(resp_phase) + gates.paradox[i] * std::sin(2.0 * resp_phase)) +
           cfg.cardiac_amp_mm * std::sin(card_phase);
    const double hr = at_time(tr.pulse_rate_bpm, t) + at_time(tr.rsa_bpm, t) * std::sin(resp_phase) +
                      at_time(tr.lf_bpm, t) * std::sin(kTwoPi * 0.1 * t + tr.lf_phase);
    resp_phase += kTwoPi * at_time(tr.resp_rate_hz, t) / fs;
    card_phase += kTwoPi * hr / 60.0 / fs;
  }
  add_movements(d, hyp, cfg, fs, seed);
  return d;
}

std::vector<std::complex<float>> displacement_to_iq(std::span<const double> displacement_mm,
                                                    const PhysioConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, kStreamRadarNoise));
  const double phi0 = uniform(rng, -std::numbers::pi, std::numbers::pi);
  const double k = 4.0 * std::numbers::pi / (cfg.radar_wavelength_m * 1000.0);
  const bool noisy = std::isfinite(cfg.radar_snr_db);
  const double sigma = noisy ? std::sqrt(0.5 * std::pow(10.0, -cfg.radar_snr_db / 10.0)) : 0.0;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::complex<float>> iq(displacement_mm.size());
  for (std::size_t i = 0; i < iq.size(); ++i) {
    std::complex<double> v = std::polar(1.0, phi0 + k * displacement_mm[i]);
    if (noisy) v += std::complex<double>(sigma * normal(rng), sigma * normal(rng));
    iq[i] = std::complex<float>(static_cast<float>(v.real()), static_cast<float>(v.imag()));
  }
  return iq;
}

std::vector<std::complex<float>> synthesize_radar(const Hypnogram& hyp, std::span<const RespiratoryEvent> events,
                                                  const PhysioConfig& cfg, std::uint64_t seed) {
  return displacement_to_iq(chest_displacement(hyp, events, cfg, seed), cfg, seed);
}

std::vector<double> render_pulse_wave(std::span<const double> rate_bpm, double fs) {
  std::vector<double> out(rate_bpm.size());
  double phase = 0.0;  // in cycles
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = pulse_template(phase - std::floor(phase));
    phase += rate_bpm[i] / 60.0 / fs;
  }
  return out;
}

PpgSignals synthesize_ppg(const Hypnogram& hyp, std::span<const RespiratoryEvent> events,
                          const PhysioConfig& cfg, std::uint64_t seed) {
  hyp.validate();
  cfg.validate();
  const auto tr = make_trajectory(hyp, events, cfg, seed);
  PpgSignals out;

  // Pulse waveform with respiratory-induced intensity variation.
  const double fs = cfg.ppg_fs_hz;
  const std::size_t n = n_samples(hyp, fs);
  std::vector<double> rate(n), resp(n);
  double resp_phase = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    resp[i] = std::sin(resp_phase);
    rate[i] = at_time(tr.pulse_rate_bpm, t) + at_time(tr.rsa_bpm, t) * resp[i] +
              at_time(tr.lf_bpm, t) * std::sin(kTwoPi * 0.1 * t + tr.lf_phase);
    resp_phase += kTwoPi * at_time(tr.resp_rate_hz, t) / fs;
  }
  out.ppg = render_pulse_wave(rate, fs);
  for (std::size_t i = 0; i < n; ++i) out.ppg[i] = out.ppg[i] * (1.0 + 0.05 * resp[i]) + 0.05 * resp[i];

  // SpO2: baseline wander minus the deepest active desaturation.
  const double fs2 = cfg.spo2_fs_hz;
  const std::size_t n2 = n_samples(hyp, fs2);
  std::mt19937_64 rng(mix_seed(seed, kStreamSpo2));
  const auto wander = ou_process(rng, static_cast<std::size_t>(std::ceil(hyp.duration_s())) + 2, 60.0);
  std::vector<double> dip(n2, 0.0);
  constexpr double fall_s = 4.0;
  for (const auto& ev : events) {
    const double t0 = ev.start_s + cfg.desat_lag_s;
    const double t1 = ev.end_s() + cfg.desat_lag_s;
    const auto lo = static_cast<std::size_t>(std::max(0.0, t0 * fs2));
    const auto hi = std::min(n2, static_cast<std::size_t>((t1 + 8.0 * cfg.desat_recovery_tau_s) * fs2) + 1);
    for (std::size_t i = lo; i < hi; ++i) {
      const double t = static_cast<double>(i) / fs2;
      double v;
      if (t < t0 + fall_s) {
        v = ev.desat_depth_pct * (0.5 - 0.5 * std::cos(std::numbers::pi * std::max(0.0, t - t0) / fall_s));
      } else if (t <= t1) {
        v = ev.desat_depth_pct;
      } else {
        v = ev.desat_depth_pct * std::exp(-(t - t1) / cfg.desat_recovery_tau_s);
      }
      dip[i] = std::max(dip[i], v);
    }
  }
  out.spo2.resize(n2);
  for (std::size_t i = 0; i < n2; ++i) {
    const double w = std::clamp(cfg.spo2_wander_pct * at_time(wander, static_cast<double>(i) / fs2),
                                -3.0 * cfg.spo2_wander_pct, 3.0 * cfg.spo2_wander_pct);
    out.spo2[i] = std::clamp(cfg.spo2_baseline_pct + w - dip[i], 70.0, 100.0);
  }
  return out;
}

void RecordBundle::validate() const {
  if (!(radar_fs_hz > 0.0) || !(ppg_fs_hz > 0.0) || !(spo2_fs_hz > 0.0)) {
    throw DataError("sample rates must be positive");
  }
  if (truth_hypnogram.stages.empty()) throw DataError("record has no hypnogram");
  const double dur = duration_s();
  const double radar = static_cast<double>(radar_iq.size()) / radar_fs_hz;
  const double ppg_d = static_cast<double>(ppg.size()) / ppg_fs_hz;
  const double spo2_d = static_cast<double>(spo2.size()) / spo2_fs_hz;
  for (double d : {radar, ppg_d, spo2_d}) {
    if (std::abs(d - dur) > 1.0) throw DataError("channel durations disagree by more than 1 s");
  }
  for (double v : spo2) {
    if (!(v >= 70.0 && v <= 100.0)) throw DataError("SpO2 value outside [70, 100]");
  }
}

RecordBundle simulate_record(const SubjectProfile& profile, double duration_h, const PhysioConfig& cfg) {
  profile.validate();
  cfg.validate();
  RecordBundle b;
  b.profile = profile;
  b.radar_wavelength_m = cfg.radar_wavelength_m;
  b.truth_hypnogram = generate_hypnogram(profile, duration_h);
  b.truth_events = plant_events(b.truth_hypnogram, profile, cfg);
  b.radar_iq = synthesize_radar(b.truth_hypnogram, b.truth_events, cfg, profile.seed);
  b.radar_fs_hz = cfg.radar_fs_hz;
  auto ppg = synthesize_ppg(b.truth_hypnogram, b.truth_events, cfg, profile.seed);
  b.ppg = std::move(ppg.ppg);
  b.ppg_fs_hz = cfg.ppg_fs_hz;
  b.spo2 = std::move(ppg.spo2);
  b.spo2_fs_hz = cfg.spo2_fs_hz;
  return b;
}

}  // namespace sleeprad::sim
