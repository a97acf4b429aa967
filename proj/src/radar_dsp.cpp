#include "sleeprad/radar_dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <stdexcept>

#include "sleeprad/error.hpp"
#include "sleeprad/kernels.hpp"
#include "sleeprad/signal.hpp"

namespace sleeprad::radar {
namespace {

void require_frames(const Framing& framing) {
  if (framing.n_frames == 0) throw std::invalid_argument("empty framing");
}

std::vector<double> frame_centers(const Framing& framing) {
  std::vector<double> c(framing.n_frames);
  for (std::size_t k = 0; k < framing.n_frames; ++k) c[k] = framing.center(k);
  return c;
}

}  // namespace

Displacement demodulate_phase(std::span<const std::complex<float>> iq, double fs, double wavelength_m,
                              const DspConfig& cfg) {
  if (iq.empty()) throw std::invalid_argument("empty IQ series");
  if (!(fs > 0.0) || !(wavelength_m > 0.0)) throw std::invalid_argument("invalid sample rate or wavelength");
  const std::size_t n = iq.size();
  std::vector<double> phase(n), mag(n);
  for (std::size_t i = 0; i < n; ++i) {
    phase[i] = std::atan2(static_cast<double>(iq[i].imag()), static_cast<double>(iq[i].real()));
    mag[i] = std::abs(std::complex<double>(iq[i]));
  }
  Displacement d;
  d.sample_rate_hz = fs;
  d.mm = signal::unwrap(phase);
  const double scale = wavelength_m * 1000.0 / (4.0 * std::numbers::pi);
  for (double& v : d.mm) v *= scale;
  signal::linear_detrend(d.mm);

  const double floor = cfg.noise_floor_rel * signal::percentile(mag, 50.0);
  d.low_confidence.resize(n);
  for (std::size_t i = 0; i < n; ++i) d.low_confidence[i] = mag[i] < floor ? 1 : 0;
  return d;
}

std::size_t select_range_bin(std::span<const std::vector<std::complex<float>>> bins) {
  if (bins.empty()) throw std::invalid_argument("no range bins");
  std::size_t best = 0;
  double best_var = -1.0;
  for (std::size_t b = 0; b < bins.size(); ++b) {
    if (bins[b].empty()) continue;
    std::vector<double> phase(bins[b].size());
    for (std::size_t i = 0; i < phase.size(); ++i) phase[i] = std::arg(std::complex<double>(bins[b][i]));
    const auto u = signal::unwrap(phase);
    double mean = 0.0;
    for (double v : u) mean += v;
    mean /= static_cast<double>(u.size());
    double var = 0.0;
    for (double v : u) var += (v - mean) * (v - mean);
    if (var > best_var) {
      best_var = var;
      best = b;
    }
  }
  return best;
}

std::vector<double> movement_power(const Displacement& d, const Framing& framing, const DspConfig& cfg) {
  require_frames(framing);
  const double hp = cfg.movement_highpass_hz;
  auto x = signal::spectral_filter(d.mm, d.sample_rate_hz,
                                   [hp](double f) { return signal::butterworth_gain(f, hp, 0.0, 4); });
  for (double& v : x) v *= v;
  return kernels::frame_mean(x, d.sample_rate_hz, framing);
}

std::vector<double> breathing_effort(const Displacement& d, const Framing& framing, const DspConfig& cfg) {
  require_frames(framing);
  const double lo = cfg.effort_low_hz, hi = cfg.effort_high_hz;
  const auto env = signal::analytic_envelope(d.mm, d.sample_rate_hz,
                                             [lo, hi](double f) { return signal::butterworth_gain(f, lo, hi, 2); });
  return kernels::frame_mean(env, d.sample_rate_hz, framing);
}

double DopplerMatrix::peak_magnitude(std::size_t frame, double lo_hz, double hi_hz) const {
  const auto b0 = static_cast<std::size_t>(std::ceil(lo_hz / bin_hz));
  const auto b1 = std::min(n_bins() - 1, static_cast<std::size_t>(std::floor(hi_hz / bin_hz)));
  double best = 0.0;
  for (std::size_t b = b0; b <= b1; ++b) best = std::max(best, magnitude(frame, b));
  return best;
}

double DopplerMatrix::peak_hz(std::size_t frame, double lo_hz, double hi_hz) const {
  const auto b0 = static_cast<std::size_t>(std::ceil(lo_hz / bin_hz));
  const auto b1 = std::min(n_bins() - 1, static_cast<std::size_t>(std::floor(hi_hz / bin_hz)));
  std::size_t arg = b0;
  for (std::size_t b = b0; b <= b1; ++b) {
    if (magnitude(frame, b) > magnitude(frame, arg)) arg = b;
  }
  if (magnitude(frame, arg) < noise_mm) return 0.0;
  double offset = 0.0;
  if (arg > 0 && arg + 1 < n_bins()) {
    const double a = magnitude(frame, arg - 1), b = magnitude(frame, arg), c = magnitude(frame, arg + 1);
    const double denom = a - 2.0 * b + c;
    if (denom < 0.0) offset = std::clamp(0.5 * (a - c) / denom, -0.5, 0.5);
  }
  return (static_cast<double>(arg) + offset) * bin_hz;
}

double DopplerMatrix::magnitude_at(std::size_t frame, double f_hz) const {
  const double pos = std::clamp(f_hz / bin_hz, 0.0, static_cast<double>(n_bins() - 1));
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, n_bins() - 1);
  const double frac = pos - static_cast<double>(lo);
  return magnitude(frame, lo) * (1.0 - frac) + magnitude(frame, hi) * frac;
}

DopplerMatrix breathing_doppler(const Displacement& d, const Framing& framing, const DspConfig& cfg) {
  require_frames(framing);
  const auto factor = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(d.sample_rate_hz / cfg.doppler_fs_hz)));
  const auto x = signal::decimate(d.mm, d.sample_rate_hz, factor);
  kernels::SpectrumSpec spec;
  spec.fs = d.sample_rate_hz / static_cast<double>(factor);
  spec.window_s = cfg.doppler_window_s;
  spec.bin_hz = cfg.doppler_bin_hz;
  spec.n_bins = static_cast<std::size_t>(std::floor(cfg.doppler_max_hz / cfg.doppler_bin_hz + 1e-9)) + 1;
  const auto centers = frame_centers(framing);
  DopplerMatrix out;
  out.magnitude = kernels::short_time_spectrum(x, centers, spec);
  out.bin_hz = cfg.doppler_bin_hz;
  out.noise_mm = cfg.doppler_noise_mm;
  return out;
}

double estimate_breath_period(const DopplerMatrix& doppler) {
  const std::size_t n = doppler.magnitude.rows;
  std::vector<double> peak_mag(n, 0.0), peak_f(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    peak_f[k] = doppler.peak_hz(k);
    peak_mag[k] = doppler.peak_magnitude(k);
  }
  std::vector<double> audible;
  for (std::size_t k = 0; k < n; ++k) {
    if (peak_f[k] > 0.0) audible.push_back(peak_mag[k]);
  }
  if (audible.empty()) throw DataError("no respiratory signal");
  // High confidence: a clear peak at least half as strong as the typical one.
  const double floor = 0.5 * signal::percentile(audible, 50.0);
  std::vector<double> periods;
  for (std::size_t k = 0; k < n; ++k) {
    if (peak_f[k] > 0.0 && peak_mag[k] >= floor) periods.push_back(1.0 / peak_f[k]);
  }
  return signal::percentile(periods, 50.0);
}

FeatureFrameSeries extract_features(std::span<const std::complex<float>> iq, double fs, double wavelength_m,
                                    const DspConfig& cfg) {
  const auto disp = demodulate_phase(iq, fs, wavelength_m, cfg);
  FeatureFrameSeries f;
  f.framing = make_framing(static_cast<double>(iq.size()) / fs, cfg.frame_len_s, cfg.hop_s);
  f.movement_power = movement_power(disp, f.framing, cfg);
  f.effort = breathing_effort(disp, f.framing, cfg);
  f.doppler = breathing_doppler(disp, f.framing, cfg);
  std::vector<double> lowc(disp.low_confidence.begin(), disp.low_confidence.end());
  const auto frac = kernels::frame_mean(lowc, fs, f.framing);
  f.low_confidence.resize(frac.size());
  for (std::size_t k = 0; k < frac.size(); ++k) f.low_confidence[k] = frac[k] > 0.5 ? 1 : 0;
  return f;
}

RespiratoryRatios respiratory_ratios(const FeatureFrameSeries& f, const DspConfig& cfg) {
  const std::size_t n = f.framing.n_frames;
  RespiratoryRatios r;
  r.peak_hz.resize(n);
  for (std::size_t k = 0; k < n; ++k) r.peak_hz[k] = f.doppler.peak_hz(k);
  // Silent frames carry no rate information; let the median skip over them by
  // substituting the last audible estimate.
  std::vector<double> filled = r.peak_hz;
  double last = 0.0;
  for (double& v : filled) {
    if (v > 0.0) last = v; else v = last;
  }
  r.local_rate_hz = signal::rolling_median(filled, cfg.baseline_half_frames);

  std::vector<double> flow(n);
  for (std::size_t k = 0; k < n; ++k) flow[k] = f.doppler.magnitude_at(k, r.local_rate_hz[k]);
  const auto flow_base = signal::rolling_median(flow, cfg.baseline_half_frames);
  const auto effort_base = signal::rolling_median(f.effort, cfg.baseline_half_frames);
  r.flow_ratio.resize(n);
  r.effort_ratio.resize(n);
  constexpr double tiny = 1e-9;
  for (std::size_t k = 0; k < n; ++k) {
    r.flow_ratio[k] = flow[k] / std::max(flow_base[k], tiny);
    r.effort_ratio[k] = f.effort[k] / std::max(effort_base[k], tiny);
  }
  return r;
}

void write_debug_csv(const FeatureFrameSeries& f, std::ostream& os) {
  os << "time_s,movement_power,effort,low_confidence";
  for (std::size_t b = 0; b < f.doppler.n_bins(); ++b) os << ",doppler_" << static_cast<double>(b) * f.doppler.bin_hz;
  os << '\n';
  for (std::size_t k = 0; k < f.framing.n_frames; ++k) {
    os << f.framing.center(k) << ',' << f.movement_power[k] << ',' << f.effort[k] << ','
       << static_cast<int>(f.low_confidence[k]);
    for (std::size_t b = 0; b < f.doppler.n_bins(); ++b) os << ',' << f.doppler.magnitude(k, b);
    os << '\n';
  }
}

}  // namespace sleeprad::radar
