#include "sleeprad/ppg_features.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>
#include <ostream>
#include <stdexcept>

#include "sleeprad/kernels.hpp"
#include "sleeprad/signal.hpp"

namespace sleeprad::ppg {
namespace {

constexpr double kMinIbiS = 60.0 / 220.0;
constexpr double kMaxIbiS = 60.0 / 30.0;
constexpr double kTachoFs = 4.0;

// Running max (or min, with std::greater) over [i - half, i + half].
template <class Better>
std::vector<double> sliding_extreme(std::span<const double> x, std::size_t half, Better better) {
  const std::size_t n = x.size();
  std::vector<double> out(n);
  std::deque<std::size_t> dq;
  std::size_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t hi = std::min(n - 1, i + half);
    for (; next <= hi; ++next) {
      while (!dq.empty() && !better(x[dq.back()], x[next])) dq.pop_back();
      dq.push_back(next);
    }
    while (dq.front() + half < i) dq.pop_front();
    out[i] = x[dq.front()];
  }
  return out;
}

bool in_masked(const BeatSeries& beats, double a, double b) {
  for (const auto& [s, e] : beats.masked) {
    if (s < b && a < e) return true;
  }
  return false;
}

struct Ibi {
  double time_s;  // time of the closing beat
  double value_s;
};

std::vector<Ibi> valid_intervals(const BeatSeries& beats) {
  std::vector<Ibi> out;
  for (std::size_t i = 1; i < beats.times_s.size(); ++i) {
    const double a = beats.times_s[i - 1], b = beats.times_s[i];
    const double ibi = b - a;
    if (ibi < kMinIbiS || ibi > kMaxIbiS) continue;
    if (in_masked(beats, a, b)) continue;
    out.push_back({b, ibi});
  }
  return out;
}

}  // namespace

BeatSeries detect_pulses(std::span<const double> ppg, double fs) {
  if (fs < 25.0) throw std::invalid_argument("PPG sample rate must be at least 25 Hz");
  BeatSeries out;
  if (ppg.empty()) return out;
  const auto x = signal::spectral_filter(ppg, fs, [](double f) { return signal::butterworth_gain(f, 0.5, 8.0, 2); });
  const auto half = static_cast<std::size_t>(std::llround(1.5 * fs));
  const auto hi = sliding_extreme(x, half, std::greater_equal<>());
  const auto lo = sliding_extreme(x, half, std::less_equal<>());

  std::vector<double> range(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) range[i] = hi[i] - lo[i];
  const double amp_floor = std::max(1e-9, 0.1 * signal::percentile(range, 50.0));

  // Segments without usable pulsatile amplitude.
  std::size_t i = 0;
  while (i < x.size()) {
    if (range[i] >= amp_floor) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < x.size() && range[j] < amp_floor) ++j;
    out.masked.emplace_back(static_cast<double>(i) / fs, static_cast<double>(j) / fs);
    i = j;
  }

  const double refractory = 0.25;
  double last_t = -1e300, last_v = 0.0;
  for (std::size_t k = 1; k + 1 < x.size(); ++k) {
    if (range[k] < amp_floor) continue;
    if (!(x[k] > x[k - 1] && x[k] >= x[k + 1])) continue;
    if (x[k] < 0.5 * hi[k] || x[k] <= 0.0) continue;
    // Parabolic refinement of the peak position.
    const double a = x[k - 1], b = x[k], c = x[k + 1];
    const double denom = a - 2.0 * b + c;
    const double off = denom < 0.0 ? std::clamp(0.5 * (a - c) / denom, -0.5, 0.5) : 0.0;
    const double t = (static_cast<double>(k) + off) / fs;
    if (t - last_t < refractory) {
      if (b > last_v) {
        out.times_s.back() = t;
        last_t = t;
        last_v = b;
      }
      continue;
    }
    out.times_s.push_back(t);
    last_t = t;
    last_v = b;
  }
  return out;
}

TimeFeatures time_features(const BeatSeries& beats, const Framing& framing, double context_s) {
  const std::size_t n = framing.n_frames;
  TimeFeatures tf;
  tf.rate_bpm.assign(n, 0.0);
  tf.sdnn_ms.assign(n, 0.0);
  tf.rmssd_ms.assign(n, 0.0);
  tf.mask.assign(n, 1);
  const auto ibis = valid_intervals(beats);
  const double half = 0.5 * context_s;
  const auto& bt = beats.times_s;

  std::size_t ib_lo = 0, ib_hi = 0, bt_lo = 0, bt_hi = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double c = framing.center(k);
    while (bt_lo < bt.size() && bt[bt_lo] < c - half) ++bt_lo;
    while (bt_hi < bt.size() && bt[bt_hi] <= c + half) ++bt_hi;
    // Intervals whose both beats fall inside the window.
    while (ib_lo < ibis.size() && ibis[ib_lo].time_s - ibis[ib_lo].value_s < c - half) ++ib_lo;
    while (ib_hi < ibis.size() && ibis[ib_hi].time_s <= c + half) ++ib_hi;
    ib_hi = std::max(ib_hi, ib_lo);
    if (bt_hi - bt_lo < 3 || ib_hi - ib_lo < 2) continue;

    const std::size_t m = ib_hi - ib_lo;
    double mean = 0.0;
    for (std::size_t j = ib_lo; j < ib_hi; ++j) mean += ibis[j].value_s;
    mean /= static_cast<double>(m);
    double ss = 0.0, sd2 = 0.0;
    std::size_t nd = 0;
    for (std::size_t j = ib_lo; j < ib_hi; ++j) {
      ss += (ibis[j].value_s - mean) * (ibis[j].value_s - mean);
      // Successive differences only across adjacent beats.
      if (j > ib_lo && std::abs(ibis[j].time_s - ibis[j].value_s - ibis[j - 1].time_s) < 1e-9) {
        const double d = ibis[j].value_s - ibis[j - 1].value_s;
        sd2 += d * d;
        ++nd;
      }
    }
    const double rate = 60.0 / mean;
    if (rate < 30.0 || rate > 220.0) continue;
    tf.rate_bpm[k] = rate;
    tf.sdnn_ms[k] = 1000.0 * std::sqrt(ss / static_cast<double>(m - 1));
    tf.rmssd_ms[k] = nd > 0 ? 1000.0 * std::sqrt(sd2 / static_cast<double>(nd)) : 0.0;
    tf.mask[k] = 0;
  }
  return tf;
}

FreqFeatures freq_features(const BeatSeries& beats, const Framing& framing, double window_s,
                           std::size_t stride_frames) {
  if (!(window_s > 0.0) || stride_frames == 0) throw std::invalid_argument("invalid spectral window");
  const std::size_t n = framing.n_frames;
  FreqFeatures ff;
  ff.lf_power.assign(n, 0.0);
  ff.hf_power.assign(n, 0.0);
  ff.lf_hf_ratio.assign(n, 0.0);
  ff.ratio_mask.assign(n, 1);
  if (n == 0) return ff;

  // Tachogram on a uniform 4 Hz grid; samples farther than 3 s from a
  // measured interval are marked invalid.
  const auto ibis = valid_intervals(beats);
  const double total_s = framing.start(n - 1) + framing.frame_len_s;
  const auto n_grid = static_cast<std::size_t>(std::floor(total_s * kTachoFs)) + 1;
  std::vector<double> tacho(n_grid, 0.0);
  std::vector<std::uint8_t> valid(n_grid, 0);
  if (!ibis.empty()) {
    std::size_t j = 0;
    for (std::size_t g = 0; g < n_grid; ++g) {
      const double t = static_cast<double>(g) / kTachoFs;
      while (j + 1 < ibis.size() && ibis[j + 1].time_s <= t) ++j;
      if (t <= ibis.front().time_s) {
        tacho[g] = ibis.front().value_s;
        valid[g] = ibis.front().time_s - t < 3.0;
      } else if (j + 1 >= ibis.size()) {
        tacho[g] = ibis.back().value_s;
        valid[g] = t - ibis.back().time_s < 3.0;
      } else {
        const auto& a = ibis[j];
        const auto& b = ibis[j + 1];
        const double w = (t - a.time_s) / (b.time_s - a.time_s);
        tacho[g] = a.value_s + w * (b.value_s - a.value_s);
        valid[g] = b.time_s - a.time_s < 3.0;
      }
      tacho[g] *= 1000.0;
    }
  }

  const auto win = static_cast<std::size_t>(std::llround(window_s * kTachoFs));
  const std::size_t wlen = std::min(win, n_grid);
  std::vector<double> hann(wlen);
  double wss = 0.0;
  for (std::size_t i = 0; i < wlen; ++i) {
    hann[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(wlen));
    wss += hann[i] * hann[i];
  }
  const double df = kTachoFs / static_cast<double>(wlen);
  const auto j_lo = static_cast<std::size_t>(std::ceil(0.04 / df - 1e-9));
  const auto j_mid = static_cast<std::size_t>(std::ceil(0.15 / df - 1e-9));
  const auto j_hi = static_cast<std::size_t>(std::floor(0.40 / df + 1e-9));

  const std::size_t n_eval = (n + stride_frames - 1) / stride_frames;
  std::vector<double> lf(n_eval, 0.0), hf(n_eval, 0.0);
  std::vector<std::uint8_t> ok(n_eval, 0);

#pragma omp parallel
  {
    std::vector<double> seg(wlen);
#pragma omp for schedule(static)
    for (std::ptrdiff_t e = 0; e < static_cast<std::ptrdiff_t>(n_eval); ++e) {
      const double c = framing.center(static_cast<std::size_t>(e) * stride_frames);
      const auto g0 = static_cast<std::ptrdiff_t>(std::llround((c - 0.5 * window_s) * kTachoFs));
      const auto start = static_cast<std::size_t>(
          std::clamp<std::ptrdiff_t>(g0, 0, static_cast<std::ptrdiff_t>(n_grid - wlen)));
      std::size_t n_valid = 0;
      for (std::size_t i = 0; i < wlen; ++i) {
        seg[i] = tacho[start + i];
        n_valid += valid[start + i];
      }
      if (wlen < 16 || n_valid * 5 < wlen * 4) continue;
      signal::linear_detrend(seg);
      double lf_sum = 0.0, hf_sum = 0.0;
      for (std::size_t j = j_lo; j <= j_hi; ++j) {
        double re = 0.0, im = 0.0;
        const double omega = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(wlen);
        for (std::size_t i = 0; i < wlen; ++i) {
          const double v = seg[i] * hann[i];
          re += v * std::cos(omega * static_cast<double>(i));
          im -= v * std::sin(omega * static_cast<double>(i));
        }
        const double psd = 2.0 * (re * re + im * im) / (kTachoFs * wss);
        (j < j_mid ? lf_sum : hf_sum) += psd * df;
      }
      lf[e] = lf_sum;
      hf[e] = hf_sum;
      ok[e] = 1;
    }
  }

  constexpr double kHfFloorMs2 = 1e-3;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t e = std::min(n_eval - 1, (k + stride_frames / 2) / stride_frames);
    if (!ok[e]) continue;
    ff.lf_power[k] = lf[e];
    ff.hf_power[k] = hf[e];
    if (hf[e] > kHfFloorMs2) {
      ff.lf_hf_ratio[k] = lf[e] / hf[e];
      ff.ratio_mask[k] = 0;
    }
  }
  return ff;
}

Spo2Analysis spo2_analysis(std::span<const double> spo2, double fs, const Framing& framing, const Spo2Config& cfg) {
  if (!(fs > 0.0)) throw std::invalid_argument("SpO2 sample rate must be positive");
  if (spo2.empty()) throw std::invalid_argument("empty SpO2 series");
  const std::size_t n = spo2.size();
  const auto len = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.baseline_window_s * fs)));
  const auto base = signal::trailing_percentile(spo2, len, cfg.baseline_percentile);

  struct Run {
    std::size_t lo, hi;  // [lo, hi)
    double depth;
  };
  std::vector<Run> runs;
  for (std::size_t i = 0; i < n;) {
    if (base[i] - spo2[i] < cfg.drop_pct - 1e-9) {
      ++i;
      continue;
    }
    Run r{i, i, 0.0};
    while (r.hi < n && base[r.hi] - spo2[r.hi] >= cfg.drop_pct - 1e-9) {
      r.depth = std::max(r.depth, base[r.hi] - spo2[r.hi]);
      ++r.hi;
    }
    if (!runs.empty() && static_cast<double>(r.lo - runs.back().hi) / fs < cfg.merge_gap_s) {
      runs.back().hi = r.hi;
      runs.back().depth = std::max(runs.back().depth, r.depth);
    } else {
      runs.push_back(r);
    }
    i = r.hi;
  }

  Spo2Analysis out;
  for (const auto& r : runs) {
    const double dur = static_cast<double>(r.hi - r.lo) / fs;
    if (dur + 1e-9 < cfg.min_duration_s) continue;
    out.desats.push_back({static_cast<double>(r.lo) / fs, dur, r.depth});
  }
  const double hours = static_cast<double>(n) / fs / 3600.0;
  out.odi_per_h = static_cast<double>(out.desats.size()) / hours;

  const std::size_t nf = framing.n_frames;
  out.mean_pct.assign(nf, 0.0);
  out.min_pct.assign(nf, 0.0);
  out.in_desat.assign(nf, 0);
  for (std::size_t k = 0; k < nf; ++k) {
    const double a = framing.start(k), b = a + framing.frame_len_s;
    auto lo = static_cast<std::size_t>(std::ceil(a * fs - 1e-9));
    auto hi = static_cast<std::size_t>(std::ceil(b * fs - 1e-9));
    lo = std::min(lo, n);
    hi = std::min(hi, n);
    if (lo >= hi) {
      const auto near = std::min(n - 1, static_cast<std::size_t>(std::llround(framing.center(k) * fs)));
      lo = near;
      hi = near + 1;
    }
    double sum = 0.0, mn = 1e300;
    for (std::size_t i = lo; i < hi; ++i) {
      sum += spo2[i];
      mn = std::min(mn, spo2[i]);
    }
    out.mean_pct[k] = sum / static_cast<double>(hi - lo);
    out.min_pct[k] = mn;
  }
  for (const auto& d : out.desats) {
    for (std::size_t k = 0; k < nf; ++k) {
      const double c = framing.center(k);
      if (c >= d.start_s && c < d.end_s()) out.in_desat[k] = 1;
    }
  }
  return out;
}

Matrix tf_spectrum(std::span<const double> ppg, double fs, const Framing& framing) {
  const auto factor = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fs / 10.0)));
  const auto x = signal::decimate(ppg, fs, factor);
  kernels::SpectrumSpec spec;
  spec.fs = fs / static_cast<double>(factor);
  spec.window_s = 8.0;
  spec.bin_hz = 0.25;
  spec.n_bins = 15;
  std::vector<double> centers(framing.n_frames);
  for (std::size_t k = 0; k < framing.n_frames; ++k) centers[k] = framing.center(k);
  return kernels::short_time_spectrum(x, centers, spec);
}

PpgFeatureSeries extract_features(std::span<const double> ppg, double ppg_fs, std::span<const double> spo2,
                                  double spo2_fs, const Framing& framing) {
  PpgFeatureSeries f;
  f.framing = framing;
  const auto beats = detect_pulses(ppg, ppg_fs);
  auto tfe = time_features(beats, framing);
  f.pulse_rate_bpm = std::move(tfe.rate_bpm);
  f.prv_sdnn_ms = std::move(tfe.sdnn_ms);
  f.prv_rmssd_ms = std::move(tfe.rmssd_ms);
  f.rate_mask = std::move(tfe.mask);
  auto ffe = freq_features(beats, framing);
  f.lf_power = std::move(ffe.lf_power);
  f.hf_power = std::move(ffe.hf_power);
  f.lf_hf_ratio = std::move(ffe.lf_hf_ratio);
  f.ratio_mask = std::move(ffe.ratio_mask);
  f.tf_spectrum = tf_spectrum(ppg, ppg_fs, framing);
  auto s = spo2_analysis(spo2, spo2_fs, framing);
  f.spo2_mean_pct = std::move(s.mean_pct);
  f.spo2_min_pct = std::move(s.min_pct);
  f.in_desat = std::move(s.in_desat);
  f.desats = std::move(s.desats);
  f.odi_per_h = s.odi_per_h;
  return f;
}

void write_csv(const PpgFeatureSeries& f, std::ostream& os) {
  os << "time_s,pulse_rate_bpm,prv_sdnn_ms,prv_rmssd_ms,rate_mask,lf_power,hf_power,lf_hf_ratio,ratio_mask,"
        "spo2_mean_pct,spo2_min_pct,in_desat";
  for (std::size_t b = 0; b < f.tf_spectrum.cols; ++b) os << ",tf_" << 0.25 * static_cast<double>(b);
  os << '\n';
  for (std::size_t k = 0; k < f.framing.n_frames; ++k) {
    os << f.framing.center(k) << ',' << f.pulse_rate_bpm[k] << ',' << f.prv_sdnn_ms[k] << ',' << f.prv_rmssd_ms[k]
       << ',' << int(f.rate_mask[k]) << ',' << f.lf_power[k] << ',' << f.hf_power[k] << ',' << f.lf_hf_ratio[k]
       << ',' << int(f.ratio_mask[k]) << ',' << f.spo2_mean_pct[k] << ',' << f.spo2_min_pct[k] << ','
       << int(f.in_desat[k]);
    for (std::size_t b = 0; b < f.tf_spectrum.cols; ++b) os << ',' << f.tf_spectrum(k, b);
    os << '\n';
  }
}

}  // namespace sleeprad::ppg
