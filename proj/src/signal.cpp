#include "sleeprad/signal.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>

namespace sleeprad::signal {
namespace {

// FFTW's planner is not re-entrant; execution with the planned buffers is.
std::mutex g_planner_mutex;

template <typename T>
struct FftwFree {
  void operator()(T* p) const { fftw_free(p); }
};
template <typename T>
using FftwBuffer = std::unique_ptr<T, FftwFree<T>>;

struct PlanDeleter {
  void operator()(fftw_plan_s* p) const {
    std::lock_guard lock(g_planner_mutex);
    fftw_destroy_plan(p);
  }
};
using Plan = std::unique_ptr<fftw_plan_s, PlanDeleter>;

// Forward transform of a real series, frequency-domain multiply, inverse to a
// complex series. `analytic` keeps only positive frequencies (doubled).
std::vector<std::complex<double>> filter_complex(std::span<const double> x, double fs,
                                                 const std::function<double(double)>& gain,
                                                 bool analytic) {
  const std::size_t n = x.size();
  if (n == 0) return {};
  FftwBuffer<fftw_complex> buf(fftw_alloc_complex(n));
  Plan fwd, inv;
  {
    std::lock_guard lock(g_planner_mutex);
    fwd.reset(fftw_plan_dft_1d(static_cast<int>(n), buf.get(), buf.get(), FFTW_FORWARD,
                               FFTW_ESTIMATE));
    inv.reset(fftw_plan_dft_1d(static_cast<int>(n), buf.get(), buf.get(), FFTW_BACKWARD,
                               FFTW_ESTIMATE));
  }
  if (!fwd || !inv) throw std::runtime_error("fftw planning failed");
  for (std::size_t i = 0; i < n; ++i) {
    buf.get()[i][0] = x[i];
    buf.get()[i][1] = 0.0;
  }
  fftw_execute(fwd.get());
  const double df = fs / static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    const bool negative = k > n / 2 || (k == n / 2 && n % 2 == 0 && analytic);
    const double f = negative ? static_cast<double>(n - k) * df : static_cast<double>(k) * df;
    double g = gain(f);
    if (analytic) g = negative ? 0.0 : (k == 0 ? g : 2.0 * g);
    buf.get()[k][0] *= g;
    buf.get()[k][1] *= g;
  }
  fftw_execute(inv.get());
  std::vector<std::complex<double>> out(n);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = {buf.get()[i][0] * scale, buf.get()[i][1] * scale};
  }
  return out;
}

}  // namespace

double butterworth_gain(double f_hz, double lo_hz, double hi_hz, int order) {
  double g = 1.0;
  const int p = 2 * order;
  if (lo_hz > 0.0) {
    if (f_hz <= 0.0) return 0.0;
    g /= std::sqrt(1.0 + std::pow(lo_hz / f_hz, p));
  }
  if (hi_hz > 0.0) g /= std::sqrt(1.0 + std::pow(f_hz / hi_hz, p));
  return g;
}

std::vector<double> spectral_filter(std::span<const double> x, double fs,
                                    const std::function<double(double)>& gain) {
  auto c = filter_complex(x, fs, gain, false);
  std::vector<double> out(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) out[i] = c[i].real();
  return out;
}

std::vector<double> analytic_envelope(std::span<const double> x, double fs,
                                      const std::function<double(double)>& gain) {
  auto c = filter_complex(x, fs, gain, true);
  std::vector<double> out(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) out[i] = std::abs(c[i]);
  return out;
}

void linear_detrend(std::vector<double>& x) {
  const std::size_t n = x.size();
  if (n < 2) {
    if (n == 1) x[0] = 0.0;
    return;
  }
  const double tm = 0.5 * static_cast<double>(n - 1);
  double sxy = 0.0, sxx = 0.0, mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double dt = static_cast<double>(i) - tm;
    sxy += dt * (x[i] - mean);
    sxx += dt * dt;
  }
  const double slope = sxy / sxx;
  for (std::size_t i = 0; i < n; ++i) x[i] -= mean + slope * (static_cast<double>(i) - tm);
}

std::vector<double> unwrap(std::span<const double> phase) {
  std::vector<double> out(phase.begin(), phase.end());
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double offset = 0.0;
  for (std::size_t i = 1; i < phase.size(); ++i) {
    const double d = phase[i] - phase[i - 1];
    if (d > std::numbers::pi) {
      offset -= two_pi;
    } else if (d < -std::numbers::pi) {
      offset += two_pi;
    }
    out[i] = phase[i] + offset;
  }
  return out;
}

std::vector<double> rolling_median(std::span<const double> x, std::size_t half) {
  const std::size_t n = x.size();
  std::vector<double> out(n);
  std::vector<double> win;
  win.reserve(2 * half + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i > half ? i - half : 0;
    const std::size_t hi = std::min(n, i + half + 1);
    win.assign(x.begin() + static_cast<std::ptrdiff_t>(lo), x.begin() + static_cast<std::ptrdiff_t>(hi));
    const std::size_t m = win.size() / 2;
    std::nth_element(win.begin(), win.begin() + static_cast<std::ptrdiff_t>(m), win.end());
    double med = win[m];
    if (win.size() % 2 == 0) {
      const double lower = *std::max_element(win.begin(), win.begin() + static_cast<std::ptrdiff_t>(m));
      med = 0.5 * (med + lower);
    }
    out[i] = med;
  }
  return out;
}

double percentile(std::vector<double> v, double pct) {
  if (v.empty()) throw std::invalid_argument("percentile of empty sample");
  std::sort(v.begin(), v.end());
  const double pos = pct / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

std::vector<double> trailing_percentile(std::span<const double> x, std::size_t len, double pct) {
  const std::size_t n = x.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (i == 0) {
      out[i] = x[0];
      continue;
    }
    const std::size_t lo = i > len ? i - len : 0;
    out[i] = percentile(std::vector<double>(x.begin() + static_cast<std::ptrdiff_t>(lo),
                                            x.begin() + static_cast<std::ptrdiff_t>(i)),
                        pct);
  }
  return out;
}

std::vector<double> decimate(std::span<const double> x, double fs, std::size_t factor) {
  if (factor == 0) throw std::invalid_argument("decimation factor must be positive");
  if (factor == 1) return {x.begin(), x.end()};
  const double cutoff = 0.4 * fs / static_cast<double>(factor);
  auto lp = spectral_filter(x, fs, [cutoff](double f) { return butterworth_gain(f, 0.0, cutoff, 6); });
  std::vector<double> out;
  out.reserve(x.size() / factor + 1);
  for (std::size_t i = 0; i < lp.size(); i += factor) out.push_back(lp[i]);
  return out;
}

}  // namespace sleeprad::signal
