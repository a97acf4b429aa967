#include "sleeprad/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>

namespace sleeprad::kernels {
namespace {

std::size_t window_samples(const SpectrumSpec& spec) {
  auto n = static_cast<std::size_t>(std::lround(spec.window_s * spec.fs));
  if (n < 2) throw std::invalid_argument("spectrum window shorter than two samples");
  return n;
}

// Sample range [lo, hi) of frame k; clipped to the record.
std::pair<std::size_t, std::size_t> frame_range(const Framing& framing, std::size_t k, double fs,
                                                std::size_t n) {
  const auto lo = static_cast<std::size_t>(std::llround(framing.start(k) * fs));
  const auto hi = static_cast<std::size_t>(std::llround((framing.start(k) + framing.frame_len_s) * fs));
  return {std::min(lo, n), std::min(std::max(hi, lo + 1), n)};
}

void check_conv(const Matrix& in, std::span<const double> weights, std::span<const double> bias,
                std::size_t out_channels, std::size_t kernel) {
  if (kernel == 0 || out_channels == 0) throw std::invalid_argument("conv1d: empty kernel");
  if (weights.size() != out_channels * in.cols * kernel || bias.size() != out_channels) {
    throw std::invalid_argument("conv1d: weight shape mismatch");
  }
}

}  // namespace

Matrix short_time_spectrum(std::span<const double> x, std::span<const double> centers_s,
                           const SpectrumSpec& spec) {
  const std::size_t nw = window_samples(spec);
  const std::size_t nb = spec.n_bins;
  // Hann-weighted twiddle tables, bins x window.
  std::vector<double> win(nw), cos_t(nb * nw), sin_t(nb * nw);
  double wsum = 0.0;
  for (std::size_t i = 0; i < nw; ++i) {
    win[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(nw));
    wsum += win[i];
  }
  for (std::size_t b = 0; b < nb; ++b) {
    const double w = 2.0 * std::numbers::pi * spec.bin_hz * static_cast<double>(b) / spec.fs;
    for (std::size_t i = 0; i < nw; ++i) {
      cos_t[b * nw + i] = win[i] * std::cos(w * static_cast<double>(i));
      sin_t[b * nw + i] = win[i] * std::sin(w * static_cast<double>(i));
    }
  }
  const double scale = 2.0 / wsum;
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  const auto half = static_cast<std::ptrdiff_t>(nw / 2);
  Matrix out(centers_s.size(), nb);

#pragma omp parallel
  {
    std::vector<double> seg(nw);
#pragma omp for schedule(static)
    for (std::ptrdiff_t f = 0; f < static_cast<std::ptrdiff_t>(centers_s.size()); ++f) {
      const std::ptrdiff_t c = std::llround(centers_s[static_cast<std::size_t>(f)] * spec.fs);
      const std::ptrdiff_t first = c - half;
      double mean = 0.0;
      std::size_t valid = 0;
      for (std::size_t i = 0; i < nw; ++i) {
        const std::ptrdiff_t j = first + static_cast<std::ptrdiff_t>(i);
        if (j >= 0 && j < n) {
          mean += x[static_cast<std::size_t>(j)];
          ++valid;
        }
      }
      mean = valid ? mean / static_cast<double>(valid) : 0.0;
      for (std::size_t i = 0; i < nw; ++i) {
        const std::ptrdiff_t j = first + static_cast<std::ptrdiff_t>(i);
        seg[i] = (j >= 0 && j < n) ? x[static_cast<std::size_t>(j)] - mean : 0.0;
      }
      double* row = out.row(static_cast<std::size_t>(f));
      for (std::size_t b = 0; b < nb; ++b) {
        const double* ct = &cos_t[b * nw];
        const double* st = &sin_t[b * nw];
        double re = 0.0, im = 0.0;
        for (std::size_t i = 0; i < nw; ++i) {
          re += ct[i] * seg[i];
          im += st[i] * seg[i];
        }
        row[b] = scale * std::sqrt(re * re + im * im);
      }
    }
  }
  return out;
}

std::vector<double> frame_mean(std::span<const double> x, double fs, const Framing& framing) {
  std::vector<double> out(framing.n_frames, 0.0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(framing.n_frames); ++k) {
    const auto [lo, hi] = frame_range(framing, static_cast<std::size_t>(k), fs, x.size());
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += x[i];
    out[static_cast<std::size_t>(k)] = hi > lo ? s / static_cast<double>(hi - lo) : 0.0;
  }
  return out;
}

Matrix conv1d_same(const Matrix& in, std::span<const double> weights, std::span<const double> bias,
                   std::size_t out_channels, std::size_t kernel) {
  check_conv(in, weights, bias, out_channels, kernel);
  const std::size_t t_len = in.rows, cin = in.cols;
  const auto pad = static_cast<std::ptrdiff_t>(kernel / 2);
  Matrix out(t_len, out_channels);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(t_len); ++t) {
    double* o = out.row(static_cast<std::size_t>(t));
    for (std::size_t oc = 0; oc < out_channels; ++oc) o[oc] = bias[oc];
    for (std::size_t k = 0; k < kernel; ++k) {
      const std::ptrdiff_t src = t + static_cast<std::ptrdiff_t>(k) - pad;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
      const double* xi = in.row(static_cast<std::size_t>(src));
      for (std::size_t oc = 0; oc < out_channels; ++oc) {
        const double* w = &weights[(oc * cin) * kernel + k];
        double acc = 0.0;
        for (std::size_t ic = 0; ic < cin; ++ic) acc += w[ic * kernel] * xi[ic];
        o[oc] += acc;
      }
    }
  }
  return out;
}

namespace reference {

Matrix short_time_spectrum(std::span<const double> x, std::span<const double> centers_s,
                           const SpectrumSpec& spec) {
  const std::size_t nw = window_samples(spec);
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  Matrix out(centers_s.size(), spec.n_bins);
  double wsum = 0.0;
  for (std::size_t i = 0; i < nw; ++i) {
    wsum += 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(nw));
  }
  for (std::size_t f = 0; f < centers_s.size(); ++f) {
    const std::ptrdiff_t first = std::llround(centers_s[f] * spec.fs) - static_cast<std::ptrdiff_t>(nw / 2);
    std::vector<double> seg;
    std::vector<std::size_t> pos;
    for (std::size_t i = 0; i < nw; ++i) {
      const std::ptrdiff_t j = first + static_cast<std::ptrdiff_t>(i);
      if (j >= 0 && j < n) {
        seg.push_back(x[static_cast<std::size_t>(j)]);
        pos.push_back(i);
      }
    }
    double mean = 0.0;
    for (double v : seg) mean += v;
    if (!seg.empty()) mean /= static_cast<double>(seg.size());
    for (std::size_t b = 0; b < spec.n_bins; ++b) {
      std::complex<double> acc{0.0, 0.0};
      for (std::size_t m = 0; m < seg.size(); ++m) {
        const double i = static_cast<double>(pos[m]);
        const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / static_cast<double>(nw));
        acc += w * (seg[m] - mean) *
               std::polar(1.0, -2.0 * std::numbers::pi * spec.bin_hz * static_cast<double>(b) * i / spec.fs);
      }
      out(f, b) = 2.0 * std::abs(acc) / wsum;
    }
  }
  return out;
}

std::vector<double> frame_mean(std::span<const double> x, double fs, const Framing& framing) {
  std::vector<double> out;
  out.reserve(framing.n_frames);
  for (std::size_t k = 0; k < framing.n_frames; ++k) {
    const auto [lo, hi] = frame_range(framing, k, fs, x.size());
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += x[i];
    out.push_back(hi > lo ? s / static_cast<double>(hi - lo) : 0.0);
  }
  return out;
}

Matrix conv1d_same(const Matrix& in, std::span<const double> weights, std::span<const double> bias,
                   std::size_t out_channels, std::size_t kernel) {
  check_conv(in, weights, bias, out_channels, kernel);
  const auto pad = static_cast<std::ptrdiff_t>(kernel / 2);
  Matrix out(in.rows, out_channels);
  for (std::size_t t = 0; t < in.rows; ++t) {
    for (std::size_t oc = 0; oc < out_channels; ++oc) {
      double acc = bias[oc];
      for (std::size_t ic = 0; ic < in.cols; ++ic) {
        for (std::size_t k = 0; k < kernel; ++k) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - pad;
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(in.rows)) continue;
          acc += weights[(oc * in.cols + ic) * kernel + k] * in(static_cast<std::size_t>(src), ic);
        }
      }
      out(t, oc) = acc;
    }
  }
  return out;
}

}  // namespace reference
}  // namespace sleeprad::kernels
