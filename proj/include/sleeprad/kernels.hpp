#pragma once

// Frame-parallel inner loops. Each kernel has an OpenMP implementation used by
// the pipeline and a plain serial reference in `reference::` that the tests and
// the benchmark compare against. Every output element is computed by one
// thread with a fixed summation order, so results are bitwise identical for
// any thread count. The references are formulated differently and agree to
// rounding error.

#include <cstddef>
#include <span>
#include <vector>

#include "sleeprad/types.hpp"

namespace sleeprad::kernels {

/// Parameters of a zoomed short-time spectrum: `n_bins` bins spaced `bin_hz`
/// apart starting at 0 Hz, Hann window of `window_s` seconds.
struct SpectrumSpec {
  double fs = 10.0;
  double window_s = 8.0;
  double bin_hz = 0.025;
  std::size_t n_bins = 81;
};

/// Amplitude-calibrated magnitude spectrum (a sinusoid of amplitude A peaks at
/// A) of `x` around each center time. The window mean is removed first; samples
/// falling outside the record contribute nothing. Result is centers x bins.
Matrix short_time_spectrum(std::span<const double> x, std::span<const double> centers_s,
                           const SpectrumSpec& spec);

/// Mean of the samples of `x` inside each frame.
std::vector<double> frame_mean(std::span<const double> x, double fs, const Framing& framing);

/// 'Same'-padded 1-D convolution over time. `in` is T x Cin; `weights` is laid
/// out [out][in][k]; result is T x Cout (no activation).
Matrix conv1d_same(const Matrix& in, std::span<const double> weights, std::span<const double> bias,
                   std::size_t out_channels, std::size_t kernel);

namespace reference {

Matrix short_time_spectrum(std::span<const double> x, std::span<const double> centers_s,
                           const SpectrumSpec& spec);
std::vector<double> frame_mean(std::span<const double> x, double fs, const Framing& framing);
Matrix conv1d_same(const Matrix& in, std::span<const double> weights, std::span<const double> bias,
                   std::size_t out_channels, std::size_t kernel);

}  // namespace reference
}  // namespace sleeprad::kernels
