#pragma once

// Whole-record DSP helpers shared by the radar and PPG chains.

#include <complex>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace sleeprad::signal {

/// Magnitude response of a zero-phase band-pass built from Butterworth-shaped
/// high-pass and low-pass sections. Pass lo <= 0 or hi <= 0 to disable a side.
double butterworth_gain(double f_hz, double lo_hz, double hi_hz, int order = 2);

/// Applies a real, zero-phase gain curve in the frequency domain.
std::vector<double> spectral_filter(std::span<const double> x, double fs,
                                    const std::function<double(double)>& gain);

/// |analytic signal| of the band selected by `gain`.
std::vector<double> analytic_envelope(std::span<const double> x, double fs,
                                      const std::function<double(double)>& gain);

/// Removes the least-squares line in place.
void linear_detrend(std::vector<double>& x);

/// Classic 2*pi phase unwrapping.
std::vector<double> unwrap(std::span<const double> phase);

/// Centered running median over [i - half, i + half] (clipped at the edges).
std::vector<double> rolling_median(std::span<const double> x, std::size_t half);

/// Percentile (0..100) of the trailing window [i - len, i) excluding sample i.
/// The first sample uses itself.
std::vector<double> trailing_percentile(std::span<const double> x, std::size_t len, double pct);

/// Linear-interpolated percentile (inclusive / type 7) of an unsorted sample.
double percentile(std::vector<double> v, double pct);

/// Keeps every `factor`-th sample after low-passing below the new Nyquist.
std::vector<double> decimate(std::span<const double> x, double fs, std::size_t factor);

}  // namespace sleeprad::signal
