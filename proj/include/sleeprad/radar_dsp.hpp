#pragma once

// Radar IQ -> displacement -> the three per-frame physical channels:
// body-movement power, breathing effort and breathing doppler.

#include <complex>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "sleeprad/types.hpp"

namespace sleeprad::radar {

struct DspConfig {
  double frame_len_s = 1.0;
  double hop_s = 0.5;
  double movement_highpass_hz = 2.5;
  double effort_low_hz = 0.1;
  double effort_high_hz = 1.0;
  double doppler_fs_hz = 10.0;      ///< displacement is decimated to about this rate
  double doppler_window_s = 8.0;
  double doppler_bin_hz = 0.025;
  double doppler_max_hz = 2.0;
  double doppler_noise_mm = 0.05;   ///< peaks below this are treated as silence
  double noise_floor_rel = 0.1;     ///< |IQ| below this x median is low confidence
  std::size_t baseline_half_frames = 120;  ///< rolling-baseline half width
};

struct Displacement {
  std::vector<double> mm;
  double sample_rate_hz = 0.0;
  std::vector<std::uint8_t> low_confidence;  ///< per sample
};

/// atan2 phase, unwrap, scale by lambda / 4 pi, linear detrend. Samples whose
/// magnitude falls below the noise floor are flagged, never rejected.
/// Throws std::invalid_argument on empty input.
Displacement demodulate_phase(std::span<const std::complex<float>> iq, double fs, double wavelength_m,
                              const DspConfig& cfg = {});

/// Picks the range bin whose unwrapped phase has the largest variance. The
/// simulator emits a single bin; multi-bin front ends plug in here.
std::size_t select_range_bin(std::span<const std::vector<std::complex<float>>> bins);

/// Mean power (mm^2) of the >= movement_highpass_hz band in each frame.
/// Throws std::invalid_argument on an empty framing.
std::vector<double> movement_power(const Displacement& d, const Framing& framing, const DspConfig& cfg = {});

/// Mean envelope (mm) of the respiration band in each frame.
std::vector<double> breathing_effort(const Displacement& d, const Framing& framing, const DspConfig& cfg = {});

struct DopplerMatrix {
  Matrix magnitude;  ///< frames x bins, mm (amplitude calibrated)
  double bin_hz = 0.025;
  double noise_mm = 0.05;

  std::size_t n_bins() const { return magnitude.cols; }
  /// Interpolated peak frequency in [lo_hz, hi_hz]; 0 when the frame is silent.
  double peak_hz(std::size_t frame, double lo_hz = 0.1, double hi_hz = 1.0) const;
  double peak_magnitude(std::size_t frame, double lo_hz = 0.1, double hi_hz = 1.0) const;
  /// Linear interpolation of the magnitude at an arbitrary frequency.
  double magnitude_at(std::size_t frame, double f_hz) const;
};

/// Short-time spectrum of the displacement around each frame center,
/// 0..doppler_max_hz.
DopplerMatrix breathing_doppler(const Displacement& d, const Framing& framing, const DspConfig& cfg = {});

/// Median breathing period over frames with a clear respiratory peak.
/// Throws DataError("no respiratory signal") when no frame qualifies.
double estimate_breath_period(const DopplerMatrix& doppler);

struct FeatureFrameSeries {
  Framing framing;
  std::vector<double> movement_power;
  std::vector<double> effort;
  DopplerMatrix doppler;
  std::vector<std::uint8_t> low_confidence;  ///< per frame
};

FeatureFrameSeries extract_features(std::span<const std::complex<float>> iq, double fs, double wavelength_m,
                                    const DspConfig& cfg = {});

/// Respiration relative to its own rolling baseline: effort ratio and the
/// flow proxy (doppler magnitude at the locally tracked breathing rate).
struct RespiratoryRatios {
  std::vector<double> effort_ratio;
  std::vector<double> flow_ratio;
  std::vector<double> peak_hz;
  std::vector<double> local_rate_hz;
};

RespiratoryRatios respiratory_ratios(const FeatureFrameSeries& f, const DspConfig& cfg = {});

/// Debug dump: one row per frame, time + scalar channels + doppler bins.
void write_debug_csv(const FeatureFrameSeries& f, std::ostream& os);

}  // namespace sleeprad::radar
