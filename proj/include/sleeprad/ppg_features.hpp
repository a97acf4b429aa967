#pragma once

// Pulse-oximeter features on the radar frame grid: beat detection, pulse-rate
// variability in time and frequency, a cardiac-band time-frequency map, SpO2
// statistics and desaturation scoring.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "sleeprad/types.hpp"

namespace sleeprad::ppg {

struct BeatSeries {
  std::vector<double> times_s;                       ///< strictly increasing
  std::vector<std::pair<double, double>> masked;     ///< unanalyzable [start, end) segments
};

/// Local-maximum beat detection with a 0.25 s refractory period.
/// Throws std::invalid_argument when fs < 25 Hz.
BeatSeries detect_pulses(std::span<const double> ppg, double fs);

struct TimeFeatures {
  std::vector<double> rate_bpm;
  std::vector<double> sdnn_ms;
  std::vector<double> rmssd_ms;
  std::vector<std::uint8_t> mask;  ///< 1 where fewer than 3 beats or rate out of range
};

/// Pulse rate, SDNN and RMSSD from the inter-beat intervals inside a
/// `context_s` window centred on each frame.
TimeFeatures time_features(const BeatSeries& beats, const Framing& framing, double context_s = 60.0);

struct FreqFeatures {
  std::vector<double> lf_power;  ///< ms^2, 0.04-0.15 Hz
  std::vector<double> hf_power;  ///< ms^2, 0.15-0.4 Hz
  std::vector<double> lf_hf_ratio;
  std::vector<std::uint8_t> ratio_mask;  ///< 1 where HF is ~0 or data missing
};

/// Band powers of the 4 Hz-interpolated inter-beat-interval series over a
/// `window_s` window, evaluated every `stride_frames` frames and held between.
FreqFeatures freq_features(const BeatSeries& beats, const Framing& framing, double window_s = 120.0,
                           std::size_t stride_frames = 10);

struct Desaturation {
  double start_s = 0.0;
  double duration_s = 0.0;
  double depth_pct = 0.0;
  double end_s() const { return start_s + duration_s; }
};

struct Spo2Config {
  double baseline_window_s = 120.0;
  double baseline_percentile = 90.0;
  double drop_pct = 3.0;
  double min_duration_s = 10.0;
  double merge_gap_s = 5.0;
};

struct Spo2Analysis {
  std::vector<Desaturation> desats;
  std::vector<double> mean_pct;  ///< per frame
  std::vector<double> min_pct;   ///< per frame
  std::vector<std::uint8_t> in_desat;  ///< per frame
  double odi_per_h = 0.0;
};

/// Desaturation = drop of >= drop_pct below a trailing rolling baseline lasting
/// >= min_duration_s. ODI is desaturations per hour of analysed signal.
Spo2Analysis spo2_analysis(std::span<const double> spo2, double fs, const Framing& framing,
                           const Spo2Config& cfg = {});

/// Cardiac-band magnitude spectrum of the PPG around each frame (0-3.5 Hz,
/// 0.25 Hz bins, 8 s window).
Matrix tf_spectrum(std::span<const double> ppg, double fs, const Framing& framing);

struct PpgFeatureSeries {
  Framing framing;
  std::vector<double> pulse_rate_bpm;
  std::vector<double> prv_sdnn_ms;
  std::vector<double> prv_rmssd_ms;
  std::vector<std::uint8_t> rate_mask;
  std::vector<double> lf_power;
  std::vector<double> hf_power;
  std::vector<double> lf_hf_ratio;
  std::vector<std::uint8_t> ratio_mask;
  Matrix tf_spectrum;
  std::vector<double> spo2_mean_pct;
  std::vector<double> spo2_min_pct;
  std::vector<std::uint8_t> in_desat;
  std::vector<Desaturation> desats;
  double odi_per_h = 0.0;
};

PpgFeatureSeries extract_features(std::span<const double> ppg, double ppg_fs, std::span<const double> spo2,
                                  double spo2_fs, const Framing& framing);

/// One row per frame with every scalar feature followed by the TF bins.
void write_csv(const PpgFeatureSeries& f, std::ostream& os);

}  // namespace sleeprad::ppg
