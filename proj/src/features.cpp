#include "sleeprad/features.hpp"

#include <algorithm>
#include <cmath>

#include "sleeprad/error.hpp"

namespace sleeprad::features {
namespace {

constexpr std::size_t kScalarRadar = 5;  // movement, effort, effort ratio, flow ratio, low confidence
constexpr std::size_t kDopplerBins = 81;
constexpr std::size_t kScalarPpg = 8;
constexpr std::size_t kTfBins = 15;
constexpr std::size_t kSpo2 = 3;
constexpr std::size_t kChannels = kScalarRadar + kDopplerBins + kScalarPpg + kTfBins + kSpo2;

std::vector<std::string> make_names() {
  std::vector<std::string> n = {"log_movement_power", "effort_mm", "effort_ratio", "flow_ratio", "low_confidence"};
  for (std::size_t b = 0; b < kDopplerBins; ++b) n.push_back("doppler_" + std::to_string(b));
  for (const char* s : {"pulse_rate_bpm", "prv_sdnn_ms", "prv_rmssd_ms", "rate_mask", "log_lf_power",
                        "log_hf_power", "log_lf_hf_ratio", "ratio_mask"}) {
    n.emplace_back(s);
  }
  for (std::size_t b = 0; b < kTfBins; ++b) n.push_back("tf_" + std::to_string(b));
  for (const char* s : {"spo2_mean_pct", "spo2_min_pct", "in_desat"}) n.emplace_back(s);
  return n;
}

}  // namespace

std::vector<std::size_t> RecordFeatures::frame_epochs() const {
  const auto& fr = framing();
  std::vector<std::size_t> e(fr.n_frames);
  for (std::size_t k = 0; k < fr.n_frames; ++k) e[k] = fr.epoch_of(k, epoch_len_s, n_epochs);
  return e;
}

RecordFeatures compute(const sim::RecordBundle& bundle, const radar::DspConfig& dsp) {
  if (bundle.radar_iq.empty() || bundle.ppg.empty() || bundle.spo2.empty()) {
    throw DataError("record is missing a channel");
  }
  const double radar_s = static_cast<double>(bundle.radar_iq.size()) / bundle.radar_fs_hz;
  const double ppg_s = static_cast<double>(bundle.ppg.size()) / bundle.ppg_fs_hz;
  const double spo2_s = static_cast<double>(bundle.spo2.size()) / bundle.spo2_fs_hz;
  if (std::abs(radar_s - ppg_s) > 1.0 || std::abs(radar_s - spo2_s) > 1.0) {
    throw DataError("channel durations disagree by more than 1 s");
  }

  RecordFeatures f;
  f.epoch_len_s = bundle.truth_hypnogram.epoch_len_s;
  f.n_epochs = static_cast<std::size_t>(std::ceil(radar_s / f.epoch_len_s - 1e-9));
  f.radar = radar::extract_features(bundle.radar_iq, bundle.radar_fs_hz, bundle.radar_wavelength_m, dsp);
  f.ratios = radar::respiratory_ratios(f.radar, dsp);
  f.breath_period_s = radar::estimate_breath_period(f.radar.doppler);
  f.ppg = ppg::extract_features(bundle.ppg, bundle.ppg_fs_hz, bundle.spo2, bundle.spo2_fs_hz, f.radar.framing);
  return f;
}

const std::vector<std::string>& channel_names() {
  static const std::vector<std::string> names = make_names();
  return names;
}

Matrix input_matrix(const RecordFeatures& f) {
  const std::size_t n = f.framing().n_frames;
  if (f.radar.doppler.n_bins() != kDopplerBins || f.ppg.tf_spectrum.cols != kTfBins) {
    throw DataError("feature layout does not match the model input");
  }
  Matrix x(n, kChannels);
  for (std::size_t k = 0; k < n; ++k) {
    double* r = x.row(k);
    std::size_t c = 0;
    r[c++] = std::log(f.radar.movement_power[k] + 1e-6);
    r[c++] = f.radar.effort[k];
    r[c++] = std::min(f.ratios.effort_ratio[k], 3.0);
    r[c++] = std::min(f.ratios.flow_ratio[k], 3.0);
    r[c++] = f.radar.low_confidence[k];
    for (std::size_t b = 0; b < kDopplerBins; ++b) r[c++] = std::log(f.radar.doppler.magnitude(k, b) + 1e-3);
    r[c++] = f.ppg.pulse_rate_bpm[k];
    r[c++] = f.ppg.prv_sdnn_ms[k];
    r[c++] = f.ppg.prv_rmssd_ms[k];
    r[c++] = f.ppg.rate_mask[k];
    r[c++] = std::log(f.ppg.lf_power[k] + 1.0);
    r[c++] = std::log(f.ppg.hf_power[k] + 1.0);
    r[c++] = f.ppg.ratio_mask[k] ? 0.0 : std::log(f.ppg.lf_hf_ratio[k] + 1e-3);
    r[c++] = f.ppg.ratio_mask[k];
    for (std::size_t b = 0; b < kTfBins; ++b) r[c++] = std::log(f.ppg.tf_spectrum(k, b) + 1e-4);
    r[c++] = f.ppg.spo2_mean_pct[k];
    r[c++] = f.ppg.spo2_min_pct[k];
    r[c++] = f.ppg.in_desat[k];
  }
  return x;
}

Normalizer Normalizer::fit(std::span<const Matrix> inputs) {
  if (inputs.empty()) throw EmptyInputError("no inputs to normalize");
  const std::size_t c = inputs.front().cols;
  std::vector<double> sum(c, 0.0), sq(c, 0.0);
  double count = 0.0;
  for (const auto& m : inputs) {
    if (m.cols != c) throw DataError("inconsistent channel counts");
    for (std::size_t t = 0; t < m.rows; ++t) {
      for (std::size_t j = 0; j < c; ++j) {
        sum[j] += m(t, j);
        sq[j] += m(t, j) * m(t, j);
      }
    }
    count += static_cast<double>(m.rows);
  }
  if (count == 0.0) throw EmptyInputError("no frames to normalize");
  Normalizer z;
  z.mean.resize(c);
  z.scale.resize(c);
  for (std::size_t j = 0; j < c; ++j) {
    z.mean[j] = sum[j] / count;
    const double var = std::max(0.0, sq[j] / count - z.mean[j] * z.mean[j]);
    z.scale[j] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  return z;
}

void Normalizer::apply(Matrix& x) const {
  if (x.cols != mean.size()) throw DataError("normalizer width does not match input");
  for (std::size_t t = 0; t < x.rows; ++t) {
    double* r = x.row(t);
    for (std::size_t j = 0; j < x.cols; ++j) r[j] = (r[j] - mean[j]) / scale[j];
  }
}

std::vector<std::uint8_t> frame_event_labels(const Framing& framing, std::span<const RespiratoryEvent> events) {
  std::vector<std::uint8_t> y(framing.n_frames, 0);
  for (const auto& e : events) {
    const auto k0 = static_cast<std::size_t>(std::max(0.0, std::ceil((e.start_s - 0.5 * framing.frame_len_s) / framing.hop_s)));
    for (std::size_t k = k0; k < framing.n_frames && framing.center(k) < e.end_s(); ++k) {
      if (framing.center(k) >= e.start_s) y[k] = 1;
    }
  }
  return y;
}

}  // namespace sleeprad::features
