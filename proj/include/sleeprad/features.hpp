#pragma once

// Per-record fusion of the radar and PPG channels on the shared frame grid, and
// the dense model input derived from it.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sleeprad/ppg_features.hpp"
#include "sleeprad/radar_dsp.hpp"
#include "sleeprad/sim.hpp"
#include "sleeprad/types.hpp"

namespace sleeprad::features {

struct RecordFeatures {
  radar::FeatureFrameSeries radar;
  radar::RespiratoryRatios ratios;
  ppg::PpgFeatureSeries ppg;
  double breath_period_s = 0.0;
  double epoch_len_s = 30.0;
  std::size_t n_epochs = 0;

  const Framing& framing() const { return radar.framing; }
  /// Epoch index of every frame.
  std::vector<std::size_t> frame_epochs() const;
};

/// Runs both signal chains on one recording. Throws DataError when the
/// channels cannot be aligned.
RecordFeatures compute(const sim::RecordBundle& bundle, const radar::DspConfig& dsp = {});

/// Names of the model input channels, in column order.
const std::vector<std::string>& channel_names();

/// frames x channels, unnormalized (log-compressed where the dynamic range is
/// large). The low-confidence mask is one of the columns.
Matrix input_matrix(const RecordFeatures& f);

struct Normalizer {
  std::vector<double> mean;
  std::vector<double> scale;

  /// Per-column mean and standard deviation pooled over `inputs`.
  static Normalizer fit(std::span<const Matrix> inputs);
  void apply(Matrix& x) const;
};

/// 1 for frames whose center lies inside a truth event of any kind.
std::vector<std::uint8_t> frame_event_labels(const Framing& framing, std::span<const RespiratoryEvent> events);

}  // namespace sleeprad::features
