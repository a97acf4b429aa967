#pragma once

// Sequence classifier over the per-frame feature matrix: average pooling, a
// stack of 'same' 1-D convolutions with ReLU, one bidirectional LSTM layer and
// two heads (per-epoch stage softmax, per-frame event sigmoid). Also home to
// the rule-based oracle that produces the same output type without training.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sleeprad/features.hpp"
#include "sleeprad/types.hpp"

namespace sleeprad::model {

struct ModelConfig {
  std::size_t input_channels = 112;
  std::size_t pool = 4;                         ///< frames averaged into one recurrent step
  std::vector<std::size_t> conv_channels = {24, 24};
  std::size_t kernel = 5;
  std::size_t hidden = 24;                      ///< per direction
  double dropout = 0.1;
  std::uint64_t seed = 1;

  /// Throws ConfigError when a width is zero, the kernel is even or dropout
  /// is outside [0, 1).
  void validate() const;
};

struct ModelOutput {
  Matrix stage_probs;               ///< epochs x 5, rows on the simplex
  std::vector<double> event_probs;  ///< per frame, in [0, 1]
};

/// One training/evaluation example.
struct Sample {
  Matrix inputs;                          ///< frames x channels (normalized)
  std::vector<std::size_t> frame_epoch;   ///< epoch index of each frame
  std::size_t n_epochs = 0;
  std::vector<int> stage_labels;          ///< per epoch; -1 excludes the epoch
  std::vector<std::uint8_t> event_labels; ///< per frame
};

struct LossWeights {
  double stage = 1.0;
  double event = 1.0;
};

/// stage * mean cross-entropy over labelled epochs + event * mean binary
/// cross-entropy over frames.
double loss(const ModelOutput& out, const Sample& truth, const LossWeights& w = {});

struct TensorInfo {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size() const;
};

class Network {
 public:
  explicit Network(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<TensorInfo>& tensors() const { return layout_; }
  std::size_t parameter_count() const { return params_.size(); }
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  const TensorInfo& tensor(const std::string& name) const;

  /// Glorot-uniform weights, zero biases, LSTM forget-gate bias 1.
  void initialize(std::uint64_t seed);

  /// Inference. Throws std::invalid_argument on zero-length input or a channel
  /// count different from the configuration.
  ModelOutput forward(const Matrix& inputs, std::span<const std::size_t> frame_epoch, std::size_t n_epochs) const;

  /// Loss and its gradient with respect to every parameter. Dropout is active
  /// only when `dropout_seed` is non-zero.
  double loss_and_gradient(const Sample& s, const LossWeights& w, std::vector<double>& grad,
                           std::uint64_t dropout_seed = 0) const;

 private:
  ModelConfig cfg_;
  std::vector<TensorInfo> layout_;
  std::vector<double> params_;
};

enum class Optimizer { SgdMomentum, Adam };

struct TrainSpec {
  double learning_rate = 0.01;
  double momentum = 0.9;
  Optimizer optimizer = Optimizer::SgdMomentum;
  std::size_t batch_records = 4;
  std::size_t max_epochs = 50;          ///< passes over the training set
  LossWeights weights;
  std::size_t patience = 10;            ///< epochs without validation improvement
  double clip_norm = 5.0;
  std::uint64_t seed = 1;

  /// Throws ConfigError for non-positive rates, weights or sizes.
  void validate() const;
};

struct TrainHistory {
  std::vector<double> train_loss;      ///< per optimizer step (batch loss)
  std::vector<double> val_loss;        ///< per epoch, empty without validation
  std::vector<double> best_val_loss;   ///< running minimum of val_loss
  std::size_t steps = 0;
  bool stopped_early = false;
};

/// Deterministic mini-batch training. Per-record gradients of a batch are
/// computed in parallel and summed in record order. Keeps the parameters with
/// the lowest validation loss when a validation set is given. Throws
/// EmptyInputError on an empty training set.
TrainHistory train(Network& net, std::span<const Sample> train_set, std::span<const Sample> val_set,
                   const TrainSpec& spec, const std::function<void(std::size_t, double)>& on_step = {});

/// Fraction of labelled epochs whose argmax matches.
double stage_accuracy(const ModelOutput& out, const Sample& s);

struct Checkpoint {
  ModelConfig config;
  features::Normalizer normalizer;
  std::vector<double> parameters;
};

/// "SLRDCKPT", u32 version, u32 header length, JSON header (config, tensor
/// shapes, normalizer), then little-endian float32 parameters.
void save_checkpoint(const std::filesystem::path& path, const Network& net, const features::Normalizer& norm);
/// Throws DataError on a malformed or truncated file.
Checkpoint load_checkpoint(const std::filesystem::path& path);
Network network_from(const Checkpoint& ckpt);

/// Hand-written decision rules over the physical channels.
struct OracleConfig {
  double movement_factor = 100.0;     ///< movement frame: power > factor x record median
  double wake_movement_frac = 0.10;   ///< epoch share of movement frames forcing Wake
  double event_full_drop = 0.9;       ///< flow drop giving probability 1
  double event_min_drop = 0.3;
  double desat_before_s = 10.0;       ///< desat may start this long before the frame
  double desat_after_s = 45.0;        ///< ... or this long after it
};

ModelOutput rule_based_oracle(const features::RecordFeatures& f, const OracleConfig& cfg = {});

}  // namespace sleeprad::model
