#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sleeprad {

enum class Stage : std::uint8_t { Wake = 0, N1 = 1, N2 = 2, N3 = 3, REM = 4 };
inline constexpr std::size_t kNumStages = 5;
inline constexpr std::array<Stage, kNumStages> kAllStages = {Stage::Wake, Stage::N1, Stage::N2,
                                                             Stage::N3, Stage::REM};

std::string_view to_string(Stage s);
std::optional<Stage> parse_stage(std::string_view name);
inline bool is_sleep(Stage s) { return s != Stage::Wake; }

/// Per-epoch sleep-stage sequence.
struct Hypnogram {
  double epoch_len_s = 30.0;
  std::vector<Stage> stages;

  std::size_t size() const { return stages.size(); }
  double duration_s() const { return epoch_len_s * static_cast<double>(stages.size()); }
  /// Throws std::invalid_argument when empty or epoch_len_s <= 0.
  void validate() const;
};

enum class EventKind : std::uint8_t {
  ObstructiveApnea = 0,
  CentralApnea = 1,
  MixedApnea = 2,
  ObstructiveHypopnea = 3,
};

std::string_view to_string(EventKind k);
std::optional<EventKind> parse_event_kind(std::string_view name);
/// Obstructive apnea, mixed apnea and obstructive hypopnea count toward OAHI.
inline bool is_obstructive_type(EventKind k) { return k != EventKind::CentralApnea; }

struct RespiratoryEvent {
  EventKind kind = EventKind::ObstructiveApnea;
  double start_s = 0.0;
  double duration_s = 0.0;
  double desat_depth_pct = 0.0;

  double end_s() const { return start_s + duration_s; }
};

enum class Severity : std::uint8_t { Healthy = 0, Mild = 1, Moderate = 2, Severe = 3 };
inline constexpr std::size_t kNumSeverities = 4;

std::string_view to_string(Severity s);
std::optional<Severity> parse_severity(std::string_view name);

/// Uniform frame grid shared by every per-frame channel of a record.
/// Frame k spans [k*hop_s, k*hop_s + frame_len_s).
struct Framing {
  double frame_len_s = 1.0;
  double hop_s = 0.5;
  std::size_t n_frames = 0;

  double start(std::size_t k) const { return static_cast<double>(k) * hop_s; }
  double center(std::size_t k) const { return start(k) + 0.5 * frame_len_s; }
  /// Index of the epoch containing the frame center, clamped to n_epochs-1.
  std::size_t epoch_of(std::size_t k, double epoch_len_s, std::size_t n_epochs) const;
};

/// Frames that fit completely inside a recording of `duration_s` seconds.
/// Throws std::invalid_argument for non-positive lengths or a recording
/// shorter than one frame.
Framing make_framing(double duration_s, double frame_len_s = 1.0, double hop_s = 0.5);

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  double* row(std::size_t r) { return data.data() + r * cols; }
  const double* row(std::size_t r) const { return data.data() + r * cols; }
};

/// splitmix64 finaliser; used to derive independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace sleeprad
