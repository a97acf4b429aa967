#include "sleeprad/types.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sleeprad {

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Wake: return "Wake";
    case Stage::N1: return "N1";
    case Stage::N2: return "N2";
    case Stage::N3: return "N3";
    case Stage::REM: return "REM";
  }
  return "?";
}

std::optional<Stage> parse_stage(std::string_view name) {
  for (Stage s : kAllStages) {
    if (to_string(s) == name) return s;
  }
  return std::nullopt;
}

void Hypnogram::validate() const {
  if (stages.empty()) throw std::invalid_argument("hypnogram is empty");
  if (!(epoch_len_s > 0.0)) throw std::invalid_argument("epoch length must be positive");
}

std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::ObstructiveApnea: return "ObstructiveApnea";
    case EventKind::CentralApnea: return "CentralApnea";
    case EventKind::MixedApnea: return "MixedApnea";
    case EventKind::ObstructiveHypopnea: return "ObstructiveHypopnea";
  }
  return "?";
}

std::optional<EventKind> parse_event_kind(std::string_view name) {
  for (auto k : {EventKind::ObstructiveApnea, EventKind::CentralApnea, EventKind::MixedApnea,
                 EventKind::ObstructiveHypopnea}) {
    if (to_string(k) == name) return k;
  }
  return std::nullopt;
}

std::string_view to_string(Severity s) {
  switch (s) {
    case Severity::Healthy: return "Healthy";
    case Severity::Mild: return "Mild";
    case Severity::Moderate: return "Moderate";
    case Severity::Severe: return "Severe";
  }
  return "?";
}

std::optional<Severity> parse_severity(std::string_view name) {
  for (auto s : {Severity::Healthy, Severity::Mild, Severity::Moderate, Severity::Severe}) {
    if (to_string(s) == name) return s;
  }
  return std::nullopt;
}

std::size_t Framing::epoch_of(std::size_t k, double epoch_len_s, std::size_t n_epochs) const {
  auto e = static_cast<std::size_t>(std::floor(center(k) / epoch_len_s));
  return std::min(e, n_epochs - 1);
}

Framing make_framing(double duration_s, double frame_len_s, double hop_s) {
  if (!(frame_len_s > 0.0) || !(hop_s > 0.0)) {
    throw std::invalid_argument("frame length and hop must be positive");
  }
  if (!(duration_s >= frame_len_s)) {
    throw std::invalid_argument("recording shorter than one frame");
  }
  Framing f;
  f.frame_len_s = frame_len_s;
  f.hop_s = hop_s;
  // small slack so that e.g. 28800 s / 0.5 s is not lost to rounding
  f.n_frames = static_cast<std::size_t>(std::floor((duration_s - frame_len_s) / hop_s + 1e-9)) + 1;
  return f;
}

}  // namespace sleeprad
