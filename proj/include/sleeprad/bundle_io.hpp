#pragma once

// On-disk layout of a record bundle:
//   manifest.json          ids, sample rates, sample counts, seed
//   radar_iq.f32           interleaved I/Q, little-endian float32
//   ppg.f32, spo2.f32      little-endian float32
//   truth_hypnogram.csv    epoch_index,stage
//   truth_events.csv       start_s,duration_s,kind,desat_pct

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "sleeprad/sim.hpp"
#include "sleeprad/types.hpp"

namespace sleeprad::io {

void write_bundle(const std::filesystem::path& dir, const sim::RecordBundle& bundle);

/// Throws DataError when a file is missing, truncated or inconsistent with
/// the manifest.
sim::RecordBundle read_bundle(const std::filesystem::path& dir);

void write_events_csv(std::ostream& os, const std::vector<RespiratoryEvent>& events);
std::vector<RespiratoryEvent> read_events_csv(std::istream& is);

void write_hypnogram_csv(std::ostream& os, const Hypnogram& hyp);
Hypnogram read_hypnogram_csv(std::istream& is, double epoch_len_s = 30.0);

void write_f32(const std::filesystem::path& path, const std::vector<float>& values);
std::vector<float> read_f32(const std::filesystem::path& path);

/// Writes `text` to `path` only through a temporary file and rename, so a
/// failed run never leaves a half-written output behind.
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace sleeprad::io
