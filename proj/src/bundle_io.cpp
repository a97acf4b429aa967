#include "sleeprad/bundle_io.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "sleeprad/error.hpp"

namespace sleeprad::io {
namespace fs = std::filesystem;

namespace {

constexpr int kFormatVersion = 1;

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  return out;
}

double to_double(const std::string& s, const char* what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(std::string("bad number in ") + what + ": '" + s + "'");
  }
}

fs::path require_file(const fs::path& dir, const std::string& name) {
  const auto p = dir / name;
  if (!fs::is_regular_file(p)) throw DataError("missing file " + p.string());
  return p;
}

}  // namespace

void write_f32(const fs::path& path, const std::vector<float>& values) {
  std::string bytes(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto u = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<char>((u >> (8 * b)) & 0xFF);
  }
  write_text(path, bytes);
}

std::vector<float> read_f32(const fs::path& path) {
  const std::string bytes = read_text(path);
  if (bytes.size() % 4 != 0) throw DataError("truncated float32 file " + path.string());
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    out[i] = std::bit_cast<float>(u);
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write " + path.string());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!os) throw DataError("failed writing " + path.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_events_csv(std::ostream& os, const std::vector<RespiratoryEvent>& events) {
  os << "start_s,duration_s,kind,desat_pct\n";
  for (const auto& e : events) {
    os << fixed(e.start_s, 3) << ',' << fixed(e.duration_s, 3) << ',' << to_string(e.kind) << ','
       << fixed(e.desat_depth_pct, 3) << '\n';
  }
}

std::vector<RespiratoryEvent> read_events_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("start_s,duration_s,kind,desat_pct", 0) != 0) {
    throw DataError("events CSV has an unexpected header");
  }
  std::vector<RespiratoryEvent> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cols = split_csv(line);
    if (cols.size() != 4) throw DataError("events CSV row needs 4 columns: " + line);
    const auto kind = parse_event_kind(cols[2]);
    if (!kind) throw DataError("unknown event kind '" + cols[2] + "'");
    out.push_back({*kind, to_double(cols[0], "start_s"), to_double(cols[1], "duration_s"),
                   to_double(cols[3], "desat_pct")});
  }
  return out;
}

void write_hypnogram_csv(std::ostream& os, const Hypnogram& hyp) {
  os << "epoch_index,stage\n";
  for (std::size_t i = 0; i < hyp.size(); ++i) os << i << ',' << to_string(hyp.stages[i]) << '\n';
}

Hypnogram read_hypnogram_csv(std::istream& is, double epoch_len_s) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("epoch_index,stage", 0) != 0) {
    throw DataError("hypnogram CSV has an unexpected header");
  }
  Hypnogram h;
  h.epoch_len_s = epoch_len_s;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cols = split_csv(line);
    if (cols.size() != 2) throw DataError("hypnogram CSV row needs 2 columns: " + line);
    if (static_cast<std::size_t>(to_double(cols[0], "epoch_index")) != h.stages.size()) {
      throw DataError("hypnogram epochs are not consecutive");
    }
    const auto s = parse_stage(cols[1]);
    if (!s) throw DataError("unknown stage '" + cols[1] + "'");
    h.stages.push_back(*s);
  }
  return h;
}

void write_bundle(const fs::path& dir, const sim::RecordBundle& b) {
  fs::create_directories(dir);
  nlohmann::json m;
  m["format_version"] = kFormatVersion;
  m["subject_id"] = b.profile.subject_id;
  m["age_years"] = b.profile.age_years;
  m["severity"] = std::string(to_string(b.profile.severity_class));
  m["target_oahi"] = b.profile.target_oahi;
  m["seed"] = b.profile.seed;
  m["duration_s"] = b.duration_s();
  m["epoch_len_s"] = b.truth_hypnogram.epoch_len_s;
  m["radar"] = {{"file", "radar_iq.f32"}, {"sample_rate_hz", b.radar_fs_hz}, {"samples", b.radar_iq.size()},
                {"wavelength_m", b.radar_wavelength_m}};
  m["ppg"] = {{"file", "ppg.f32"}, {"sample_rate_hz", b.ppg_fs_hz}, {"samples", b.ppg.size()}};
  m["spo2"] = {{"file", "spo2.f32"}, {"sample_rate_hz", b.spo2_fs_hz}, {"samples", b.spo2.size()}};

  std::vector<float> iq(2 * b.radar_iq.size());
  for (std::size_t i = 0; i < b.radar_iq.size(); ++i) {
    iq[2 * i] = b.radar_iq[i].real();
    iq[2 * i + 1] = b.radar_iq[i].imag();
  }
  write_f32(dir / "radar_iq.f32", iq);
  write_f32(dir / "ppg.f32", std::vector<float>(b.ppg.begin(), b.ppg.end()));
  write_f32(dir / "spo2.f32", std::vector<float>(b.spo2.begin(), b.spo2.end()));
  std::ostringstream hyp, ev;
  write_hypnogram_csv(hyp, b.truth_hypnogram);
  write_events_csv(ev, b.truth_events);
  write_text(dir / "truth_hypnogram.csv", hyp.str());
  write_text(dir / "truth_events.csv", ev.str());
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

sim::RecordBundle read_bundle(const fs::path& dir) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_text(require_file(dir, "manifest.json")));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  sim::RecordBundle b;
  try {
    if (m.at("format_version").get<int>() != kFormatVersion) throw DataError("unsupported bundle format");
    b.profile.subject_id = m.at("subject_id");
    b.profile.age_years = m.at("age_years");
    const auto sev = parse_severity(m.at("severity").get<std::string>());
    if (!sev) throw DataError("unknown severity in manifest");
    b.profile.severity_class = *sev;
    b.profile.target_oahi = m.at("target_oahi");
    b.profile.seed = m.at("seed");
    b.radar_fs_hz = m.at("radar").at("sample_rate_hz");
    b.radar_wavelength_m = m.at("radar").at("wavelength_m");
    b.ppg_fs_hz = m.at("ppg").at("sample_rate_hz");
    b.spo2_fs_hz = m.at("spo2").at("sample_rate_hz");

    const auto iq = read_f32(require_file(dir, m.at("radar").at("file")));
    if (iq.size() != 2 * m.at("radar").at("samples").get<std::size_t>()) throw DataError("radar sample count mismatch");
    b.radar_iq.resize(iq.size() / 2);
    for (std::size_t i = 0; i < b.radar_iq.size(); ++i) b.radar_iq[i] = {iq[2 * i], iq[2 * i + 1]};
    const auto ppg = read_f32(require_file(dir, m.at("ppg").at("file")));
    if (ppg.size() != m.at("ppg").at("samples").get<std::size_t>()) throw DataError("PPG sample count mismatch");
    b.ppg.assign(ppg.begin(), ppg.end());
    const auto spo2 = read_f32(require_file(dir, m.at("spo2").at("file")));
    if (spo2.size() != m.at("spo2").at("samples").get<std::size_t>()) throw DataError("SpO2 sample count mismatch");
    b.spo2.assign(spo2.begin(), spo2.end());

    std::istringstream hyp(read_text(require_file(dir, "truth_hypnogram.csv")));
    b.truth_hypnogram = read_hypnogram_csv(hyp, m.at("epoch_len_s"));
    std::istringstream ev(read_text(require_file(dir, "truth_events.csv")));
    b.truth_events = read_events_csv(ev);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  b.validate();
  return b;
}

}  // namespace sleeprad::io
