#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sleeprad/ppg_features.hpp"
#include "sleeprad/sim.hpp"

using namespace sleeprad;

namespace {

std::vector<double> pulse_wave(double bpm, double seconds, double fs = 50.0) {
  const std::vector<double> rate(static_cast<std::size_t>(seconds * fs), bpm);
  return sim::render_pulse_wave(rate, fs);
}

double mean_rate_bpm(const ppg::BeatSeries& b) {
  return 60.0 * static_cast<double>(b.times_s.size() - 1) / (b.times_s.back() - b.times_s.front());
}

// Beat times whose intervals follow `ibi(t)`.
template <class F>
ppg::BeatSeries beats_from(F ibi, double seconds) {
  ppg::BeatSeries b;
  double t = 0.5;
  while (t < seconds) {
    b.times_s.push_back(t);
    t += ibi(t);
  }
  return b;
}

}  // namespace

TEST_CASE("pulse detection at 60 and 120 bpm") {
  const auto b60 = ppg::detect_pulses(pulse_wave(60.0, 120.0), 50.0);
  CHECK(mean_rate_bpm(b60) == doctest::Approx(60.0).epsilon(1.0 / 60.0));
  const auto b120 = ppg::detect_pulses(pulse_wave(120.0, 120.0), 50.0);
  CHECK(mean_rate_bpm(b120) == doctest::Approx(120.0).epsilon(2.0 / 120.0));
  for (std::size_t i = 1; i < b120.times_s.size(); ++i) CHECK(b120.times_s[i] > b120.times_s[i - 1]);
}

TEST_CASE("flatline yields no beats and a mask") {
  const std::vector<double> flat(3000, 0.5);
  const auto b = ppg::detect_pulses(flat, 50.0);
  CHECK(b.times_s.empty());
  REQUIRE_FALSE(b.masked.empty());
  CHECK(b.masked.front().first <= 0.0);
  CHECK(b.masked.back().second >= 59.0);
}

TEST_CASE("pulse detection needs at least 25 Hz") {
  CHECK_THROWS_AS(ppg::detect_pulses(pulse_wave(60.0, 10.0, 20.0), 20.0), std::invalid_argument);
}

TEST_CASE("time-domain variability") {
  const auto framing = make_framing(300.0);
  SUBCASE("metronomic beats") {
    const auto tf = ppg::time_features(beats_from([](double) { return 0.8; }, 300.0), framing);
    CHECK(tf.rate_bpm[300] == doctest::Approx(75.0));
    CHECK(tf.sdnn_ms[300] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(tf.rmssd_ms[300] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(tf.mask[300] == 0);
  }
  SUBCASE("alternating 0.9 / 1.1 s intervals") {
    bool longer = false;
    const auto tf = ppg::time_features(beats_from([&](double) { return (longer = !longer) ? 1.1 : 0.9; }, 300.0), framing);
    CHECK(tf.rmssd_ms[300] == doctest::Approx(200.0));
    CHECK(tf.sdnn_ms[300] > 99.0);
    CHECK(tf.rate_bpm[300] == doctest::Approx(60.0).epsilon(0.02));
  }
  SUBCASE("fewer than three beats in the window") {
    ppg::BeatSeries sparse;
    sparse.times_s = {10.0, 11.0, 200.0};
    const auto tf = ppg::time_features(sparse, framing);
    for (std::uint8_t m : tf.mask) CHECK(m == 1);
  }
}

TEST_CASE("frequency-domain variability") {
  const auto framing = make_framing(600.0);
  const std::size_t mid = 600;
  SUBCASE("0.1 Hz modulation is low-frequency") {
    const auto f = ppg::freq_features(beats_from([](double t) { return 0.8 + 0.05 * std::sin(2 * M_PI * 0.1 * t); }, 600.0), framing);
    CHECK(f.ratio_mask[mid] == 0);
    CHECK(f.lf_hf_ratio[mid] > 5.0);
  }
  SUBCASE("0.3 Hz modulation is high-frequency") {
    const auto f = ppg::freq_features(beats_from([](double t) { return 0.8 + 0.05 * std::sin(2 * M_PI * 0.3 * t); }, 600.0), framing);
    CHECK(f.ratio_mask[mid] == 0);
    CHECK(f.lf_hf_ratio[mid] < 0.2);
  }
  SUBCASE("constant rate") {
    const auto f = ppg::freq_features(beats_from([](double) { return 0.8; }, 600.0), framing);
    CHECK(f.lf_power[mid] < 1e-3);
    CHECK(f.hf_power[mid] < 1e-3);
    CHECK(f.ratio_mask[mid] == 1);
  }
}

TEST_CASE("desaturation scoring and ODI") {
  const auto framing = make_framing(3600.0);
  std::vector<double> spo2(3600, 97.0);

  SUBCASE("constant saturation") {
    const auto a = ppg::spo2_analysis(spo2, 1.0, framing);
    CHECK(a.desats.empty());
    CHECK(a.odi_per_h == 0.0);
    CHECK(a.mean_pct[100] == doctest::Approx(97.0));
  }
  SUBCASE("five 4 % dips in one hour") {
    for (int d = 0; d < 5; ++d) {
      for (int s = 0; s < 25; ++s) spo2[static_cast<std::size_t>(400 + 600 * d + s)] = 93.0;
    }
    const auto a = ppg::spo2_analysis(spo2, 1.0, framing);
    CHECK(a.desats.size() == 5);
    CHECK(a.odi_per_h == doctest::Approx(5.0));
    CHECK(a.in_desat[2 * 410] == 1);
    CHECK(a.min_pct[2 * 410] == doctest::Approx(93.0));

    // A constant offset changes nothing.
    auto shifted = spo2;
    for (auto& v : shifted) v -= 2.0;
    CHECK(ppg::spo2_analysis(shifted, 1.0, framing).odi_per_h == doctest::Approx(5.0));
  }
  SUBCASE("a 2.9 % dip is not counted") {
    for (int s = 0; s < 30; ++s) spo2[static_cast<std::size_t>(1000 + s)] = 94.1;
    CHECK(ppg::spo2_analysis(spo2, 1.0, framing).desats.empty());
  }
  SUBCASE("dips shorter than 10 s are ignored") {
    for (int s = 0; s < 6; ++s) spo2[static_cast<std::size_t>(1000 + s)] = 90.0;
    CHECK(ppg::spo2_analysis(spo2, 1.0, framing).desats.empty());
  }
}

TEST_CASE("cardiac-band spectrum peaks at the pulse frequency") {
  const auto framing = make_framing(60.0);
  const auto tf = ppg::tf_spectrum(pulse_wave(90.0, 60.0), 50.0, framing);
  REQUIRE(tf.rows == framing.n_frames);
  REQUIRE(tf.cols == 15);
  const double* row = tf.row(60);
  const auto peak = static_cast<std::size_t>(std::max_element(row + 1, row + tf.cols) - row);
  CHECK(peak == 6);  // 1.5 Hz at 0.25 Hz spacing
}

TEST_CASE("feature series from a simulated night") {
  const auto p = sim::make_profile("p", Severity::Severe, 9);
  const auto b = sim::simulate_record(p, 1.0);
  const auto framing = make_framing(b.duration_s());
  const auto f = ppg::extract_features(b.ppg, b.ppg_fs_hz, b.spo2, b.spo2_fs_hz, framing);
  CHECK(f.pulse_rate_bpm.size() == framing.n_frames);
  CHECK(f.tf_spectrum.rows == framing.n_frames);
  CHECK(f.odi_per_h > 5.0);

  std::ostringstream os;
  ppg::write_csv(f, os);
  const auto text = os.str();
  CHECK(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')) == framing.n_frames + 1);
}
