#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <sstream>

#include "sleeprad/error.hpp"
#include "sleeprad/radar_dsp.hpp"
#include "sleeprad/signal.hpp"
#include "sleeprad/sim.hpp"

using namespace sleeprad;

namespace {

constexpr double kFs = 50.0;
constexpr double kLambda = 0.005;

std::vector<double> sinusoid(double seconds, double amp_mm, double hz, double phase = 0.0) {
  std::vector<double> d(static_cast<std::size_t>(seconds * kFs));
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = amp_mm * std::sin(2 * M_PI * hz * static_cast<double>(i) / kFs + phase);
  return d;
}

std::vector<std::complex<float>> to_iq(const std::vector<double>& d_mm, double phase0 = 0.3) {
  std::vector<std::complex<float>> iq;
  for (double v : d_mm) iq.push_back(std::polar(1.0f, static_cast<float>(phase0 + 4 * M_PI * v * 1e-3 / kLambda)));
  return iq;
}

radar::Displacement as_displacement(std::vector<double> mm) {
  radar::Displacement d;
  d.sample_rate_hz = kFs;
  d.low_confidence.assign(mm.size(), 0);
  d.mm = std::move(mm);
  return d;
}

double median(std::vector<double> v) { return signal::percentile(std::move(v), 50.0); }

}  // namespace

TEST_CASE("demodulation recovers a 2 mm, 0.25 Hz sinusoid") {
  // Cosine phase over whole cycles: the detrend has nothing to remove.
  const auto truth = sinusoid(120.0, 2.0, 0.25, M_PI / 2);
  const auto d = radar::demodulate_phase(to_iq(truth), kFs, kLambda);
  REQUIRE(d.mm.size() == truth.size());
  const auto [mn, mx] = std::minmax_element(d.mm.begin(), d.mm.end());
  CHECK((*mx - *mn) / 2.0 == doctest::Approx(2.0).epsilon(0.01));

  // Frequency from zero crossings of the recovered waveform.
  std::size_t crossings = 0;
  for (std::size_t i = 1; i < d.mm.size(); ++i) crossings += (d.mm[i - 1] < 0.0) != (d.mm[i] < 0.0);
  CHECK(static_cast<double>(crossings) / 2.0 / 120.0 == doctest::Approx(0.25).epsilon(0.04));
}

TEST_CASE("constant IQ demodulates to zero") {
  const std::vector<std::complex<float>> iq(1000, {0.6f, -0.8f});
  const auto d = radar::demodulate_phase(iq, kFs, kLambda);
  for (double v : d.mm) CHECK(std::abs(v) < 1e-9);
}

TEST_CASE("large motion crossing the phase wrap many times unwraps cleanly") {
  const auto truth = sinusoid(60.0, 6.0, 0.3);  // +/- 15 rad of phase
  const auto d = radar::demodulate_phase(to_iq(truth), kFs, kLambda);
  auto max_second_diff = [](const std::vector<double>& x) {
    double m = 0.0;
    for (std::size_t i = 2; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - 2 * x[i - 1] + x[i - 2]));
    return m;
  };
  CHECK(max_second_diff(d.mm) <= max_second_diff(truth) + 1e-4);
  auto detrended = truth;
  signal::linear_detrend(detrended);
  double worst = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) worst = std::max(worst, std::abs(d.mm[i] - detrended[i]));
  CHECK(worst < 1e-3);
}

TEST_CASE("demodulation is invariant to a constant carrier rotation") {
  const auto truth = sinusoid(30.0, 1.5, 0.4);
  const auto a = radar::demodulate_phase(to_iq(truth, 0.0), kFs, kLambda);
  const auto b = radar::demodulate_phase(to_iq(truth, 2.5), kFs, kLambda);
  for (std::size_t i = 0; i < a.mm.size(); ++i) CHECK(a.mm[i] == doctest::Approx(b.mm[i]).epsilon(1e-5));
}

TEST_CASE("demodulation is linear in displacement") {
  const auto one = sinusoid(30.0, 1.0, 0.3);
  auto two = one;
  for (auto& v : two) v *= 2.0;
  const auto a = radar::demodulate_phase(to_iq(one), kFs, kLambda);
  const auto b = radar::demodulate_phase(to_iq(two), kFs, kLambda);
  for (std::size_t i = 0; i < a.mm.size(); i += 37) CHECK(b.mm[i] == doctest::Approx(2.0 * a.mm[i]).epsilon(1e-4));
}

TEST_CASE("weak IQ is flagged, never rejected") {
  auto iq = to_iq(sinusoid(20.0, 1.0, 0.3));
  for (std::size_t i = 400; i < 450; ++i) iq[i] *= 0.01f;
  const auto d = radar::demodulate_phase(iq, kFs, kLambda);
  CHECK(d.mm.size() == iq.size());
  CHECK(d.low_confidence[420] == 1);
  CHECK(d.low_confidence[100] == 0);
  CHECK_THROWS_AS(radar::demodulate_phase(std::vector<std::complex<float>>{}, kFs, kLambda), std::invalid_argument);
}

TEST_CASE("range bin with the most phase motion is selected") {
  std::vector<std::vector<std::complex<float>>> bins = {to_iq(sinusoid(20, 0.05, 0.3)), to_iq(sinusoid(20, 2.0, 0.3)),
                                                        to_iq(sinusoid(20, 0.2, 0.3))};
  CHECK(radar::select_range_bin(bins) == 1);
}

TEST_CASE("movement burst stands out against quiet breathing") {
  auto mm = sinusoid(300.0, 2.0, 0.3);
  const auto framing = make_framing(300.0);
  const auto quiet = radar::movement_power(as_displacement(mm), framing);
  for (double v : quiet) CHECK(v < 1e-3);

  for (std::size_t i = static_cast<std::size_t>(150 * kFs); i < static_cast<std::size_t>(151 * kFs); ++i) {
    mm[i] += 0.8 * std::sin(2 * M_PI * 6.0 * static_cast<double>(i) / kFs);
  }
  const auto p = radar::movement_power(as_displacement(mm), framing);
  const std::size_t burst = 299;  // frame [149.5, 150.5)
  std::vector<double> neighbours;
  for (std::size_t k = burst - 40; k < burst - 10; ++k) neighbours.push_back(p[k]);
  for (std::size_t k = burst + 10; k < burst + 40; ++k) neighbours.push_back(p[k]);
  CHECK(p[burst + 1] >= 10.0 * median(neighbours));
  CHECK_THROWS_AS(radar::movement_power(as_displacement(mm), Framing{}), std::invalid_argument);
}

TEST_CASE("effort envelope of a steady 2 mm sinusoid") {
  const auto framing = make_framing(180.0);
  const auto e = radar::breathing_effort(as_displacement(sinusoid(180.0, 2.0, 0.3)), framing);
  for (std::size_t k = 40; k + 40 < e.size(); ++k) CHECK(e[k] == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("effort collapses in central apnea and persists in obstructive apnea") {
  sim::PhysioConfig cfg;
  for (auto& v : cfg.vitals) v.movement_rate_per_h = 0.0;
  Hypnogram hyp;
  hyp.stages.assign(20, Stage::N2);
  const std::vector<RespiratoryEvent> events = {{EventKind::CentralApnea, 150.0, 20.0, 0.0},
                                                {EventKind::ObstructiveApnea, 400.0, 20.0, 4.0}};
  const auto iq = sim::synthesize_radar(hyp, events, cfg, 8);
  const auto f = radar::extract_features(iq, cfg.radar_fs_hz, cfg.radar_wavelength_m);
  auto mean_effort = [&](double a, double b) {
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < f.framing.n_frames; ++k) {
      if (f.framing.center(k) >= a && f.framing.center(k) < b) {
        acc += f.effort[k];
        ++n;
      }
    }
    return acc / static_cast<double>(n);
  };
  const double base = mean_effort(40.0, 140.0);
  CHECK(mean_effort(155.0, 165.0) < 0.1 * base);
  CHECK(mean_effort(405.0, 415.0) > 0.5 * base);
}

TEST_CASE("doppler peak sits at the planted rate") {
  const auto framing = make_framing(120.0);
  const auto dop = radar::breathing_doppler(as_displacement(sinusoid(120.0, 2.0, 0.3)), framing);
  CHECK(dop.bin_hz <= 0.05);
  CHECK(static_cast<double>(dop.n_bins() - 1) * dop.bin_hz >= 2.0 - 1e-9);
  for (std::size_t k = 20; k + 20 < framing.n_frames; ++k) CHECK(std::abs(dop.peak_hz(k) - 0.3) <= 0.025);
  CHECK(dop.peak_magnitude(60) == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("silence raises no doppler peak") {
  const auto framing = make_framing(60.0);
  const auto dop = radar::breathing_doppler(as_displacement(std::vector<double>(3000, 0.0)), framing);
  for (std::size_t k = 0; k < framing.n_frames; ++k) {
    for (std::size_t b = 0; b < dop.n_bins(); ++b) CHECK(dop.magnitude(k, b) <= dop.noise_mm);
    CHECK(dop.peak_hz(k) == 0.0);
  }
}

TEST_CASE("doppler peak follows a rate change within two frames") {
  auto mm = sinusoid(120.0, 2.0, 0.25);
  const auto second = sinusoid(120.0, 2.0, 0.45);
  mm.insert(mm.end(), second.begin(), second.end());
  const auto framing = make_framing(240.0);
  const auto dop = radar::breathing_doppler(as_displacement(mm), framing);
  std::size_t boundary = 0;
  while (framing.center(boundary) < 120.0) ++boundary;
  std::size_t switched = framing.n_frames;
  for (std::size_t k = 0; k < framing.n_frames; ++k) {
    if (framing.center(k) > 20.0 && std::abs(dop.peak_hz(k) - 0.45) < std::abs(dop.peak_hz(k) - 0.25)) {
      switched = k;
      break;
    }
  }
  CHECK(switched + 2 >= boundary);
  CHECK(switched <= boundary + 2);
}

TEST_CASE("breath period from the doppler map") {
  const auto framing = make_framing(600.0);
  auto mm = sinusoid(600.0, 2.0, 0.25);
  CHECK(radar::estimate_breath_period(radar::breathing_doppler(as_displacement(mm), framing)) ==
        doctest::Approx(4.0).epsilon(0.1));

  // Apnea-like pauses over 10 % of the night leave the estimate unchanged.
  for (double start : {50.0, 250.0, 450.0}) {
    for (std::size_t i = static_cast<std::size_t>(start * kFs); i < static_cast<std::size_t>((start + 20.0) * kFs); ++i) {
      mm[i] = 0.0;
    }
  }
  CHECK(radar::estimate_breath_period(radar::breathing_doppler(as_displacement(mm), framing)) ==
        doctest::Approx(4.0).epsilon(0.1));

  const auto silent = radar::breathing_doppler(as_displacement(std::vector<double>(30000, 0.0)), framing);
  try {
    radar::estimate_breath_period(silent);
    FAIL("expected an error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("no respiratory signal") != std::string::npos);
  }
}

TEST_CASE("feature frames are aligned and non-negative") {
  const auto p = sim::make_profile("f", Severity::Mild, 3);
  const auto b = sim::simulate_record(p, 1.0);
  const auto f = radar::extract_features(b.radar_iq, b.radar_fs_hz, b.radar_wavelength_m);
  CHECK(f.movement_power.size() == f.framing.n_frames);
  CHECK(f.effort.size() == f.framing.n_frames);
  CHECK(f.doppler.magnitude.rows == f.framing.n_frames);
  CHECK(f.low_confidence.size() == f.framing.n_frames);
  for (double v : f.movement_power) CHECK(v >= 0.0);
  for (double v : f.effort) CHECK(v >= 0.0);

  const auto r = radar::respiratory_ratios(f);
  CHECK(r.effort_ratio.size() == f.framing.n_frames);
  CHECK(r.flow_ratio.size() == f.framing.n_frames);

  std::ostringstream os;
  radar::write_debug_csv(f, os);
  const auto text = os.str();
  CHECK(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')) == f.framing.n_frames + 1);
}
