#include <doctest.h>

#include <cmath>
#include <nlohmann/json.hpp>

#include "sleeprad/features.hpp"
#include "sleeprad/scoring.hpp"
#include "sleeprad/sim.hpp"

using namespace sleeprad;
using scoring::StageScheme;

namespace {

// 0.5 s hop: frame k covers [k/2, k/2 + 1).
std::vector<double> probs_with_runs(std::size_t n, std::initializer_list<std::pair<double, double>> runs_s) {
  std::vector<double> p(n, 0.05);
  for (auto [from, to] : runs_s) {
    for (auto k = static_cast<std::size_t>(from * 2); k < static_cast<std::size_t>(to * 2); ++k) p[k] = 0.9;
  }
  return p;
}

std::vector<RespiratoryEvent> events_of(std::initializer_list<std::pair<EventKind, int>> counts) {
  std::vector<RespiratoryEvent> out;
  double t = 0.0;
  for (auto [kind, n] : counts) {
    for (int i = 0; i < n; ++i, t += 60.0) out.push_back({kind, t, 15.0, 4.0});
  }
  return out;
}

Hypnogram night(std::size_t epochs, std::size_t wake_prefix, std::size_t wake_total) {
  Hypnogram h;
  h.stages.assign(epochs, Stage::N2);
  for (std::size_t e = 0; e < wake_prefix; ++e) h.stages[e] = Stage::Wake;
  for (std::size_t e = 0; e < wake_total - wake_prefix; ++e) h.stages[epochs - 1 - e] = Stage::Wake;
  return h;
}

scoring::Candidate window(std::size_t first, std::size_t end) {
  return {static_cast<double>(first) * 0.5, static_cast<double>(end - first) * 0.5, first, end};
}

}  // namespace

TEST_CASE("event assembly at a 3 s breathing period") {
  const auto framing = make_framing(120.0);
  SUBCASE("a 12 s run is one event") {
    const auto ev = scoring::assemble_events(probs_with_runs(framing.n_frames, {{30, 42}}), framing, 3.0);
    REQUIRE(ev.size() == 1);
    CHECK(ev[0].duration_s == doctest::Approx(12.0).epsilon(0.05));
  }
  SUBCASE("a 4 s run is too short") {
    CHECK(scoring::assemble_events(probs_with_runs(framing.n_frames, {{30, 34}}), framing, 3.0).empty());
  }
  SUBCASE("two 8 s runs 1 s apart merge") {
    const auto ev = scoring::assemble_events(probs_with_runs(framing.n_frames, {{30, 38}, {39, 47}}), framing, 3.0);
    REQUIRE(ev.size() == 1);
    CHECK(ev[0].duration_s == doctest::Approx(17.0).epsilon(0.05));
  }
  SUBCASE("short runs merged into a long one survive") {
    const auto ev = scoring::assemble_events(probs_with_runs(framing.n_frames, {{30, 34}, {35, 39}}), framing, 3.0);
    CHECK(ev.size() == 1);
  }
  SUBCASE("empty input and bad period") {
    const Framing none{};
    CHECK(scoring::assemble_events({}, none, 3.0).empty());
    CHECK_THROWS_AS(scoring::assemble_events(probs_with_runs(framing.n_frames, {}), framing, 0.0), std::invalid_argument);
  }
}

TEST_CASE("event typing rules") {
  const std::size_t n = 100;
  std::vector<double> effort(n, 1.0), flow(n, 1.0);
  const std::vector<ppg::Desaturation> desat = {{25.0, 15.0, 4.0}};

  SUBCASE("no effort throughout is central") {
    for (std::size_t k = 40; k < 60; ++k) effort[k] = flow[k] = 0.02;
    CHECK(scoring::classify_event(window(40, 60), effort, flow, {}).kind == EventKind::CentralApnea);
  }
  SUBCASE("effort returning in the second half is mixed") {
    for (std::size_t k = 40; k < 60; ++k) flow[k] = 0.02;
    for (std::size_t k = 40; k < 50; ++k) effort[k] = 0.02;
    CHECK(scoring::classify_event(window(40, 60), effort, flow, {}).kind == EventKind::MixedApnea);
  }
  SUBCASE("flow gone with effort present is obstructive") {
    for (std::size_t k = 40; k < 60; ++k) flow[k] = 0.05;
    CHECK(scoring::classify_event(window(40, 60), effort, flow, {}).kind == EventKind::ObstructiveApnea);
  }
  SUBCASE("partial drop needs a desaturation") {
    for (std::size_t k = 40; k < 60; ++k) flow[k] = 0.5;
    const auto with = scoring::classify_event(window(40, 60), effort, flow, desat);
    CHECK(with.kind == EventKind::ObstructiveHypopnea);
    CHECK(with.desat_pct == doctest::Approx(4.0));
    const auto without = scoring::classify_event(window(40, 60), effort, flow, {});
    CHECK_FALSE(without.kind.has_value());
    CHECK_FALSE(without.diagnostic.empty());
  }
  SUBCASE("normal breathing is dropped") {
    CHECK_FALSE(scoring::classify_event(window(40, 60), effort, flow, desat).kind.has_value());
  }
}

TEST_CASE("typing of simulated events") {
  int central = 0, central_ok = 0, obstructive = 0, obstructive_ok = 0;
  for (std::uint64_t seed = 5; seed < 8; ++seed) {
    const auto bundle = sim::simulate_record(sim::make_profile("c", Severity::Severe, seed), 4.0);
    const auto f = features::compute(bundle);
    const double hop = f.framing().hop_s;
    for (const auto& e : bundle.truth_events) {
      if (e.kind != EventKind::CentralApnea && e.kind != EventKind::ObstructiveApnea) continue;
      scoring::Candidate w;
      w.first_frame = static_cast<std::size_t>(std::ceil(e.start_s / hop));
      w.end_frame = std::min(f.framing().n_frames, static_cast<std::size_t>(e.end_s() / hop) - 1);
      w.start_s = e.start_s;
      w.duration_s = e.duration_s;
      const auto c = scoring::classify_event(w, f.ratios.effort_ratio, f.ratios.flow_ratio, f.ppg.desats);
      if (e.kind == EventKind::CentralApnea) {
        ++central;
        central_ok += c.kind == EventKind::CentralApnea;
      } else {
        ++obstructive;
        obstructive_ok += c.kind == EventKind::ObstructiveApnea;
      }
    }
  }
  REQUIRE(central >= 10);
  REQUIRE(obstructive >= 30);
  CHECK(central_ok >= 0.9 * central);
  CHECK(obstructive_ok >= 0.9 * obstructive);
}

TEST_CASE("event indices") {
  const auto mix = events_of({{EventKind::ObstructiveApnea, 3},
                              {EventKind::MixedApnea, 2},
                              {EventKind::ObstructiveHypopnea, 5},
                              {EventKind::CentralApnea, 4}});
  CHECK(scoring::compute_oahi(mix, 7.0) == doctest::Approx(10.0 / 7.0));
  CHECK(scoring::compute_oahi(events_of({{EventKind::ObstructiveApnea, 17}}), 8.0) == doctest::Approx(2.125));
  CHECK(scoring::compute_oahi({}, 8.0) == 0.0);
  CHECK(scoring::compute_cai(events_of({{EventKind::CentralApnea, 4}}), 8.0) == doctest::Approx(0.5));
  CHECK(scoring::compute_cai({}, 8.0) == 0.0);
  CHECK_THROWS_AS(scoring::compute_oahi(mix, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(scoring::compute_cai(mix, 0.0), std::invalid_argument);
}

TEST_CASE("severity grading boundaries") {
  CHECK(scoring::grade_severity(0.0) == Severity::Healthy);
  CHECK(scoring::grade_severity(1.0) == Severity::Healthy);
  CHECK(scoring::grade_severity(1.01) == Severity::Mild);
  CHECK(scoring::grade_severity(5.0) == Severity::Mild);
  CHECK(scoring::grade_severity(10.0) == Severity::Moderate);
  CHECK(scoring::grade_severity(10.5) == Severity::Severe);
}

TEST_CASE("sleep architecture") {
  const auto h = night(960, 10, 120);
  const auto r = scoring::stage_metrics(h, 8.0);
  CHECK(r.tst_h == doctest::Approx(7.0));
  CHECK(r.sleep_efficiency_pct == doctest::Approx(87.5));
  CHECK(r.sleep_latency_min == doctest::Approx(5.0));
  CHECK(r.wake_epochs == 120);
  CHECK(r.stage_pct[1] == doctest::Approx(100.0));
  CHECK_THROWS_AS(scoring::stage_metrics(h, 0.0), std::invalid_argument);

  auto mixed = h;
  for (std::size_t e = 10; e < 850; ++e) mixed.stages[e] = kAllStages[1 + e % 4];
  const auto m = scoring::stage_metrics(mixed, 8.0);
  CHECK(m.stage_pct[0] + m.stage_pct[1] + m.stage_pct[2] + m.stage_pct[3] == doctest::Approx(100.0).epsilon(1e-3));
}

TEST_CASE("full report and JSON round trip") {
  const auto h = night(960, 10, 120);
  const auto ev = events_of({{EventKind::ObstructiveApnea, 50}, {EventKind::CentralApnea, 7}});
  const auto r = scoring::make_report(h, 8.0, ev, 6.5);
  CHECK(r.oahi == doctest::Approx(50.0 / 7.0));
  CHECK(r.cai == doctest::Approx(1.0));
  CHECK(r.odi == 6.5);
  CHECK(r.severity == Severity::Moderate);
  CHECK(r.event_counts[0] == 50);

  const auto back = scoring::report_from_json(scoring::to_json(r));
  CHECK(back.oahi == r.oahi);
  CHECK(back.tst_h == r.tst_h);
  CHECK(back.stage_pct == r.stage_pct);
  CHECK(back.severity == r.severity);
  CHECK(back.event_counts == r.event_counts);
}

TEST_CASE("stage collapsing") {
  Hypnogram h;
  h.stages = {Stage::Wake, Stage::N1, Stage::N2, Stage::N3, Stage::REM};
  const auto wrnn = scoring::collapse_stages(h, StageScheme::WRNN);
  CHECK(wrnn.labels == std::vector<std::uint8_t>{0, 2, 3, 4, 1});

  const auto wrld = scoring::collapse_stages(h, StageScheme::WRLD);
  const auto& names = scoring::class_names(StageScheme::WRLD);
  CHECK(names[wrld.labels[1]] == "Light");
  CHECK(names[wrld.labels[2]] == "Light");
  CHECK(names[wrld.labels[3]] == "Deep");
  CHECK(names[wrld.labels[4]] == "REM");

  const auto ws = scoring::collapse_stages(h, StageScheme::WS);
  CHECK(ws.labels == std::vector<std::uint8_t>{0, 1, 1, 1, 1});
  CHECK(scoring::num_classes(StageScheme::WS) == 2);

  CHECK(scoring::collapse_stages(wrld, StageScheme::WS).labels == ws.labels);
  CHECK(scoring::collapse_stages(scoring::collapse_stages(wrnn, StageScheme::WRLD), StageScheme::WS).labels == ws.labels);
  CHECK_THROWS_AS(scoring::collapse_stages(ws, StageScheme::WRLD), std::invalid_argument);
}

TEST_CASE("event matching by overlap") {
  const std::vector<RespiratoryEvent> truth = {{EventKind::ObstructiveApnea, 100.0, 20.0, 0.0},
                                               {EventKind::ObstructiveApnea, 300.0, 20.0, 0.0}};
  const std::vector<RespiratoryEvent> detected = {{EventKind::ObstructiveApnea, 110.0, 20.0, 0.0},
                                                  {EventKind::ObstructiveApnea, 315.0, 20.0, 0.0},
                                                  {EventKind::CentralApnea, 500.0, 15.0, 0.0}};
  const auto m = scoring::match_events(detected, truth);
  CHECK(m.true_positive == 1);
  CHECK(m.false_positive == 2);
  CHECK(m.false_negative == 1);
  CHECK(m.recall() == doctest::Approx(0.5));
  CHECK(m.precision() == doctest::Approx(1.0 / 3.0));
  CHECK(scoring::match_events(detected, truth, 0.25).true_positive == 2);
}
