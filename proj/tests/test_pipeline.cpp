#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <omp.h>
#include <sstream>

#include "sleeprad/bundle_io.hpp"
#include "sleeprad/error.hpp"
#include "sleeprad/pipeline.hpp"
#include "sleeprad/svg_report.hpp"

using namespace sleeprad;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("sleeprad_pipeline_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::size_t count_of(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

// One cohort evaluation shared by the report tests.
const nlohmann::json& small_agreement() {
  static const nlohmann::json report = [] {
    pipeline::CohortConfig cfg;
    cfg.cohort_size = 8;
    cfg.severity_mix = {0.5, 0.0, 0.0, 0.5};
    cfg.duration_h = 4.0;
    cfg.seed = 3;
    cfg.folds = 2;
    const auto cohort = pipeline::make_cohort(cfg);
    const auto results = pipeline::evaluate_records(
        cohort.size(), [&](std::size_t i) { return sim::simulate_record(cohort[i], cfg.duration_h); },
        pipeline::Detector::make_oracle(), static_cast<std::size_t>(omp_get_max_threads()));
    return pipeline::agreement_report(results, cfg.folds, cfg.seed);
  }();
  return report;
}

}  // namespace

TEST_CASE("bundle round trip") {
  const auto bundle = sim::simulate_record(sim::make_profile("subj-x", Severity::Mild, 4), 1.0);
  const auto dir = fresh_dir("bundle");
  io::write_bundle(dir, bundle);
  for (const char* f : {"manifest.json", "radar_iq.f32", "ppg.f32", "spo2.f32", "truth_hypnogram.csv", "truth_events.csv"}) {
    CHECK_MESSAGE(fs::exists(dir / f), f);
  }
  const auto back = io::read_bundle(dir);
  CHECK(back.profile.subject_id == "subj-x");
  CHECK(back.radar_iq == bundle.radar_iq);
  CHECK(back.truth_hypnogram.stages == bundle.truth_hypnogram.stages);
  REQUIRE(back.truth_events.size() == bundle.truth_events.size());
  for (std::size_t i = 0; i < back.truth_events.size(); ++i) {
    CHECK(back.truth_events[i].kind == bundle.truth_events[i].kind);
    CHECK(back.truth_events[i].start_s == doctest::Approx(bundle.truth_events[i].start_s).epsilon(1e-6));
  }
  REQUIRE(back.ppg.size() == bundle.ppg.size());
  CHECK(back.ppg[1234] == doctest::Approx(bundle.ppg[1234]).epsilon(1e-6));

  fs::remove(dir / "ppg.f32");
  CHECK_THROWS_AS(io::read_bundle(dir), DataError);
  CHECK_THROWS_AS(io::read_bundle(dir / "missing"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("truncated channels are data errors") {
  const auto bundle = sim::simulate_record(sim::make_profile("subj-t", Severity::Healthy, 2), 1.0);
  const auto dir = fresh_dir("trunc");
  io::write_bundle(dir, bundle);
  fs::resize_file(dir / "spo2.f32", fs::file_size(dir / "spo2.f32") / 2);
  CHECK_THROWS_AS(io::read_bundle(dir), DataError);
  fs::remove_all(dir);
}

TEST_CASE("event and hypnogram CSV round trip") {
  const std::vector<RespiratoryEvent> ev = {{EventKind::MixedApnea, 12.5, 14.0, 3.5},
                                            {EventKind::CentralApnea, 80.0, 11.0, 0.0}};
  std::stringstream ss;
  io::write_events_csv(ss, ev);
  const auto back = io::read_events_csv(ss);
  REQUIRE(back.size() == 2);
  CHECK(back[0].kind == EventKind::MixedApnea);
  CHECK(back[1].duration_s == doctest::Approx(11.0));

  Hypnogram h;
  h.stages = {Stage::Wake, Stage::N1, Stage::REM};
  std::stringstream hs;
  io::write_hypnogram_csv(hs, h);
  CHECK(io::read_hypnogram_csv(hs).stages == h.stages);

  std::stringstream bad("start_s,duration_s,kind,desat_pct\n1,2,Snore,0\n");
  CHECK_THROWS_AS(io::read_events_csv(bad), DataError);
}

TEST_CASE("cohort apportionment and validation") {
  pipeline::CohortConfig cfg;
  cfg.cohort_size = 10;
  cfg.severity_mix = {0.25, 0.25, 0.25, 0.25};
  const auto cohort = pipeline::make_cohort(cfg);
  REQUIRE(cohort.size() == 10);
  std::array<int, 4> counts{};
  for (const auto& p : cohort) ++counts[static_cast<std::size_t>(p.severity_class)];
  for (int c : counts) {
    CHECK(c >= 2);
    CHECK(c <= 3);
  }
  CHECK(cohort[0].subject_id == "subj-000");
  CHECK(cohort[9].subject_id == "subj-009");
  CHECK(pipeline::make_cohort(cfg)[4].seed == cohort[4].seed);

  CHECK_NOTHROW(cfg.validate());
  auto bad = cfg;
  bad.severity_mix = {0.5, 0.5, 0.5, 0.0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.severity_mix = {1.2, -0.2, 0.0, 0.0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.cohort_size = 3;
  bad.folds = 4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("oracle pipeline grades a clean cohort") {
  const auto& report = small_agreement();
  CHECK(report["n_subjects"] == 8);
  CHECK(report["severity"]["agree"].get<int>() >= 7);
  CHECK(report["oahi"]["icc"]["value"].get<double>() >= 0.9);
}

TEST_CASE("agreement report layout") {
  const auto& report = small_agreement();
  for (const char* key : {"oahi", "cai", "tst_h", "stage_pct", "cutoffs", "severity", "staging", "events", "folds", "subjects"}) {
    CHECK_MESSAGE(report.contains(key), key);
  }
  REQUIRE(report["cutoffs"].size() == 3);
  CHECK(report["cutoffs"][0]["cutoff"] == 1.0);
  CHECK(report["cutoffs"][1]["cutoff"] == 5.0);
  CHECK(report["cutoffs"][2]["cutoff"] == 10.0);
  for (const char* scheme : {"WS", "WRLD", "WRNN"}) CHECK(report["staging"].contains(scheme));
  CHECK(report["folds"].size() == 2);
  const double lo = report["oahi"]["bland_altman"]["loa_low"];
  const double hi = report["oahi"]["bland_altman"]["loa_high"];
  CHECK((lo + hi) / 2 == doctest::Approx(report["oahi"]["bland_altman"]["bias"].get<double>()).epsilon(1e-9));
}

TEST_CASE("SVG figures") {
  const std::vector<double> ref = {1, 4, 9, 15, 30}, dev = {1.5, 3.5, 10, 14, 28};
  const auto ba = report::bland_altman_svg("OAHI", "events/h", ref, dev);
  CHECK(ba.rfind("<svg", 0) == 0);
  CHECK(count_of(ba, "class=\"ref-line\"") == 3);

  const auto roc = report::roc_svg("ROC", {{"> 5", {{0, 0}, {0.2, 0.8}, {1, 1}}}});
  CHECK(count_of(roc, "class=\"diagonal\"") == 1);
  CHECK(roc.find("&gt; 5") != std::string::npos);

  CHECK(count_of(report::scatter_svg("s", "x", "y", ref, dev), "class=\"identity\"") == 1);
  const auto heat = report::heatmap_svg("WS", {"Wake", "Sleep"}, {{45, 5}, {5, 45}});
  CHECK(heat.find("90.0%") != std::string::npos);
}

TEST_CASE("report writer") {
  const auto dir = fresh_dir("report");
  const auto files = report::write_report(small_agreement(), dir);
  for (const char* f : {"oahi_scatter.svg", "oahi_bland_altman.svg", "roc.svg", "confusion_WS.svg", "cutoffs.csv", "subjects.csv"}) {
    CHECK_MESSAGE(fs::exists(dir / f), f);
  }
  CHECK(files.size() >= 10);

  report::PlotToggles only_roc;
  only_roc.oahi = only_roc.confusion = only_roc.sleep_time = false;
  const auto fewer = fresh_dir("report_roc");
  const auto some = report::write_report(small_agreement(), fewer, only_roc);
  CHECK(fs::exists(fewer / "roc.svg"));
  CHECK_FALSE(fs::exists(fewer / "oahi_scatter.svg"));
  CHECK(some.size() < files.size());

  nlohmann::json empty = small_agreement();
  empty["subjects"] = nlohmann::json::array();
  CHECK_THROWS_AS(report::write_report(empty, dir), EmptyInputError);
  CHECK_THROWS_AS(report::write_report(nlohmann::json{{"subjects", 3}}, dir), DataError);
  fs::remove_all(dir);
  fs::remove_all(fewer);
}
