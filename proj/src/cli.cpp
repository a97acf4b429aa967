#include "sleeprad/cli.hpp"

#include <algorithm>
#include <exception>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sleeprad/bundle_io.hpp"
#include "sleeprad/error.hpp"
#include "sleeprad/features.hpp"
#include "sleeprad/model.hpp"
#include "sleeprad/stats.hpp"

namespace sleeprad::cli {
namespace fs = std::filesystem;

void ExperimentConfig::validate() const {
  cohort.validate();
  if (use_model && model.empty()) throw ConfigError("model mode needs a checkpoint path");
  if (jobs == 0) throw ConfigError("jobs must be at least 1");
  if (train_epochs == 0) throw ConfigError("train_epochs must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
}

ExperimentConfig load_config(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(path));
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");

  ExperimentConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "cohort_size") c.cohort.cohort_size = v.get<std::size_t>();
      else if (key == "severity_mix") c.cohort.severity_mix = v.get<std::vector<double>>();
      else if (key == "duration_h") c.cohort.duration_h = v.get<double>();
      else if (key == "seed") c.cohort.seed = v.get<std::uint64_t>();
      else if (key == "train_seed") c.train_seed = v.get<std::uint64_t>();
      else if (key == "folds") c.cohort.folds = v.get<std::size_t>();
      else if (key == "detector") {
        const auto d = v.get<std::string>();
        if (d != "oracle" && d != "model") throw ConfigError("detector must be \"oracle\" or \"model\"");
        c.use_model = d == "model";
      } else if (key == "model") c.model = v.get<std::string>();
      else if (key == "out") c.out_dir = v.get<std::string>();
      else if (key == "jobs") c.jobs = v.get<std::size_t>();
      else if (key == "train_epochs") c.train_epochs = v.get<std::size_t>();
      else if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "plot_oahi") c.plots.oahi = v.get<bool>();
      else if (key == "plot_roc") c.plots.roc = v.get<bool>();
      else if (key == "plot_confusion") c.plots.confusion = v.get<bool>();
      else if (key == "plot_sleep_time") c.plots.sleep_time = v.get<bool>();
      else throw ConfigError("unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " has a value of the wrong type: " + e.what());
  }
  return c;
}

namespace {

// Flags as parsed, applied on top of the config file only when given.
struct Flags {
  std::string config;
  std::uint64_t seed = 0;
  std::size_t jobs = 0;
  bool oracle = false;
  std::string model;
  std::string out;
  std::size_t folds = 0;
  std::size_t cohort = 0;
  double duration_h = 0.0;
  std::vector<double> mix;
  std::size_t epochs = 0;
  std::string input;

  CLI::Option* seed_opt = nullptr;
  CLI::Option* jobs_opt = nullptr;
  CLI::Option* model_opt = nullptr;
  CLI::Option* out_opt = nullptr;
  CLI::Option* folds_opt = nullptr;
  CLI::Option* cohort_opt = nullptr;
  CLI::Option* duration_opt = nullptr;
  CLI::Option* mix_opt = nullptr;
  CLI::Option* epochs_opt = nullptr;
};

ExperimentConfig resolve(const Flags& f) {
  ExperimentConfig c = f.config.empty() ? ExperimentConfig{} : load_config(f.config);
  auto given = [](const CLI::Option* o) { return o != nullptr && o->count() > 0; };
  if (given(f.seed_opt)) c.cohort.seed = f.seed;
  if (given(f.jobs_opt)) c.jobs = f.jobs;
  if (given(f.out_opt)) c.out_dir = f.out;
  if (given(f.folds_opt)) c.cohort.folds = f.folds;
  if (given(f.cohort_opt)) c.cohort.cohort_size = f.cohort;
  if (given(f.duration_opt)) c.cohort.duration_h = f.duration_h;
  if (given(f.mix_opt)) c.cohort.severity_mix = f.mix;
  if (given(f.epochs_opt)) c.train_epochs = f.epochs;
  if (f.oracle) {
    c.use_model = false;
    c.model.clear();
  }
  if (given(f.model_opt)) {
    c.use_model = true;
    c.model = f.model;
  }
  c.validate();
  return c;
}

struct CohortEntry {
  std::string id;
  Severity severity = Severity::Healthy;
  fs::path dir;
};

// Bundle directories directly under `root`, ordered by name.
std::vector<CohortEntry> discover_cohort(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("cohort directory " + root.string() + " does not exist");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && fs::is_regular_file(e.path() / "manifest.json")) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<CohortEntry> out;
  for (const auto& d : dirs) {
    try {
      const auto m = nlohmann::json::parse(io::read_text(d / "manifest.json"));
      const auto sev = parse_severity(m.at("severity").get<std::string>());
      if (!sev) throw DataError("unknown severity in " + d.string());
      out.push_back({m.at("subject_id").get<std::string>(), *sev, d});
    } catch (const nlohmann::json::exception& e) {
      throw DataError("malformed manifest in " + d.string() + ": " + e.what());
    }
  }
  if (out.empty()) throw EmptyInputError("no record bundles under " + root.string());
  return out;
}

std::vector<std::size_t> fold_of(const std::vector<CohortEntry>& cohort, std::size_t k, std::uint64_t seed) {
  std::vector<std::string> ids;
  std::vector<int> labels;
  for (const auto& e : cohort) {
    ids.push_back(e.id);
    labels.push_back(static_cast<int>(e.severity));
  }
  return stats::grouped_kfold(ids, labels, k, seed);
}

fs::path fold_checkpoint(const fs::path& dir, std::size_t fold) {
  return dir / ("fold_" + std::to_string(fold) + ".ckpt");
}

int cmd_simulate(const ExperimentConfig& c) {
  const auto profiles = pipeline::make_cohort(c.cohort);
  fs::create_directories(c.out_dir);
  std::vector<std::exception_ptr> errors(profiles.size());
  const auto n = static_cast<std::ptrdiff_t>(profiles.size());
#pragma omp parallel for num_threads(static_cast<int>(c.jobs)) schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      const auto& p = profiles[static_cast<std::size_t>(i)];
      io::write_bundle(c.out_dir / p.subject_id, sim::simulate_record(p, c.cohort.duration_h));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::cout << "wrote " << profiles.size() << " record bundles to " << c.out_dir.string() << '\n';
  return kOk;
}

pipeline::Detector make_detector(const ExperimentConfig& c) {
  if (!c.use_model) return pipeline::Detector::make_oracle();
  if (fs::is_directory(c.model)) throw ConfigError("process needs a checkpoint file, not a directory");
  return pipeline::Detector::from_checkpoint(c.model);
}

int cmd_process(const ExperimentConfig& c, const fs::path& bundle_dir) {
  const auto bundle = io::read_bundle(bundle_dir);
  const auto det = make_detector(c);
  const auto r = pipeline::process(bundle, det);

  fs::create_directories(c.out_dir);
  nlohmann::json j;
  j["subject_id"] = r.subject_id;
  j["detector"] = det.is_oracle() ? "oracle" : "model";
  j["report"] = scoring::to_json(r.report);
  j["breath_period_s"] = r.breath_period_s;
  j["n_events"] = r.events.size();
  j["diagnostics"] = r.diagnostics;
  io::write_text(c.out_dir / "report.json", j.dump(2) + "\n");
  std::ostringstream hyp, ev;
  io::write_hypnogram_csv(hyp, r.hypnogram);
  io::write_events_csv(ev, r.events);
  io::write_text(c.out_dir / "hypnogram.csv", hyp.str());
  io::write_text(c.out_dir / "events.csv", ev.str());
  std::cout << r.subject_id << ": OAHI " << r.report.oahi << " events/h, " << to_string(r.report.severity) << '\n';
  return kOk;
}

int cmd_evaluate(const ExperimentConfig& c, const std::string& cohort_dir) {
  std::vector<CohortEntry> cohort;
  std::vector<sim::SubjectProfile> profiles;
  if (cohort_dir.empty()) {
    profiles = pipeline::make_cohort(c.cohort);
    for (const auto& p : profiles) cohort.push_back({p.subject_id, p.severity_class, {}});
  } else {
    cohort = discover_cohort(cohort_dir);
  }
  const std::size_t k = c.cohort.folds;
  if (cohort.size() < k) throw ConfigError("cohort is smaller than the fold count");

  auto load = [&](std::size_t i) {
    return profiles.empty() ? io::read_bundle(cohort[i].dir) : sim::simulate_record(profiles[i], c.cohort.duration_h);
  };

  std::vector<pipeline::Detector> detectors;
  std::vector<std::size_t> detector_index(cohort.size(), 0);
  if (!c.use_model) {
    detectors.push_back(pipeline::Detector::make_oracle());
  } else if (fs::is_directory(c.model)) {
    // Each subject is scored by the model trained without its fold.
    for (std::size_t f = 0; f < k; ++f) detectors.push_back(pipeline::Detector::from_checkpoint(fold_checkpoint(c.model, f)));
    detector_index = fold_of(cohort, k, c.cohort.seed);
  } else {
    detectors.push_back(pipeline::Detector::from_checkpoint(c.model));
  }

  const auto results = pipeline::evaluate_records(
      cohort.size(), load, [&](std::size_t i) -> const pipeline::Detector& { return detectors[detector_index[i]]; },
      c.jobs);
  auto report = pipeline::agreement_report(results, k, c.cohort.seed);
  report["detector"] = c.use_model ? "model" : "oracle";

  fs::create_directories(c.out_dir);
  io::write_text(c.out_dir / "agreement.json", report.dump(2) + "\n");
  std::cout << "evaluated " << results.size() << " subjects; OAHI ICC "
            << (report.contains("oahi") ? report["oahi"]["icc"]["value"].dump() : std::string("n/a")) << '\n';
  return kOk;
}

int cmd_report(const ExperimentConfig& c, const fs::path& agreement_path) {
  nlohmann::json j;
  const auto text = io::read_text(agreement_path);
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw EmptyInputError("agreement report " + agreement_path.string() + " is empty");
  }
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("agreement report is not valid JSON: " + std::string(e.what()));
  }
  const auto files = report::write_report(j, c.out_dir, c.plots);
  std::cout << "wrote " << files.size() << " files to " << c.out_dir.string() << '\n';
  return kOk;
}

int cmd_train(const ExperimentConfig& c, const std::string& cohort_dir) {
  const auto cohort = discover_cohort(cohort_dir);
  const std::size_t k = c.cohort.folds;
  if (cohort.size() < k) throw ConfigError("cohort is smaller than the fold count");

  std::vector<model::Sample> samples(cohort.size());
  std::vector<std::exception_ptr> errors(cohort.size());
  const auto n = static_cast<std::ptrdiff_t>(cohort.size());
#pragma omp parallel for num_threads(static_cast<int>(c.jobs)) schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      const auto bundle = io::read_bundle(cohort[static_cast<std::size_t>(i)].dir);
      samples[static_cast<std::size_t>(i)] = pipeline::make_sample(features::compute(bundle), bundle);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  const auto fold = fold_of(cohort, k, c.cohort.seed);
  fs::create_directories(c.out_dir);
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<Matrix> raw;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (fold[i] != f) raw.push_back(samples[i].inputs);
    }
    const auto norm = features::Normalizer::fit(raw);
    std::vector<model::Sample> train_set;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (fold[i] == f) continue;
      train_set.push_back(samples[i]);
      norm.apply(train_set.back().inputs);
    }
    model::ModelConfig mc;
    mc.seed = mix_seed(c.train_seed, f);
    model::Network net(mc);
    model::TrainSpec spec;
    spec.max_epochs = c.train_epochs;
    spec.learning_rate = c.learning_rate;
    spec.seed = mix_seed(c.train_seed, 1000 + f);
    const auto hist = model::train(net, train_set, {}, spec);
    model::save_checkpoint(fold_checkpoint(c.out_dir, f), net, norm);
    std::cout << "fold " << f << ": " << train_set.size() << " records, " << hist.steps << " steps, final loss "
              << (hist.train_loss.empty() ? 0.0 : hist.train_loss.back()) << '\n';
  }
  return kOk;
}

void add_common(CLI::App* sub, Flags& f, bool detector, bool cohort_shape) {
  sub->add_option("--config", f.config, "flat JSON experiment config")->check(CLI::ExistingFile);
  f.seed_opt = sub->add_option("--seed", f.seed, "cohort, fold and bootstrap seed");
  f.jobs_opt = sub->add_option("--jobs", f.jobs, "records processed concurrently");
  f.out_opt = sub->add_option("--out", f.out, "output directory");
  if (detector) {
    auto* oracle = sub->add_flag("--oracle", f.oracle, "score with the rule-based oracle (default)");
    f.model_opt = sub->add_option("--model", f.model, "checkpoint file, or a directory of per-fold checkpoints");
    oracle->excludes(f.model_opt);
  }
  if (cohort_shape) {
    f.folds_opt = sub->add_option("--folds", f.folds, "cross-validation folds");
    f.cohort_opt = sub->add_option("--cohort", f.cohort, "number of simulated subjects");
    f.duration_opt = sub->add_option("--duration-h", f.duration_h, "hours per record");
    f.mix_opt = sub->add_option("--mix", f.mix, "severity mix: healthy mild moderate severe")->expected(4);
  }
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Contactless pediatric sleep apnea screening: simulation, scoring and evaluation"};
  app.require_subcommand(1);

  Flags sim_f, proc_f, eval_f, rep_f, train_f;
  auto* simulate = app.add_subcommand("simulate", "write a synthetic cohort of record bundles");
  add_common(simulate, sim_f, false, true);

  auto* process = app.add_subcommand("process", "score one record bundle");
  add_common(process, proc_f, true, false);
  process->add_option("bundle", proc_f.input, "record bundle directory")->required();

  auto* evaluate = app.add_subcommand("evaluate", "agreement statistics of a cohort against its ground truth");
  add_common(evaluate, eval_f, true, true);
  evaluate->add_option("cohort_dir", eval_f.input, "cohort directory; simulated in memory when omitted");

  auto* report = app.add_subcommand("report", "SVG figures and CSV tables from an agreement report");
  add_common(report, rep_f, false, false);
  report->add_option("agreement", rep_f.input, "agreement.json written by evaluate")->required();

  auto* train = app.add_subcommand("train", "train one network per cross-validation fold");
  add_common(train, train_f, false, true);
  train->add_option("cohort_dir", train_f.input, "cohort directory")->required();
  train_f.epochs_opt = train->add_option("--epochs", train_f.epochs, "passes over the training records");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(resolve(sim_f));
    if (process->parsed()) return cmd_process(resolve(proc_f), proc_f.input);
    if (evaluate->parsed()) return cmd_evaluate(resolve(eval_f), eval_f.input);
    if (report->parsed()) return cmd_report(resolve(rep_f), rep_f.input);
    if (train->parsed()) return cmd_train(resolve(train_f), train_f.input);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const EmptyInputError& e) {
    std::cerr << "empty input: " << e.what() << '\n';
    return kEmptyInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace sleeprad::cli
