#pragma once

// Command-line front end: simulate, process, evaluate, report and train.
//
// Config file schema (flat JSON object, every key optional):
//   cohort_size      integer, default 24
//   severity_mix     [healthy, mild, moderate, severe], sums to 1
//   duration_h       hours per record, 1-12
//   seed             cohort, fold and bootstrap seed
//   train_seed       weight initialisation and shuffling seed
//   folds            k for grouped cross-validation, cohort_size >= k
//   detector         "oracle" or "model"
//   model            checkpoint file, or a directory of fold_<i>.ckpt
//   out              output directory
//   jobs             records processed concurrently
//   train_epochs, learning_rate
//   plot_oahi, plot_roc, plot_confusion, plot_sleep_time   booleans
// Command-line flags take precedence over the file.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sleeprad/pipeline.hpp"
#include "sleeprad/svg_report.hpp"

namespace sleeprad::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kDataError = 3, kEmptyInput = 4 };

struct ExperimentConfig {
  pipeline::CohortConfig cohort;
  std::uint64_t train_seed = 1;
  bool use_model = false;
  std::filesystem::path model;
  std::filesystem::path out_dir = "out";
  std::size_t jobs = 1;
  std::size_t train_epochs = 30;
  double learning_rate = 0.01;
  report::PlotToggles plots;

  /// Throws ConfigError on an invalid cohort, a model run without a
  /// checkpoint path or zero jobs.
  void validate() const;
};

/// Throws ConfigError on unknown keys, wrong types or unreadable files.
ExperimentConfig load_config(const std::filesystem::path& path);

/// Full command line including the program name. Returns the exit code;
/// diagnostics go to stderr.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace sleeprad::cli
