#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "factordiff/data.hpp"
#include "factordiff/denoiser.hpp"
#include "factordiff/engine.hpp"
#include "factordiff/eval.hpp"
#include "factordiff/predictor.hpp"
#include "factordiff/schedule.hpp"

namespace factordiff {

/// Everything one experiment needs, read from a sectioned key=value file:
///
///   [data]
///   stocks = 200
///   snr = 0.25
///
/// Every key is optional; unknown sections and keys are rejected. The full
/// key list with defaults comes from `RunConfig::describe()`.
struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  MarketConfig market;
  std::size_t target_stocks = 100;
  /// Fraction of target training labels replaced by other samples' labels.
  double label_noise = 0.0;
  /// none, threshold or percentile; applied to predictor training sets only.
  std::string label_filter = "none";
  double label_low = -std::numeric_limits<double>::infinity();
  double label_high = std::numeric_limits<double>::infinity();

  int schedule_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  /// Width, depth and conditioning switches. Shapes and label scale are
  /// taken from the data when training starts.
  DenoiserConfig denoiser;
  TrainRunConfig diffusion;
  EditRunConfig edit;
  RegressorConfig predictor;
  RegressorTrainConfig predictor_train;
  AugmentMode augment = AugmentMode::off;
  BacktestOptions backtest;

  RunConfig();

  /// Applies every key in `text` on top of the current values.
  void apply_ini(const std::string& text);
  /// Applies one "section.key" = value override.
  void set(const std::string& key, const std::string& value);
  static RunConfig from_file(const std::filesystem::path& path);

  void validate() const;
  /// All settings except `run.workers` (which never changes results).
  std::string to_json() const;
  /// Every key as "section.key = default  # description" lines.
  static std::string describe();

  Schedule schedule() const;
  std::optional<LabelFilter> filter() const;
  /// Propagates `seed` and `workers` into the per-module configs.
  void sync_seeds();
};

}  // namespace factordiff
