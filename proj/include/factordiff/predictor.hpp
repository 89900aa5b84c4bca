#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "factordiff/data.hpp"
#include "factordiff/graph.hpp"
#include "factordiff/layers.hpp"

namespace factordiff {

enum class Backbone { mlp, transformer };

std::string to_string(Backbone backbone);
Backbone parse_backbone(const std::string& name);

struct RegressorConfig {
  Backbone backbone = Backbone::mlp;
  std::size_t tokens = 8;
  std::size_t factors = 16;
  /// MLP hidden widths; empty gives a linear model over the flattened window.
  std::vector<std::size_t> hidden{64, 32};
  // Transformer backbone.
  std::size_t width = 32;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ffn_mult = 2;

  void validate() const;
  friend bool operator==(const RegressorConfig&, const RegressorConfig&) = default;
};

/// Maps a [k, d] factor window to one predicted return ratio. The network
/// output is de-standardized: y_hat = net(x) * target_std + target_mean.
class RegressorModel {
 public:
  RegressorModel(RegressorConfig config, std::uint64_t seed);
  RegressorModel(RegressorConfig config, ParameterSet params, double target_mean = 0.0,
                 double target_std = 1.0);

  const RegressorConfig& config() const noexcept { return config_; }
  const ParameterSet& parameters() const noexcept { return params_; }
  ParameterSet& parameters() noexcept { return params_; }
  double target_mean() const noexcept { return target_mean_; }
  double target_std() const noexcept { return target_std_; }
  void set_target_scaling(double mean, double stddev);

  /// Standardized network output for x [B, k, d]: shape [B].
  Var network(const ParamBinder& p, Var x) const;
  /// De-standardized prediction, shape [B].
  Var forward(const ParamBinder& p, Var x) const;

  double predict(const Tensor& x) const;
  std::vector<double> predict_batch(const Tensor& x) const;

  /// Gradient of (predict(x_i) - y_i)^2 with respect to x_i, per sample.
  /// x is [B, k, d] with y of length B, or [k, d] with one label.
  Tensor input_gradient(const Tensor& x, std::span<const double> y) const;

 private:
  void check_input(const Shape& shape) const;

  RegressorConfig config_;
  ParameterSet params_;
  Tensor positions_;
  double target_mean_ = 0.0;
  double target_std_ = 1.0;
};

struct RegressorTrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 256;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
  /// Decay of the per-sample training-loss moving average (bias-corrected).
  double loss_decay = 0.9;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Per-sample training losses keyed by (stock id, date).
using SampleKey = std::pair<std::int64_t, std::int64_t>;
using LossRegistry = std::map<SampleKey, double>;

/// Supplies the training batch for an epoch. Raw training returns the same
/// batch each time; augmented training returns fresh edits.
using BatchSource = std::function<SequenceBatch(std::size_t epoch)>;

struct TrainedRegressor {
  RegressorModel model;
  std::vector<double> train_mse;  // per epoch, de-standardized
  std::vector<double> valid_mse;  // per epoch; empty without a valid set
  std::size_t best_epoch = 0;
  LossRegistry sample_losses;
};

/// Minibatch momentum SGD with cosine decay on the standardized MSE. Target
/// statistics come from the epoch-0 batch. Returns the parameters with the
/// lowest validation MSE (the last epoch when `valid` is empty).
TrainedRegressor train_regressor(const BatchSource& source, const SequenceBatch& valid,
                                 const RegressorConfig& config, const RegressorTrainConfig& options);
TrainedRegressor train_regressor(const SequenceBatch& train, const SequenceBatch& valid,
                                 const RegressorConfig& config, const RegressorTrainConfig& options);

/// Per-sample losses in registry order looked up for a batch's metadata.
std::vector<double> lookup_losses(const LossRegistry& registry, const SequenceBatch& batch);

}  // namespace factordiff
