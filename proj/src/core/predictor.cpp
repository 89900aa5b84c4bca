#include "factordiff/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "factordiff/denoiser.hpp"
#include "factordiff/error.hpp"
#include "factordiff/ops.hpp"
#include "factordiff/optim.hpp"

namespace factordiff {

namespace {

std::string mlp_layer(std::size_t i) { return "mlp." + std::to_string(i); }
std::string block_name(std::size_t i) { return "blocks." + std::to_string(i); }

}  // namespace

std::string to_string(Backbone backbone) {
  return backbone == Backbone::mlp ? "mlp" : "transformer";
}

Backbone parse_backbone(const std::string& name) {
  if (name == "mlp") return Backbone::mlp;
  if (name == "transformer") return Backbone::transformer;
  fail(ErrorKind::config, "unknown backbone '" + name + "' (expected mlp or transformer)");
}

void RegressorConfig::validate() const {
  require(tokens > 0 && factors > 0, ErrorKind::config, "regressor needs tokens > 0 and factors > 0");
  for (std::size_t h : hidden) {
    require(h > 0, ErrorKind::config, "regressor hidden widths must be positive");
  }
  if (backbone == Backbone::transformer) {
    require(width > 0 && width % 2 == 0, ErrorKind::config, "regressor width must be positive and even");
    require(heads > 0 && width % heads == 0, ErrorKind::config, "regressor width must divide by heads");
    require(layers > 0 && ffn_mult > 0, ErrorKind::config, "regressor needs layers > 0 and ffn_mult > 0");
  }
}

void RegressorTrainConfig::validate() const {
  require(batch_size > 0, ErrorKind::config, "predictor batch_size must be positive");
  require(lr > 0.0 && std::isfinite(lr), ErrorKind::config, "predictor lr must be positive");
  require(momentum >= 0.0 && momentum < 1.0, ErrorKind::config, "predictor momentum must be in [0, 1)");
  require(weight_decay >= 0.0, ErrorKind::config, "predictor weight_decay must be non-negative");
  require(loss_decay >= 0.0 && loss_decay < 1.0, ErrorKind::config, "loss_decay must be in [0, 1)");
}

RegressorModel::RegressorModel(RegressorConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  if (config_.backbone == Backbone::mlp) {
    std::size_t in = config_.tokens * config_.factors;
    for (std::size_t i = 0; i < config_.hidden.size(); ++i) {
      layers::init_linear(params_, mlp_layer(i), in, config_.hidden[i], rng);
      in = config_.hidden[i];
    }
    layers::init_linear(params_, "head", in, 1, rng);
  } else {
    const std::size_t w = config_.width;
    layers::init_linear(params_, "token_proj", config_.factors, w, rng);
    for (std::size_t i = 0; i < config_.layers; ++i) {
      const std::string b = block_name(i);
      layers::init_norm(params_, b + ".ln1", w);
      layers::init_attention(params_, b + ".attn", w, rng);
      layers::init_norm(params_, b + ".ln2", w);
      layers::init_feed_forward(params_, b + ".ffn", w, w * config_.ffn_mult, rng);
    }
    layers::init_norm(params_, "final_ln", w);
    layers::init_linear(params_, "head", w, 1, rng);
    positions_ = layers::sinusoid_table(config_.tokens, w);
  }
}

RegressorModel::RegressorModel(RegressorConfig config, ParameterSet params, double target_mean,
                               double target_std)
    : config_(std::move(config)), params_(std::move(params)) {
  const RegressorModel reference(config_, 0);
  for (const auto& [name, value] : reference.params_) {
    auto it = params_.find(name);
    require(it != params_.end(), ErrorKind::format, "regressor parameter '" + name + "' missing");
    require(it->second.shape() == value.shape(), ErrorKind::format,
            "regressor parameter '" + name + "' has shape " + to_string(it->second.shape()) +
                ", expected " + to_string(value.shape()));
  }
  require(params_.size() == reference.params_.size(), ErrorKind::format,
          "regressor parameter set has unexpected entries");
  positions_ = reference.positions_;
  set_target_scaling(target_mean, target_std);
}

void RegressorModel::set_target_scaling(double mean, double stddev) {
  require(std::isfinite(mean) && std::isfinite(stddev) && stddev > 0.0, ErrorKind::domain,
          "target scaling needs a finite mean and a positive std");
  target_mean_ = mean;
  target_std_ = stddev;
}

void RegressorModel::check_input(const Shape& shape) const {
  require(shape.size() == 3 && shape[1] == config_.tokens && shape[2] == config_.factors,
          ErrorKind::shape,
          "regressor expects [B," + std::to_string(config_.tokens) + "," +
              std::to_string(config_.factors) + "], got " + to_string(shape));
}

Var RegressorModel::network(const ParamBinder& p, Var x) const {
  check_input(x.shape());
  const std::size_t batch = x.shape()[0];
  Var out;
  if (config_.backbone == Backbone::mlp) {
    Var h = ops::reshape(x, {batch, config_.tokens * config_.factors});
    for (std::size_t i = 0; i < config_.hidden.size(); ++i) {
      h = ops::relu(layers::linear(p, mlp_layer(i), h));
    }
    out = layers::linear(p, "head", h);
  } else {
    Var h = ops::add(layers::linear(p, "token_proj", x), p.graph().constant(positions_));
    for (std::size_t i = 0; i < config_.layers; ++i) {
      const std::string b = block_name(i);
      h = ops::add(h, layers::self_attention(p, b + ".attn", layers::norm(p, b + ".ln1", h),
                                             config_.heads));
      h = ops::add(h, layers::feed_forward(p, b + ".ffn", layers::norm(p, b + ".ln2", h)));
    }
    Var pooled = ops::mean_axis(layers::norm(p, "final_ln", h), 1);
    out = layers::linear(p, "head", pooled);
  }
  return ops::reshape(out, {batch});
}

Var RegressorModel::forward(const ParamBinder& p, Var x) const {
  return ops::add_scalar(ops::scale(network(p, x), target_std_), target_mean_);
}

std::vector<double> RegressorModel::predict_batch(const Tensor& x) const {
  Graph g;
  ParamBinder p(g, params_, false);
  return forward(p, g.constant(x)).value().to_vector();
}

double RegressorModel::predict(const Tensor& x) const {
  require(x.rank() == 2, ErrorKind::shape, "predict expects one [k, d] window, got " + to_string(x.shape()));
  return predict_batch(x.reshape({1, x.dim(0), x.dim(1)}))[0];
}

Tensor RegressorModel::input_gradient(const Tensor& x, std::span<const double> y) const {
  const bool single = x.rank() == 2;
  const Tensor xb = single ? x.reshape({1, x.dim(0), x.dim(1)}) : x;
  check_input(xb.shape());
  require(y.size() == xb.dim(0), ErrorKind::shape,
          "input_gradient needs one label per sample: " + std::to_string(y.size()) + " labels for " +
              std::to_string(xb.dim(0)) + " samples");
  Graph g;
  ParamBinder p(g, params_, false);
  Var input = g.input("x", xb);
  Var residual = ops::sub(forward(p, input), g.constant(Tensor({y.size()}, {y.begin(), y.end()})));
  // Samples are independent, so the gradient of the summed squares is the
  // per-sample gradient for every window.
  const Tensor grad = g.backward(ops::sum(ops::square(residual))).input("x");
  return single ? grad.reshape(x.shape()) : grad;
}

TrainedRegressor train_regressor(const BatchSource& source, const SequenceBatch& valid,
                                 const RegressorConfig& config, const RegressorTrainConfig& train) {
  train.validate();
  RegressorModel model(config, train.seed);

  SequenceBatch batch = source(0);
  require(batch.size() > 0, ErrorKind::domain, "train_regressor: empty training set");
  {
    const double n = static_cast<double>(batch.size());
    const double mean = std::accumulate(batch.y.begin(), batch.y.end(), 0.0) / n;
    double var = 0.0;
    for (double v : batch.y) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / n);
    model.set_target_scaling(mean, sd > 0.0 && std::isfinite(sd) ? sd : 1.0);
  }

  TrainedRegressor out{model, {}, {}, 0, {}};
  MomentumSgd optimizer(train.momentum, train.weight_decay);
  double best = std::numeric_limits<double>::infinity();
  const std::size_t steps_per_epoch = (batch.size() + train.batch_size - 1) / train.batch_size;
  const std::size_t total_steps = std::max<std::size_t>(1, steps_per_epoch * train.epochs);
  std::size_t step = 0;
  // Zero-started moving average and update count per sample.
  std::map<SampleKey, std::pair<double, std::size_t>> ema;

  for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
    if (epoch > 0) {
      batch = source(epoch);
      require(batch.size() > 0, ErrorKind::domain, "train_regressor: empty training set");
    }
    batch.validate();
    require(batch.tokens() == config.tokens && batch.factors() == config.factors, ErrorKind::shape,
            "training batch windows do not match the regressor input shape");
    for (double v : batch.y) {
      require(std::isfinite(v), ErrorKind::numeric, "train_regressor: non-finite label");
    }

    std::vector<std::size_t> order(batch.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_stream(train.seed, 0x5eed0000ULL + epoch);
    std::shuffle(order.begin(), order.end(), rng);

    double sq_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += train.batch_size) {
      const std::size_t end = std::min(order.size(), start + train.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      SequenceBatch mb = batch.subset(idx);

      std::vector<double> z(mb.size());
      for (std::size_t i = 0; i < z.size(); ++i) {
        z[i] = (mb.y[i] - model.target_mean()) / model.target_std();
      }
      Graph g;
      ParamBinder p(g, model.parameters(), true);
      Var net = model.network(p, g.constant(mb.x));
      Var loss = ops::mse(net, g.constant(Tensor({z.size()}, z)));
      const double lv = loss.value().item();
      if (!std::isfinite(lv)) {
        fail(ErrorKind::numeric, "train_regressor: non-finite loss at epoch " +
                                     std::to_string(epoch) + ", step " + std::to_string(step));
      }
      const Tensor& nv = net.value();
      for (std::size_t i = 0; i < mb.size(); ++i) {
        const double pred = nv[i] * model.target_std() + model.target_mean();
        const double se = (pred - mb.y[i]) * (pred - mb.y[i]);
        sq_sum += se;
        const SampleKey key{mb.meta[i].stock, mb.meta[i].date};
        auto& [avg, count] = ema[key];
        avg = train.loss_decay * avg + (1.0 - train.loss_decay) * se;
        ++count;
      }
      ParameterSet grads = gradients_for(model.parameters(), g.backward(loss));
      optimizer.step(model.parameters(), grads, cosine_lr(train.lr, step, total_steps));
      ++step;
    }
    out.train_mse.push_back(sq_sum / static_cast<double>(batch.size()));

    if (valid.size() > 0) {
      const std::vector<double> pred = model.predict_batch(valid.x);
      double se = 0.0;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        se += (pred[i] - valid.y[i]) * (pred[i] - valid.y[i]);
      }
      const double mse = se / static_cast<double>(pred.size());
      out.valid_mse.push_back(mse);
      if (mse < best) {
        best = mse;
        out.best_epoch = epoch;
        out.model = model;
      }
    } else {
      out.best_epoch = epoch;
      out.model = model;
    }
  }
  for (const auto& [key, entry] : ema) {
    const double weight = 1.0 - std::pow(train.loss_decay, static_cast<double>(entry.second));
    out.sample_losses.emplace(key, weight > 0.0 ? entry.first / weight : entry.first);
  }
  return out;
}

TrainedRegressor train_regressor(const SequenceBatch& train, const SequenceBatch& valid,
                                 const RegressorConfig& config, const RegressorTrainConfig& cfg) {
  return train_regressor([&train](std::size_t) { return train; }, valid, config, cfg);
}

std::vector<double> lookup_losses(const LossRegistry& registry, const SequenceBatch& batch) {
  std::vector<double> out(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const SampleKey key{batch.meta[i].stock, batch.meta[i].date};
    auto it = registry.find(key);
    require(it != registry.end(), ErrorKind::domain,
            "no training loss recorded for stock " + std::to_string(key.first) + " on date " +
                std::to_string(key.second));
    out[i] = it->second;
  }
  return out;
}

}  // namespace factordiff
