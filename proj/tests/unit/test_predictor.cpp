#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "factordiff/data.hpp"
#include "factordiff/error.hpp"
#include "factordiff/eval.hpp"
#include "factordiff/ops.hpp"
#include "factordiff/predictor.hpp"
#include "helpers.hpp"

using namespace factordiff;

namespace {

RegressorConfig small(Backbone b) {
  RegressorConfig c;
  c.backbone = b;
  c.tokens = 4;
  c.factors = 5;
  c.hidden = {8, 6};
  c.width = 8;
  c.heads = 2;
  c.layers = 2;
  c.ffn_mult = 2;
  return c;
}

std::vector<std::int64_t> days_of(const SequenceBatch& b) {
  std::vector<std::int64_t> d;
  for (const auto& m : b.meta) d.push_back(m.date);
  return d;
}

double valid_ic(const RegressorModel& model, const SequenceBatch& b) {
  return information_coefficient(model.predict_batch(b.x), b.y, days_of(b));
}

PreparedData small_market(double snr) {
  MarketConfig cfg;
  cfg.stocks = 120;
  cfg.days = 200;
  cfg.snr = snr;
  return prepare_datasets(gen_synthetic_market(cfg, 31), 120);
}

}  // namespace

TEST_CASE("backbone names") {
  CHECK(parse_backbone("mlp") == Backbone::mlp);
  CHECK(parse_backbone(to_string(Backbone::transformer)) == Backbone::transformer);
  CHECK_THROWS_AS(parse_backbone("lstm"), Error);
}

TEST_CASE("zero-weight MLP predicts its bias") {
  RegressorModel model(small(Backbone::mlp), 1);
  for (auto& [name, value] : model.parameters()) value = Tensor(value.shape());
  model.parameters().at("head.b") = Tensor({1}, {0.25});
  model.set_target_scaling(0.1, 2.0);
  for (std::uint64_t s : {1u, 2u, 3u}) {
    CHECK(model.predict(fdtest::random_tensor({4, 5}, s)) == doctest::Approx(0.1 + 2.0 * 0.25).epsilon(1e-15));
  }
}

TEST_CASE("prediction is deterministic and batch-consistent") {
  for (Backbone b : {Backbone::mlp, Backbone::transformer}) {
    const RegressorModel model(small(b), 2);
    const Tensor x = fdtest::random_tensor({6, 4, 5}, 3);
    const std::vector<double> batch = model.predict_batch(x);
    REQUIRE(batch.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) {
      const Tensor xi({4, 5}, std::vector<double>(x.data() + i * 20, x.data() + (i + 1) * 20));
      const double single = model.predict(xi);
      CHECK(single == model.predict(xi));
      CHECK(std::abs(single - batch[i]) <= 1e-12);
    }
    CHECK_THROWS_AS(model.predict(Tensor({5, 4})), Error);
  }
}

TEST_CASE("input gradient of a linear predictor") {
  RegressorConfig c = small(Backbone::mlp);
  c.hidden = {};
  RegressorModel model(c, 4);
  const Tensor w = model.parameters().at("head.w");
  const Tensor x = fdtest::random_tensor({2, 4, 5}, 5);
  const std::vector<double> p = model.predict_batch(x);
  const std::vector<double> y{0.3, -0.2};
  const Tensor g = model.input_gradient(x, y);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 20; ++j) {
      CHECK(std::abs(g[i * 20 + j] - 2.0 * (p[i] - y[i]) * w[j]) < 1e-12);
    }
  }
  const Tensor zero = model.input_gradient(x, p);
  for (double v : zero.values()) CHECK(v == 0.0);
}

TEST_CASE("input gradients match central differences") {
  for (Backbone b : {Backbone::mlp, Backbone::transformer}) {
    const RegressorModel model(small(b), 6);
    for (std::uint64_t point = 0; point < 10; ++point) {
      const Tensor x = fdtest::random_tensor({1, 4, 5}, 100 + point);
      const std::vector<double> y{0.1 * static_cast<double>(point) - 0.4};
      const Tensor g = model.input_gradient(x, y);
      std::vector<double> v = x.to_vector();
      double worst = 0.0;
      for (std::size_t j = 0; j < v.size(); ++j) {
        const double keep = v[j];
        const double h = 1e-5;
        v[j] = keep + h;
        const double up = std::pow(model.predict_batch(Tensor(x.shape(), v))[0] - y[0], 2);
        v[j] = keep - h;
        const double down = std::pow(model.predict_batch(Tensor(x.shape(), v))[0] - y[0], 2);
        v[j] = keep;
        const double numeric = (up - down) / (2.0 * h);
        worst = std::max(worst, std::abs(numeric - g[j]) / (std::abs(numeric) + std::abs(g[j]) + 1e-12));
      }
      CHECK(worst < 1e-3);
    }
  }
}

TEST_CASE("parameter gradients match central differences") {
  for (Backbone b : {Backbone::mlp, Backbone::transformer}) {
    const RegressorModel model(small(b), 7);
    const ParameterSet point = fdtest::randomized(model.parameters(), 8, 0.3);
    const Tensor x = fdtest::random_tensor({3, 4, 5}, 9);
    const Tensor y = fdtest::random_tensor({3}, 10);
    const LossBuilder build = [&](Graph& g, const ParameterSet& params) {
      const RegressorModel m(small(b), params);
      ParamBinder p(g, params, true);
      return ops::mse(m.network(p, g.constant(x)), g.constant(y));
    };
    CHECK(fd_check(build, point, 1e-5).max_rel_error < 1e-3);
  }
}

TEST_CASE("training on constant zero labels") {
  SequenceBatch b;
  b.x = fdtest::random_tensor({64, 4, 5}, 11);
  b.y.assign(64, 0.0);
  for (std::size_t i = 0; i < 64; ++i) b.meta.push_back({static_cast<std::int64_t>(i), 0, 0});
  RegressorTrainConfig t;
  t.epochs = 100;
  t.batch_size = 16;
  t.lr = 0.3;
  const TrainedRegressor out = train_regressor(b, SequenceBatch{}, small(Backbone::mlp), t);
  CHECK(out.train_mse.size() == 100);
  CHECK(out.train_mse.back() < 1e-6);
  CHECK(out.model.target_std() == 1.0);
  CHECK(out.sample_losses.size() == 64);
}

TEST_CASE("regressor learns the planted signal") {
  const PreparedData d = small_market(0.25);
  RegressorConfig c;
  RegressorTrainConfig t;
  t.epochs = 10;
  t.lr = 0.01;
  t.seed = 3;
  const TrainedRegressor out = train_regressor(d.target_train, d.target_valid, c, t);
  CHECK(valid_ic(out.model, d.target_valid) > 0.3);
  CHECK(out.valid_mse.size() == 10);
  CHECK(out.valid_mse[out.best_epoch] == *std::min_element(out.valid_mse.begin(), out.valid_mse.end()));
}

TEST_CASE("shuffled labels give no skill") {
  const PreparedData d = small_market(0.25);
  const SequenceBatch shuffled = inject_label_noise(d.target_train, 1.0, 8);
  RegressorTrainConfig t;
  t.epochs = 5;
  t.lr = 0.01;
  const TrainedRegressor out = train_regressor(shuffled, d.target_valid, RegressorConfig{}, t);
  CHECK(std::abs(valid_ic(out.model, d.target_valid)) < 0.1);
}

TEST_CASE("raw and sourced training share one code path") {
  const PreparedData d = small_market(0.25);
  std::vector<std::size_t> idx(500);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i * 7;
  const SequenceBatch train = d.target_train.subset(idx);
  RegressorTrainConfig t;
  t.epochs = 3;
  t.seed = 5;
  const TrainedRegressor a = train_regressor(train, d.target_valid, RegressorConfig{}, t);
  std::size_t calls = 0;
  const TrainedRegressor b = train_regressor(
      [&](std::size_t) {
        ++calls;
        return train;
      },
      d.target_valid, RegressorConfig{}, t);
  CHECK(calls == 3);
  CHECK(a.model.parameters() == b.model.parameters());
  CHECK(a.sample_losses == b.sample_losses);
  CHECK(lookup_losses(a.sample_losses, train).size() == train.size());
  CHECK_THROWS_AS(lookup_losses(a.sample_losses, d.target_valid), Error);
}

TEST_CASE("training rejects bad input") {
  RegressorTrainConfig t;
  t.epochs = 1;
  CHECK_THROWS_AS(train_regressor(SequenceBatch{}, SequenceBatch{}, small(Backbone::mlp), t), Error);
  SequenceBatch b;
  b.x = fdtest::random_tensor({4, 4, 5}, 1);
  b.y = {0.0, NAN, 0.0, 0.0};
  b.meta.resize(4);
  CHECK_THROWS_AS(train_regressor(b, SequenceBatch{}, small(Backbone::mlp), t), Error);
  b.y[1] = 0.0;
  t.lr = 0.0;
  CHECK_THROWS_AS(train_regressor(b, SequenceBatch{}, small(Backbone::transformer), t), Error);
}
