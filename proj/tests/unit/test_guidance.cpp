#include <doctest.h>

#include <cmath>
#include <vector>

#include "factordiff/error.hpp"
#include "factordiff/guidance.hpp"
#include "helpers.hpp"

using namespace factordiff;

namespace {

constexpr std::size_t kTokens = 3;
constexpr std::size_t kFactors = 4;

// p(x) = w . (mean over tokens of x), built as a linear head over the
// flattened window with w / k repeated per token.
RegressorModel linear_predictor(const std::vector<double>& w) {
  RegressorConfig rc;
  rc.tokens = kTokens;
  rc.factors = kFactors;
  rc.hidden = {};
  RegressorModel model(rc, 1);
  std::vector<double> head(kTokens * kFactors);
  for (std::size_t t = 0; t < kTokens; ++t) {
    for (std::size_t j = 0; j < kFactors; ++j) head[t * kFactors + j] = w[j] / kTokens;
  }
  model.parameters().at("head.w") = Tensor({kTokens * kFactors, 1}, head);
  model.parameters().at("head.b") = Tensor({1}, {0.0});
  return model;
}

double planted(const Tensor& x, std::size_t i, const std::vector<double>& w) {
  double s = 0.0;
  for (std::size_t t = 0; t < kTokens; ++t) {
    for (std::size_t j = 0; j < kFactors; ++j) s += w[j] * x[(i * kTokens + t) * kFactors + j];
  }
  return s / kTokens;
}

DenoiserConfig tiny_denoiser() {
  DenoiserConfig c;
  c.tokens = kTokens;
  c.factors = kFactors;
  c.width = 8;
  c.heads = 2;
  c.layers = 1;
  c.ffn_mult = 2;
  c.sectors = 3;
  return c;
}

const std::vector<double> kWeights{0.5, -1.0, 0.25, 2.0};

}  // namespace

TEST_CASE("guidance modes round-trip through names") {
  for (auto m : {GuidanceMode::none, GuidanceMode::predictor, GuidanceMode::predictor_free}) {
    CHECK(parse_guidance_mode(to_string(m)) == m);
  }
  CHECK_THROWS_AS(parse_guidance_mode("classifier"), Error);
}

TEST_CASE("guidance config validation") {
  GuidanceConfig cfg;
  cfg.mode = GuidanceMode::predictor;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.mode = GuidanceMode::predictor_free;
  cfg.omega_free = 0.5;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.omega_free = 1.0;
  CHECK_NOTHROW(cfg.validate());
  cfg.omega = -1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("predictor guidance with zero strength is the identity") {
  const RegressorModel model = linear_predictor(kWeights);
  const Schedule sched = build_schedule(100, 1e-4, 0.02);
  const Tensor eps = fdtest::random_tensor({2, kTokens, kFactors}, 1);
  const Tensor x = fdtest::random_tensor({2, kTokens, kFactors}, 2);
  GuidanceConfig cfg{GuidanceMode::predictor, 0.0, 3.0, &model};
  const std::vector<double> y{0.3, -0.1};
  const std::vector<int> t{10, 50};
  CHECK(predictor_guided_eps(eps, x, y, t, sched, cfg) == eps);
}

TEST_CASE("predictor guidance leaves eps unchanged at a satisfied target") {
  const RegressorModel model = linear_predictor(kWeights);
  const Schedule sched = build_schedule(100, 1e-4, 0.02);
  const Tensor eps = fdtest::random_tensor({2, kTokens, kFactors}, 3);
  const Tensor x = fdtest::random_tensor({2, kTokens, kFactors}, 4);
  const std::vector<double> y = model.predict_batch(x);
  GuidanceConfig cfg{GuidanceMode::predictor, 1.5, 3.0, &model};
  const std::vector<int> t{20, 80};
  CHECK(max_abs_diff(predictor_guided_eps(eps, x, y, t, sched, cfg), eps) == 0.0);
}

TEST_CASE("predictor guidance with a linear predictor matches the closed form") {
  const RegressorModel model = linear_predictor(kWeights);
  const Schedule sched = build_schedule(100, 1e-4, 0.02);
  const std::size_t n = 3;
  const Tensor eps = fdtest::random_tensor({n, kTokens, kFactors}, 5);
  const Tensor x = fdtest::random_tensor({n, kTokens, kFactors}, 6);
  const std::vector<double> y{0.4, -0.7, 1.1};
  const std::vector<int> t{1, 37, 100};
  GuidanceConfig cfg{GuidanceMode::predictor, 1.0, 3.0, &model};
  const Tensor got = predictor_guided_eps(eps, x, y, t, sched, cfg);
  for (std::size_t i = 0; i < n; ++i) {
    const double resid = planted(x, i, kWeights) - y[i];
    const double c = std::sqrt(1.0 - sched.alpha_bar(t[i]));
    for (std::size_t tok = 0; tok < kTokens; ++tok) {
      for (std::size_t j = 0; j < kFactors; ++j) {
        const std::size_t at = (i * kTokens + tok) * kFactors + j;
        const double expected = eps[at] - c * 2.0 * resid * kWeights[j] / kTokens;
        CHECK(std::abs(got[at] - expected) < 1e-9);
      }
    }
  }
}

TEST_CASE("predictor guidance without a predictor throws") {
  const Schedule sched = build_schedule(10, 1e-4, 0.02);
  const Tensor eps = fdtest::random_tensor({1, kTokens, kFactors}, 7);
  GuidanceConfig cfg{GuidanceMode::predictor, 1.0, 3.0, nullptr};
  const std::vector<double> y{0.0};
  const std::vector<int> t{5};
  CHECK_THROWS_AS(predictor_guided_eps(eps, eps, y, t, sched, cfg), Error);
}

TEST_CASE("cfg_eps identities") {
  const Tensor c = fdtest::random_tensor({2, 3}, 8);
  const Tensor u = fdtest::random_tensor({2, 3}, 9);
  CHECK(cfg_eps(c, u, 1.0) == c);
  for (double w : {1.0, 3.0, 7.5}) {
    CHECK(max_abs_diff(cfg_eps(c, c, w), c) == 0.0);
  }
  const Tensor tripled = cfg_eps(c, Tensor({2, 3}), 3.0);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(tripled[i] == 3.0 * c[i]);
  CHECK_THROWS_AS(cfg_eps(c, Tensor({3, 2}), 3.0), Error);
}

TEST_CASE("cfg_eps is affine in its inputs") {
  const Tensor c1 = fdtest::random_tensor({4, 5}, 10), c2 = fdtest::random_tensor({4, 5}, 11);
  const Tensor u1 = fdtest::random_tensor({4, 5}, 12), u2 = fdtest::random_tensor({4, 5}, 13);
  for (double lambda : {0.3, -1.2, 2.0}) {
    for (double w : {1.0, 2.5, 4.0}) {
      const Tensor lhs = cfg_eps(axpby(lambda, c1, 1.0 - lambda, c2), axpby(lambda, u1, 1.0 - lambda, u2), w);
      const Tensor rhs = axpby(lambda, cfg_eps(c1, u1, w), 1.0 - lambda, cfg_eps(c2, u2, w));
      CHECK(max_abs_diff(lhs, rhs) < 1e-12);
    }
  }
}

TEST_CASE("eps_for_step dispatch") {
  const DenoiserModel den(tiny_denoiser(), 3);
  DenoiserModel trained(tiny_denoiser(), fdtest::randomized(den.parameters(), 14, 0.3));
  const Schedule sched = build_schedule(100, 1e-4, 0.02);
  const Tensor x = fdtest::random_tensor({3, kTokens, kFactors}, 15);
  const std::vector<int> t{5, 50, 95};
  std::vector<SampleCondition> conds(3);
  conds[0] = {0.2, 1};
  conds[1] = {-0.4, 0};
  conds[2] = {std::nullopt, 2};
  const std::vector<double> labels{0.2, -0.4, 0.0};

  SUBCASE("none is one conditional call") {
    GuidanceConfig cfg;
    cfg.mode = GuidanceMode::none;
    CHECK(eps_for_step(trained, x, t, conds, labels, sched, cfg) == trained.denoise_eps(x, t, conds));
  }
  SUBCASE("predictor-free with unit strength is the conditional call") {
    GuidanceConfig cfg;
    cfg.omega_free = 1.0;
    CHECK(max_abs_diff(eps_for_step(trained, x, t, conds, labels, sched, cfg), trained.denoise_eps(x, t, conds)) <=
          1e-12);
  }
  SUBCASE("predictor-free combines both branches") {
    GuidanceConfig cfg;
    cfg.omega_free = 3.0;
    const Tensor expected =
        cfg_eps(trained.denoise_eps(x, t, conds), trained.denoise_eps(x, t, null_conditions(3)), 3.0);
    CHECK(max_abs_diff(eps_for_step(trained, x, t, conds, labels, sched, cfg), expected) == 0.0);
  }
  SUBCASE("predictor guidance on a zero-output model is the correction alone") {
    const RegressorModel pred = linear_predictor(kWeights);
    GuidanceConfig cfg{GuidanceMode::predictor, 0.7, 3.0, &pred};
    const Tensor got = eps_for_step(den, x, t, conds, labels, sched, cfg);
    for (std::size_t i = 0; i < 3; ++i) {
      const double c = std::sqrt(1.0 - sched.alpha_bar(t[i])) * 0.7;
      const double resid = planted(x, i, kWeights) - labels[i];
      for (std::size_t tok = 0; tok < kTokens; ++tok) {
        for (std::size_t j = 0; j < kFactors; ++j) {
          const std::size_t at = (i * kTokens + tok) * kFactors + j;
          CHECK(std::abs(got[at] + c * 2.0 * resid * kWeights[j] / kTokens) < 1e-9);
        }
      }
    }
  }
  SUBCASE("predictor mode without a predictor is a config error") {
    GuidanceConfig cfg{GuidanceMode::predictor, 1.0, 3.0, nullptr};
    CHECK_THROWS_AS(eps_for_step(trained, x, t, conds, labels, sched, cfg), Error);
  }
}
