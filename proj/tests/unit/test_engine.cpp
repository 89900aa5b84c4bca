#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "factordiff/engine.hpp"
#include "factordiff/error.hpp"
#include "helpers.hpp"

using namespace factordiff;

namespace {

DenoiserConfig small_config(std::size_t tokens = 3, std::size_t factors = 4) {
  DenoiserConfig c;
  c.tokens = tokens;
  c.factors = factors;
  c.width = 8;
  c.heads = 2;
  c.layers = 1;
  c.ffn_mult = 2;
  c.sectors = 3;
  return c;
}

SequenceBatch toy_batch(std::size_t n, std::size_t k, std::size_t d, std::uint64_t seed) {
  SequenceBatch b;
  b.x = fdtest::random_tensor({n, k, d}, seed);
  Rng rng(seed + 1);
  std::normal_distribution<double> normal(0.0, 0.05);
  for (std::size_t i = 0; i < n; ++i) {
    b.y.push_back(normal(rng));
    b.meta.push_back({static_cast<std::int64_t>(i % 7), static_cast<std::int64_t>(i / 7),
                      static_cast<std::int32_t>(i % 3)});
  }
  return b;
}

}  // namespace

TEST_CASE("ddim step inverts the exact noise") {
  const Schedule sched = build_schedule(200, 1e-4, 0.02);
  const Tensor x0 = fdtest::random_tensor({2, 3, 4}, 1);
  const Tensor eps = fdtest::random_tensor({2, 3, 4}, 2);
  for (auto [cur, prev] : {std::pair{50, 20}, std::pair{200, 1}, std::pair{7, 6}}) {
    const Tensor x_cur = q_sample(x0, cur, eps, sched);
    const Tensor got = ddim_step(x_cur, eps, cur, prev, sched);
    CHECK(max_abs_diff(got, q_sample(x0, prev, eps, sched)) < 1e-12);
  }
  const Tensor at_zero = ddim_step(q_sample(x0, 120, eps, sched), eps, 120, 0, sched);
  CHECK(max_abs_diff(at_zero, x0) < 1e-9);
}

TEST_CASE("ddim step with zero noise rescales") {
  const Schedule sched = build_schedule(100, 1e-4, 0.02);
  const Tensor x = fdtest::random_tensor({3, 4}, 3);
  const Tensor got = ddim_step(x, Tensor({3, 4}), 80, 30, sched);
  const double r = std::sqrt(sched.alpha_bar(30) / sched.alpha_bar(80));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(got[i] - r * x[i]) < 1e-12);
}

TEST_CASE("ddim step is deterministic and checks ordering") {
  const Schedule sched = build_schedule(100, 1e-4, 0.02);
  const Tensor x = fdtest::random_tensor({3, 4}, 4);
  const Tensor e = fdtest::random_tensor({3, 4}, 5);
  CHECK(ddim_step(x, e, 60, 10, sched) == ddim_step(x, e, 60, 10, sched));
  CHECK_THROWS_AS(ddim_step(x, e, 10, 10, sched), Error);
  CHECK_THROWS_AS(ddim_step(x, e, 10, 20, sched), Error);
  CHECK_THROWS_AS(ddim_step(x, e, 10, -1, sched), Error);
  CHECK_THROWS_AS(ddim_step(x, Tensor({4, 3}), 10, 5, sched), Error);
}

TEST_CASE("ddim subsequence") {
  CHECK(ddim_subsequence(300, 3) == std::vector<int>{100, 200, 300});
  CHECK(ddim_subsequence(5, 50) == std::vector<int>{1, 2, 3, 4, 5});
  CHECK(ddim_subsequence(0, 50).empty());
  for (int tp : {1, 7, 99, 250, 1000}) {
    for (std::size_t l : {1u, 3u, 50u, 64u}) {
      const auto tau = ddim_subsequence(tp, l);
      REQUIRE(tau.size() == std::min<std::size_t>(l, tp));
      CHECK(tau.back() == tp);
      CHECK(tau.front() >= 1);
      for (std::size_t j = 1; j < tau.size(); ++j) CHECK(tau[j] > tau[j - 1]);
    }
  }
  CHECK_THROWS_AS(ddim_subsequence(10, 0), Error);
}

TEST_CASE("editing steps from losses") {
  CHECK(assign_editing_steps(std::vector<double>{0.1, 0.9}, 100, 400) == std::vector<int>{400, 100});
  CHECK(assign_editing_steps(std::vector<double>{2.0, 2.0, 2.0}, 100, 401) == std::vector<int>{251, 251, 251});
  CHECK(assign_editing_steps(std::vector<double>{0.5}, 100, 300) == std::vector<int>{200});
  CHECK(assign_editing_steps(std::vector<double>{3.0, 1.0, 2.0}, 0, 10) == std::vector<int>{0, 10, 5});
  CHECK_THROWS_AS(assign_editing_steps(std::vector<double>{}, 1, 2), Error);
  CHECK_THROWS_AS(assign_editing_steps(std::vector<double>{1.0}, 3, 2), Error);
  CHECK_THROWS_AS(assign_editing_steps(std::vector<double>{NAN}, 1, 2), Error);
}

TEST_CASE("editing steps decrease with loss rank") {
  Rng rng(17);
  std::uniform_int_distribution<int> size(1, 40);
  std::uniform_int_distribution<int> coarse(0, 5);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = static_cast<std::size_t>(size(rng));
    std::vector<double> losses(n);
    // Coarse values on half the trials exercise ties.
    for (auto& v : losses) v = trial % 2 ? normal(rng) : static_cast<double>(coarse(rng));
    const int lo = coarse(rng) * 20, hi = lo + coarse(rng) * 50;
    const auto steps = assign_editing_steps(losses, lo, hi);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return losses[a] < losses[b]; });
    for (std::size_t j = 1; j < n; ++j) {
      CHECK(steps[order[j]] <= steps[order[j - 1]]);
      if (losses[order[j]] == losses[order[j - 1]]) CHECK(steps[order[j]] == steps[order[j - 1]]);
    }
    for (int s : steps) {
      CHECK(s >= lo);
      CHECK(s <= hi);
    }
  }
}

TEST_CASE("editing with zero steps is the identity") {
  const DenoiserModel model(small_config(), 1);
  const Schedule sched = build_schedule(100, 1e-4, 0.02);
  const SequenceBatch batch = toy_batch(10, 3, 4, 2);
  EditRunConfig cfg;
  cfg.t_prime = 0;
  CHECK(edit_samples(batch, model, sched, cfg) == batch);
}

TEST_CASE("single-step edit with a zero-output model has the closed form") {
  const DenoiserModel model(small_config(), 1);
  const Schedule sched = build_schedule(100, 1e-4, 0.02);
  const SequenceBatch batch = toy_batch(5, 3, 4, 3);
  EditRunConfig cfg;
  cfg.t_prime = 40;
  cfg.ddim_steps = 1;
  cfg.guidance.mode = GuidanceMode::none;
  cfg.seed = 99;
  const SequenceBatch out = edit_samples(batch, model, sched, cfg);
  const double ab = sched.alpha_bar(40);
  const double c = std::sqrt((1.0 - ab) / ab);
  for (std::size_t i = 0; i < 5; ++i) {
    Rng rng = make_stream(99, i);
    const std::vector<double> eps = normal_vector(12, rng);
    for (std::size_t j = 0; j < 12; ++j) {
      CHECK(std::abs(out.x[i * 12 + j] - (batch.x[i * 12 + j] + c * eps[j])) < 1e-12);
    }
  }
}

TEST_CASE("editing keeps labels and metadata and is reproducible") {
  const DenoiserModel init(small_config(), 1);
  const DenoiserModel model(small_config(), fdtest::randomized(init.parameters(), 4, 0.2));
  const Schedule sched = build_schedule(100, 1e-4, 0.02);
  const SequenceBatch batch = toy_batch(23, 3, 4, 5);
  EditRunConfig cfg;
  cfg.t_prime = 30;
  cfg.ddim_steps = 6;
  cfg.seed = 7;
  cfg.chunk = 4;
  const SequenceBatch a = edit_samples(batch, model, sched, cfg);
  CHECK(a.y == batch.y);
  CHECK(a.meta == batch.meta);
  CHECK(a.x.shape() == batch.x.shape());
  CHECK(max_abs_diff(a.x, batch.x) > 0.0);
  CHECK(edit_samples(batch, model, sched, cfg) == a);

  SUBCASE("worker count and chunk size do not change the result") {
    EditRunConfig other = cfg;
    other.workers = 4;
    CHECK(edit_samples(batch, model, sched, other) == a);
    other.chunk = 64;
    other.workers = 1;
    CHECK(edit_samples(batch, model, sched, other) == a);
  }
  SUBCASE("a different seed gives a different edit") {
    EditRunConfig other = cfg;
    other.seed = 8;
    CHECK(!(edit_samples(batch, model, sched, other) == a));
  }
  SUBCASE("each sample depends only on its own stream") {
    const std::vector<std::size_t> first{0, 1, 2};
    const SequenceBatch part = edit_samples(batch.subset(first), model, sched, cfg);
    CHECK(part.x == a.subset(first).x);
  }
}

TEST_CASE("loss-guided editing uses per-sample steps") {
  const DenoiserModel init(small_config(), 1);
  const DenoiserModel model(small_config(), fdtest::randomized(init.parameters(), 6, 0.2));
  const Schedule sched = build_schedule(100, 1e-4, 0.02);
  const SequenceBatch batch = toy_batch(8, 3, 4, 9);
  EditRunConfig cfg;
  cfg.loss_guided = true;
  cfg.t_prime_min = 10;
  cfg.t_prime_max = 80;
  cfg.ddim_steps = 5;
  const std::vector<double> losses{0.5, 0.1, 0.9, 0.3, 0.3, 0.7, 0.2, 0.8};
  CHECK_THROWS_AS(edit_samples(batch, model, sched, cfg), Error);
  const SequenceBatch guided = edit_samples(batch, model, sched, cfg, losses);
  const auto steps = assign_editing_steps(losses, 10, 80);
  CHECK(edit_samples_at(batch, model, sched, cfg, steps) == guided);
}

TEST_CASE("editing validates its configuration") {
  const DenoiserModel model(small_config(), 1);
  const Schedule sched = build_schedule(100, 1e-4, 0.02);
  const SequenceBatch batch = toy_batch(4, 3, 4, 2);
  EditRunConfig cfg;
  cfg.t_prime = 101;
  CHECK_THROWS_AS(edit_samples(batch, model, sched, cfg), Error);
  cfg.t_prime = 10;
  cfg.ddim_steps = 0;
  CHECK_THROWS_AS(edit_samples(batch, model, sched, cfg), Error);
  cfg.ddim_steps = 5;
  CHECK_THROWS_AS(edit_samples(toy_batch(4, 3, 5, 2), model, sched, cfg), Error);
}

TEST_CASE("training with zero steps returns the initial model") {
  const DenoiserModel model(small_config(), 1);
  const Schedule sched = build_schedule(100, 1e-4, 0.02);
  TrainRunConfig cfg;
  cfg.t_prime = 50;
  cfg.epochs = 0;
  const TrainedDenoiser out = train_diffusion(toy_batch(10, 3, 4, 1), model, sched, cfg);
  CHECK(out.model.parameters() == model.parameters());
  CHECK(out.history.empty());
  CHECK_FALSE(out.diverged);
}

TEST_CASE("training validates its configuration") {
  const DenoiserModel model(small_config(), 1);
  const Schedule sched = build_schedule(100, 1e-4, 0.02);
  TrainRunConfig cfg;
  cfg.t_prime = 101;
  CHECK_THROWS_AS(train_diffusion(toy_batch(10, 3, 4, 1), model, sched, cfg), Error);
  cfg.t_prime = 0;
  CHECK_THROWS_AS(train_diffusion(toy_batch(10, 3, 4, 1), model, sched, cfg), Error);
  cfg.t_prime = 10;
  CHECK_THROWS_AS(train_diffusion(SequenceBatch{}, model, sched, cfg), Error);
}

TEST_CASE("training on one constant point drives the loss down") {
  DenoiserConfig dc = small_config(1, 1);
  dc.width = 16;
  dc.layers = 2;
  const DenoiserModel model(dc, 3);
  const Schedule sched = build_schedule(100, 1e-4, 0.02);
  SequenceBatch point;
  point.x = Tensor({1, 1, 1}, {1.5});
  point.y = {0.0};
  point.meta = {{0, 0, 0}};

  TrainRunConfig cfg;
  cfg.t_prime = 10;
  cfg.steps = 500;
  cfg.batch_size = 32;
  cfg.lr = 3e-3;
  cfg.seed = 11;

  // Fixed held-out draw of steps and noise.
  Rng rng(5);
  std::uniform_int_distribution<int> step(1, 10);
  std::vector<int> steps(256);
  for (auto& t : steps) t = step(rng);
  std::vector<std::size_t> same(256, 0);
  const SequenceBatch eval = point.subset(same);
  const Tensor noise = normal_tensor(eval.x.shape(), rng);

  const double before = diffusion_eval_loss(model, sched, eval, steps, noise);
  const TrainedDenoiser out = train_diffusion(point, model, sched, cfg);
  const double after = diffusion_eval_loss(out.model, sched, eval, steps, noise);
  CHECK(out.history.size() == 500);
  CHECK_FALSE(out.diverged);
  CHECK(after < 0.2 * before);
}

TEST_CASE("training records a windowed eval loss") {
  const DenoiserModel model(small_config(), 1);
  const Schedule sched = build_schedule(100, 1e-4, 0.02);
  TrainRunConfig cfg;
  cfg.t_prime = 100;
  cfg.steps = 10;
  cfg.batch_size = 4;
  cfg.eval_t_max = 10;
  cfg.eval_every = 4;
  cfg.eval_samples = 8;
  const TrainedDenoiser out = train_diffusion(toy_batch(12, 3, 4, 1), model, sched, cfg);
  REQUIRE(out.history.size() == 10);
  for (const auto& r : out.history) {
    const bool expected = r.step == 3 || r.step == 7 || r.step == 9;
    CHECK(r.eval_loss.has_value() == expected);
    CHECK(std::isfinite(r.loss));
  }
  const TrainedDenoiser again = train_diffusion(toy_batch(12, 3, 4, 1), model, sched, cfg);
  CHECK(again.model.parameters() == out.model.parameters());
}

TEST_CASE("divergence returns the last finite parameters") {
  const DenoiserModel model(small_config(), 1);
  const Schedule sched = build_schedule(100, 1e-4, 0.02);
  TrainRunConfig cfg;
  cfg.t_prime = 10;
  cfg.steps = 20;
  cfg.batch_size = 8;
  cfg.lr = 1e300;
  const TrainedDenoiser out = train_diffusion(toy_batch(4, 3, 4, 1), model, sched, cfg);
  CHECK(out.diverged);
  REQUIRE(out.history.size() >= 2);
  CHECK(out.history.size() < 20);
  CHECK_FALSE(std::isfinite(out.history.back().loss));
  for (const auto& [name, value] : out.model.parameters()) CHECK(value.all_finite());
  CHECK(!(out.model.parameters() == model.parameters()));
}

TEST_CASE("augmented sources") {
  const DenoiserModel init(small_config(), 1);
  const DenoiserModel model(small_config(), fdtest::randomized(init.parameters(), 4, 0.2));
  const Schedule sched = build_schedule(100, 1e-4, 0.02);
  const SequenceBatch raw = toy_batch(6, 3, 4, 5);
  EditRunConfig cfg;
  cfg.t_prime = 20;
  cfg.ddim_steps = 4;
  cfg.seed = 3;

  CHECK(augmented_source(raw, model, sched, cfg, AugmentMode::off)(3) == raw);
  const auto fixed = augmented_source(raw, model, sched, cfg, AugmentMode::fixed);
  CHECK(fixed(0) == fixed(5));
  CHECK(fixed(0) == edit_samples(raw, model, sched, cfg));
  const auto fresh = augmented_source(raw, model, sched, cfg, AugmentMode::per_epoch);
  CHECK(fresh(0) == fixed(0));
  CHECK(!(fresh(1) == fresh(0)));
  CHECK(fresh(1) == fresh(1));
  CHECK(fresh(1).y == raw.y);
  const SequenceBatch both = augmented_source(raw, model, sched, cfg, AugmentMode::union_raw)(2);
  CHECK(both.size() == 12);
  CHECK(both == concat(raw, fresh(2)));

  for (auto m : {AugmentMode::off, AugmentMode::fixed, AugmentMode::per_epoch, AugmentMode::union_raw}) {
    CHECK(parse_augment_mode(to_string(m)) == m);
  }
  CHECK_THROWS_AS(parse_augment_mode("twice"), Error);
}
