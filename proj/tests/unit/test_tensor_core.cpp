#include <doctest.h>

#include <cmath>
#include <vector>

#include "factordiff/error.hpp"
#include "factordiff/graph.hpp"
#include "factordiff/layers.hpp"
#include "factordiff/ops.hpp"
#include "helpers.hpp"

using namespace factordiff;

namespace {

// y = relu(x W1 + b1) W2 + b2 evaluated one scalar at a time.
std::vector<double> mlp_by_hand(const Tensor& x, const Tensor& w1, const Tensor& b1,
                                const Tensor& w2, const Tensor& b2) {
  const std::size_t n = x.dim(0), in = x.dim(1), hid = w1.dim(1), out = w2.dim(1);
  std::vector<double> y(n * out);
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<double> h(hid);
    for (std::size_t j = 0; j < hid; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < in; ++i) acc += x[r * in + i] * w1[i * hid + j];
      acc += b1[j];
      h[j] = acc > 0.0 ? acc : 0.0;
    }
    for (std::size_t o = 0; o < out; ++o) {
      double acc = 0.0;
      for (std::size_t j = 0; j < hid; ++j) acc += h[j] * w2[j * out + o];
      y[r * out + o] = acc + b2[o];
    }
  }
  return y;
}

// Contracts an output with a fixed random tensor so the loss has O(1)
// gradients in every direction.
Var project(Graph& g, Var out, std::uint64_t seed) {
  return ops::sum(ops::mul(out, g.constant(fdtest::random_tensor(out.shape(), seed))));
}

}  // namespace

TEST_CASE("matmul with identity returns the other operand") {
  Graph g;
  std::vector<double> eye{1, 0, 0, 0, 1, 0, 0, 0, 1};
  Tensor a = fdtest::random_tensor({3, 4}, 1);
  Var out = ops::matmul(g.constant(Tensor({3, 3}, eye)), g.constant(a));
  CHECK(out.value() == a);
}

TEST_CASE("layer norm of a constant row is zero") {
  Graph g;
  Var out = ops::layer_norm(g.constant(Tensor::full({2, 5}, 3.25)));
  for (double v : out.value().values()) CHECK(v == 0.0);
}

TEST_CASE("two-layer MLP forward matches a scalar evaluation") {
  Tensor x = fdtest::random_tensor({5, 3}, 2);
  Tensor w1 = fdtest::random_tensor({3, 7}, 3);
  Tensor b1 = fdtest::random_tensor({7}, 4);
  Tensor w2 = fdtest::random_tensor({7, 2}, 5);
  Tensor b2 = fdtest::random_tensor({2}, 6);
  Graph g;
  Var h = ops::relu(ops::linear(g.constant(x), g.constant(w1), g.constant(b1)));
  Var y = ops::linear(h, g.constant(w2), g.constant(b2));
  const auto expected = mlp_by_hand(x, w1, b1, w2, b2);
  REQUIRE(y.value().size() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(y.value()[i] == doctest::Approx(expected[i]).epsilon(1e-13));
  }
}

TEST_CASE("derivative of x squared at 3 is 6") {
  Graph g;
  Var x = g.parameter("x", Tensor::scalar(3.0));
  Gradients grads = g.backward(ops::square(x));
  CHECK(grads.wrt(x).item() == 6.0);
}

TEST_CASE("unused parameter gets an all-zeros gradient") {
  ParameterSet params{{"used", Tensor::full({2}, 1.5)}, {"unused", Tensor::full({3}, 2.0)}};
  Graph g;
  Var used = g.parameter("used", params.at("used"));
  g.parameter("unused", params.at("unused"));
  ParameterSet grads = gradients_for(params, g.backward(ops::sum(ops::square(used))));
  CHECK(grads.at("unused") == Tensor({3}));
  CHECK(grads.at("used") == Tensor({2}, {3.0, 3.0}));
}

TEST_CASE("backward rejects a non-scalar loss") {
  Graph g;
  Var x = g.parameter("x", Tensor({2}, {1.0, 2.0}));
  CHECK_THROWS_AS(g.backward(ops::square(x)), Error);
}

TEST_CASE("shape mismatch names the failing node") {
  Graph g;
  Var a = g.constant(Tensor({2, 3}));
  Var b = g.constant(Tensor({4, 5}));
  try {
    ops::matmul(a, b);
    FAIL("expected a shape error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::shape);
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
  }
}

TEST_CASE("non-finite values are rejected at the producing op") {
  Graph g;
  Var a = g.constant(Tensor::full({2}, 1e200));
  CHECK_THROWS_AS(ops::square(ops::square(a)), Error);
}

TEST_CASE("broadcast shape follows numpy rules") {
  CHECK(ops::broadcast_shape({4, 1, 3}, {5, 1}) == Shape{4, 5, 3});
  CHECK(ops::broadcast_shape({3}, {2, 3}) == Shape{2, 3});
  CHECK(ops::broadcast_shape({}, {2, 2}) == Shape{2, 2});
  CHECK_THROWS_AS(ops::broadcast_shape({2, 3}, {3, 2}), Error);
}

TEST_CASE("fd_check on an affine model is exact to roundoff") {
  ParameterSet point{{"w", fdtest::random_tensor({4, 3}, 7)}, {"b", fdtest::random_tensor({3}, 8)}};
  Tensor x = fdtest::random_tensor({6, 4}, 9);
  LossBuilder build = [&](Graph& g, const ParameterSet& p) {
    Var out = ops::linear(g.constant(x), g.parameter("w", p.at("w")), g.parameter("b", p.at("b")));
    return project(g, out, 10);
  };
  CHECK(fd_check(build, point, 1e-5).max_rel_error < 1e-8);
}

TEST_CASE("fd_check of every differentiable op at 10 random points") {
  using Unary = Var (*)(Var);
  const std::vector<std::pair<const char*, Unary>> unary{
      {"square", ops::square}, {"silu", ops::silu},      {"gelu", ops::gelu},
      {"tanh", ops::tanh},     {"softmax", ops::softmax}, {"relu", ops::relu},
      {"layer_norm", [](Var a) { return ops::layer_norm(a); }},
  };
  for (const auto& [name, fn] : unary) {
    for (std::uint64_t s = 0; s < 10; ++s) {
      ParameterSet point{{"a", fdtest::random_tensor({3, 5}, 100 + s)}};
      LossBuilder build = [&, fn = fn](Graph& g, const ParameterSet& p) {
        return project(g, fn(g.parameter("a", p.at("a"))), 200 + s);
      };
      INFO(name << " point " << s);
      CHECK(fd_check(build, point, 1e-5).max_rel_error < 1e-4);
    }
  }

  for (std::uint64_t s = 0; s < 10; ++s) {
    ParameterSet point{{"a", fdtest::random_tensor({2, 3, 4}, 300 + s)},
                       {"b", fdtest::random_tensor({3, 1}, 400 + s)},
                       {"m", fdtest::random_tensor({4, 2}, 500 + s)},
                       {"t", fdtest::random_tensor({5, 4}, 600 + s)}};
    LossBuilder build = [&](Graph& g, const ParameterSet& p) {
      Var a = g.parameter("a", p.at("a"));
      Var b = g.parameter("b", p.at("b"));
      Var m = g.parameter("m", p.at("m"));
      Var t = g.parameter("t", p.at("t"));
      Var x = ops::sub(ops::mul(ops::add(a, b), ops::scale(a, 0.5)), b);
      x = ops::permute(ops::add_scalar(x, 0.3), {1, 0, 2});
      Var y = ops::matmul(x, m);
      Var z = ops::bmm(ops::reshape(y, {3, 2, 2}), ops::reshape(ops::permute(y, {0, 2, 1}), {3, 2, 2}));
      const std::size_t ids[] = {4, 0, 4};
      Var r = ops::gather_rows(t, ids);
      Var loss = ops::add(ops::mean(z), ops::mean_axis(ops::mul(r, r), 1));
      return ops::add(ops::sum(loss), ops::mse(y, ops::scale(y, 0.25)));
    };
    INFO("composite point " << s);
    CHECK(fd_check(build, point, 1e-5).max_rel_error < 1e-4);
  }
}

TEST_CASE("layer norm plus attention block gradient matches finite differences") {
  Rng rng(11);
  ParameterSet params;
  layers::init_norm(params, "ln", 8);
  layers::init_attention(params, "attn", 8, rng);
  params = fdtest::randomized(params, 12, 0.5);
  Tensor x = fdtest::random_tensor({2, 4, 8}, 13);
  LossBuilder build = [&](Graph& g, const ParameterSet& p) {
    ParamBinder bind(g, p, true);
    Var h = g.constant(x);
    Var out = ops::add(h, layers::self_attention(bind, "attn", layers::norm(bind, "ln", h), 2));
    return project(g, out, 14);
  };
  FdReport r = fd_check(build, params, 1e-5);
  INFO(r.worst_parameter << "[" << r.worst_index << "]");
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("forward is a pure function of its inputs") {
  Rng rng(15);
  ParameterSet params;
  layers::init_attention(params, "attn", 8, rng);
  Tensor x = fdtest::random_tensor({3, 4, 8}, 16);
  auto run = [&] {
    Graph g;
    ParamBinder bind(g, params, false);
    return layers::self_attention(bind, "attn", g.constant(x), 4).value();
  };
  const Tensor a = run();
  const Tensor b = run();
  CHECK(a == b);
}
