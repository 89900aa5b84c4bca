#include "factordiff/layers.hpp"

#include <cmath>
#include <vector>

#include "factordiff/denoiser.hpp"
#include "factordiff/error.hpp"
#include "factordiff/ops.hpp"

namespace factordiff {

Var ParamBinder::operator()(const std::string& name) const {
  auto it = params_.find(name);
  require(it != params_.end(), ErrorKind::domain, "missing model parameter '" + name + "'");
  return trainable_ ? graph_.parameter(name, it->second) : graph_.constant(it->second);
}

namespace layers {

void init_linear(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t out,
                 Rng& rng, Init init) {
  if (init == Init::zero) {
    params[prefix + ".w"] = Tensor({in, out});
  } else {
    params[prefix + ".w"] = normal_tensor({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
  }
  params[prefix + ".b"] = Tensor({out});
}

void init_norm(ParameterSet& params, const std::string& prefix, std::size_t width) {
  params[prefix + ".g"] = Tensor::full({width}, 1.0);
  params[prefix + ".b"] = Tensor({width});
}

void init_attention(ParameterSet& params, const std::string& prefix, std::size_t width, Rng& rng) {
  for (const char* name : {".q", ".k", ".v", ".o"}) {
    init_linear(params, prefix + name, width, width, rng);
  }
  // A key bias only shifts each score row, which softmax ignores.
  params.erase(prefix + ".k.b");
}

void init_feed_forward(ParameterSet& params, const std::string& prefix, std::size_t width,
                       std::size_t hidden, Rng& rng) {
  init_linear(params, prefix + ".l1", width, hidden, rng);
  init_linear(params, prefix + ".l2", hidden, width, rng);
}

Var linear(const ParamBinder& p, const std::string& prefix, Var x) {
  return ops::linear(x, p(prefix + ".w"), p(prefix + ".b"));
}

Var norm(const ParamBinder& p, const std::string& prefix, Var x) {
  return ops::add(ops::mul(ops::layer_norm(x, kLayerNormEps), p(prefix + ".g")), p(prefix + ".b"));
}

Var self_attention(const ParamBinder& p, const std::string& prefix, Var x, std::size_t heads) {
  const Shape& s = x.shape();
  require(s.size() == 3, ErrorKind::shape, "self_attention expects [B,k,W], got " + to_string(s));
  const std::size_t batch = s[0];
  const std::size_t tokens = s[1];
  const std::size_t width = s[2];
  require(heads > 0 && width % heads == 0, ErrorKind::shape,
          "attention width " + std::to_string(width) + " not divisible by heads");
  const std::size_t hd = width / heads;

  auto split = [&](Var v) {
    v = ops::reshape(v, {batch, tokens, heads, hd});
    v = ops::permute(v, {0, 2, 1, 3});
    return ops::reshape(v, {batch * heads, tokens, hd});
  };
  Var q = split(linear(p, prefix + ".q", x));
  Var k = split(ops::matmul(x, p(prefix + ".k.w")));
  Var v = split(linear(p, prefix + ".v", x));

  Var scores = ops::scale(ops::bmm(q, ops::permute(k, {0, 2, 1})),
                          1.0 / std::sqrt(static_cast<double>(hd)));
  Var ctx = ops::bmm(ops::softmax(scores), v);
  ctx = ops::reshape(ctx, {batch, heads, tokens, hd});
  ctx = ops::permute(ctx, {0, 2, 1, 3});
  ctx = ops::reshape(ctx, {batch, tokens, width});
  return linear(p, prefix + ".o", ctx);
}

Var feed_forward(const ParamBinder& p, const std::string& prefix, Var x) {
  return linear(p, prefix + ".l2", ops::gelu(linear(p, prefix + ".l1", x)));
}

Tensor sinusoid_table(std::size_t count, std::size_t dim) {
  std::vector<double> out;
  out.reserve(count * dim);
  for (std::size_t i = 0; i < count; ++i) {
    const Tensor row = timestep_embedding(static_cast<int>(i), dim);
    out.insert(out.end(), row.values().begin(), row.values().end());
  }
  return Tensor({count, dim}, std::move(out));
}

}  // namespace layers
}  // namespace factordiff
