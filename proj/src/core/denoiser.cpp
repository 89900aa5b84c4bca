#include "factordiff/denoiser.hpp"

#include <cmath>
#include <string>

#include "factordiff/error.hpp"
#include "factordiff/ops.hpp"

namespace factordiff {

namespace {

std::string block_name(std::size_t i) { return "blocks." + std::to_string(i); }

const char* const kModulations[] = {"shift1", "scale1", "gate1", "shift2", "scale2", "gate2"};

// x[B, k, W] * (1 + scale[B, W]) + shift[B, W]
Var modulate(Var x, Var shift, Var scale) {
  const std::size_t batch = x.shape()[0];
  const std::size_t width = x.shape()[2];
  Var s = ops::reshape(ops::add_scalar(scale, 1.0), {batch, 1, width});
  Var b = ops::reshape(shift, {batch, 1, width});
  return ops::add(ops::mul(x, s), b);
}

Var gate(Var branch, Var g) {
  return ops::mul(branch, ops::reshape(g, {g.shape()[0], 1, g.shape()[1]}));
}

}  // namespace

Tensor timestep_embedding(int t, std::size_t dim) {
  require(dim % 2 == 0 && dim > 0, ErrorKind::domain,
          "timestep embedding dimension must be positive and even, got " + std::to_string(dim));
  require(t >= 0, ErrorKind::domain, "timestep must be non-negative");
  std::vector<double> out(dim);
  for (std::size_t i = 0; i < dim / 2; ++i) {
    const double freq = std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(dim));
    const double angle = static_cast<double>(t) / freq;
    out[2 * i] = std::sin(angle);
    out[2 * i + 1] = std::cos(angle);
  }
  return Tensor({dim}, std::move(out));
}

void DenoiserConfig::validate() const {
  require(tokens > 0 && factors > 0, ErrorKind::config, "denoiser needs tokens > 0 and factors > 0");
  require(width > 0 && width % 2 == 0, ErrorKind::config, "denoiser width must be positive and even");
  require(heads > 0 && width % heads == 0, ErrorKind::config, "denoiser width must divide by heads");
  require(ffn_mult > 0, ErrorKind::config, "denoiser ffn_mult must be positive");
  require(!use_industry || sectors > 0, ErrorKind::config, "industry conditioning needs sectors > 0");
  require(label_scale > 0.0 && std::isfinite(label_scale), ErrorKind::config,
          "label_scale must be positive");
}

void drop_conditions(std::span<SampleCondition> conds, double p, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& c : conds) {
    if (u(rng) < p) {
      c = SampleCondition{};
    }
  }
}

std::vector<SampleCondition> null_conditions(std::size_t n) {
  return std::vector<SampleCondition>(n);
}

DenoiserModel::DenoiserModel(DenoiserConfig config, std::uint64_t seed)
    : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t w = config_.width;
  using layers::Init;
  layers::init_linear(params_, "token_proj", config_.factors, w, rng);
  layers::init_linear(params_, "time.l1", w, w, rng);
  layers::init_linear(params_, "time.l2", w, w, rng);
  if (config_.use_label) {
    layers::init_linear(params_, "cond.label", 1, w, rng);
  }
  if (config_.use_industry) {
    params_["cond.industry"] = normal_tensor({config_.sectors, w}, rng, 0.5);
  }
  if (config_.use_label || config_.use_industry) {
    params_["cond.null"] = normal_tensor({w}, rng, 0.5);
  }
  for (std::size_t i = 0; i < config_.layers; ++i) {
    const std::string b = block_name(i);
    layers::init_norm(params_, b + ".ln1", w);
    layers::init_attention(params_, b + ".attn", w, rng);
    layers::init_norm(params_, b + ".ln2", w);
    layers::init_feed_forward(params_, b + ".ffn", w, w * config_.ffn_mult, rng);
    for (const char* m : kModulations) {
      layers::init_linear(params_, b + ".aln." + m, w, w, rng, Init::zero);
    }
  }
  layers::init_linear(params_, "final.shift", w, w, rng, Init::zero);
  layers::init_linear(params_, "final.scale", w, w, rng, Init::zero);
  layers::init_linear(params_, "out_proj", w, config_.factors, rng, Init::zero);
  positions_ = layers::sinusoid_table(config_.tokens, w);
}

DenoiserModel::DenoiserModel(DenoiserConfig config, ParameterSet params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  const DenoiserModel reference(config_, 0);
  for (const auto& [name, value] : reference.params_) {
    auto it = params_.find(name);
    require(it != params_.end(), ErrorKind::format, "denoiser parameter '" + name + "' missing");
    require(it->second.shape() == value.shape(), ErrorKind::format,
            "denoiser parameter '" + name + "' has shape " + to_string(it->second.shape()) +
                ", expected " + to_string(value.shape()));
  }
  require(params_.size() == reference.params_.size(), ErrorKind::format,
          "denoiser parameter set has unexpected entries");
  positions_ = reference.positions_;
}

Var DenoiserModel::time_embedding(const ParamBinder& p, std::span<const int> steps) const {
  const std::size_t w = config_.width;
  std::vector<double> enc;
  enc.reserve(steps.size() * w);
  for (int t : steps) {
    const Tensor row = timestep_embedding(t, w);
    enc.insert(enc.end(), row.values().begin(), row.values().end());
  }
  Var x = p.graph().constant(Tensor({steps.size(), w}, std::move(enc)));
  return layers::linear(p, "time.l2", ops::silu(layers::linear(p, "time.l1", x)));
}

Var DenoiserModel::embed_conditions(const ParamBinder& p, std::span<const int> steps,
                                    std::span<const SampleCondition> conds) const {
  require(steps.size() == conds.size(), ErrorKind::shape,
          "embed_conditions: " + std::to_string(steps.size()) + " steps vs " +
              std::to_string(conds.size()) + " conditions");
  Graph& g = p.graph();
  const std::size_t n = conds.size();
  Var c = time_embedding(p, steps);

  auto slot = [&](Var kept, const std::vector<double>& keep) {
    Var mask = g.constant(Tensor({n, 1}, keep));
    std::vector<double> inv(n);
    for (std::size_t i = 0; i < n; ++i) {
      inv[i] = 1.0 - keep[i];
    }
    Var null_mask = g.constant(Tensor({n, 1}, std::move(inv)));
    return ops::add(ops::mul(mask, kept), ops::mul(null_mask, p("cond.null")));
  };

  if (config_.use_label) {
    std::vector<double> labels(n, 0.0);
    std::vector<double> keep(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (conds[i].label) {
        labels[i] = *conds[i].label / config_.label_scale;
        keep[i] = 1.0;
      }
    }
    Var emb = layers::linear(p, "cond.label", g.constant(Tensor({n, 1}, std::move(labels))));
    c = ops::add(c, slot(emb, keep));
  }
  if (config_.use_industry) {
    std::vector<std::size_t> ids(n, 0);
    std::vector<double> keep(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (conds[i].sector) {
        const int s = *conds[i].sector;
        require(s >= 0 && static_cast<std::size_t>(s) < config_.sectors, ErrorKind::domain,
                "unknown sector id " + std::to_string(s));
        ids[i] = static_cast<std::size_t>(s);
        keep[i] = 1.0;
      }
    }
    c = ops::add(c, slot(ops::gather_rows(p("cond.industry"), ids), keep));
  }
  return c;
}

Var DenoiserModel::block(const ParamBinder& p, std::size_t index, Var h, Var cond_act) const {
  const std::string b = block_name(index);
  auto mod = [&](const char* name) { return layers::linear(p, b + ".aln." + name, cond_act); };

  Var a = modulate(layers::norm(p, b + ".ln1", h), mod("shift1"), mod("scale1"));
  h = ops::add(h, gate(layers::self_attention(p, b + ".attn", a, config_.heads), mod("gate1")));

  Var f = modulate(layers::norm(p, b + ".ln2", h), mod("shift2"), mod("scale2"));
  return ops::add(h, gate(layers::feed_forward(p, b + ".ffn", f), mod("gate2")));
}

Var DenoiserModel::trunk(const ParamBinder& p, Var x_t, Var cond) const {
  Graph& g = p.graph();
  const std::size_t batch = x_t.shape()[0];

  Var h = layers::linear(p, "token_proj", x_t);
  h = ops::add(h, g.constant(positions_));
  Var sc = ops::silu(cond);
  for (std::size_t i = 0; i < config_.layers; ++i) {
    h = block(p, i, h, sc);
  }
  require(h.shape() == Shape({batch, config_.tokens, config_.width}), ErrorKind::shape,
          "denoiser trunk shape drift");
  return h;
}

Var DenoiserModel::forward(const ParamBinder& p, Var x_t, std::span<const int> steps,
                           std::span<const SampleCondition> conds) const {
  check_input(x_t.shape(), steps.size(), conds.size());
  Var cond = embed_conditions(p, steps, conds);
  Var h = trunk(p, x_t, cond);
  Var sc = ops::silu(cond);
  h = modulate(ops::layer_norm(h, kLayerNormEps), layers::linear(p, "final.shift", sc),
               layers::linear(p, "final.scale", sc));
  return layers::linear(p, "out_proj", h);
}

void DenoiserModel::check_input(const Shape& shape, std::size_t steps, std::size_t conds) const {
  require(shape.size() == 3 && shape[1] == config_.tokens && shape[2] == config_.factors,
          ErrorKind::shape,
          "denoiser expects [B," + std::to_string(config_.tokens) + "," +
              std::to_string(config_.factors) + "], got " + to_string(shape));
  require(steps == shape[0] && conds == shape[0], ErrorKind::shape,
          "denoiser batch of " + std::to_string(shape[0]) + " needs as many steps and conditions");
}

Tensor DenoiserModel::denoise_eps(const Tensor& x_t, std::span<const int> steps,
                                  std::span<const SampleCondition> conds) const {
  const bool single = x_t.rank() == 2;
  const Tensor x = single ? x_t.reshape({1, x_t.dim(0), x_t.dim(1)}) : x_t;
  Graph g;
  ParamBinder p(g, params_, false);
  const Tensor out = forward(p, g.constant(x), steps, conds).value();
  return single ? out.reshape(x_t.shape()) : out;
}

}  // namespace factordiff
