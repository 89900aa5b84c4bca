#pragma once

#include <cstddef>
#include <string>

#include "factordiff/graph.hpp"
#include "factordiff/random.hpp"

namespace factordiff {

/// Binds named model parameters onto a graph, either as trainable leaves or
/// as constants (inference, where no backward closures are needed).
class ParamBinder {
 public:
  ParamBinder(Graph& graph, const ParameterSet& params, bool trainable)
      : graph_(graph), params_(params), trainable_(trainable) {}

  Var operator()(const std::string& name) const;
  Graph& graph() const noexcept { return graph_; }

 private:
  Graph& graph_;
  const ParameterSet& params_;
  bool trainable_;
};

namespace layers {

enum class Init { normal, zero };

/// Adds `<prefix>.w` [in, out] and `<prefix>.b` [out]. Normal init uses
/// stddev 1/sqrt(in); biases start at zero.
void init_linear(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t out,
                 Rng& rng, Init init = Init::normal);
/// Adds `<prefix>.g` (ones) and `<prefix>.b` (zeros) of length width.
void init_norm(ParameterSet& params, const std::string& prefix, std::size_t width);
/// Multi-head self-attention projections q, k, v, o under prefix.
void init_attention(ParameterSet& params, const std::string& prefix, std::size_t width, Rng& rng);
/// Two-layer GELU feed-forward under prefix.
void init_feed_forward(ParameterSet& params, const std::string& prefix, std::size_t width,
                       std::size_t hidden, Rng& rng);

/// x[..., in] -> [..., out]
Var linear(const ParamBinder& p, const std::string& prefix, Var x);
/// Layer norm over the last axis followed by the learned per-channel affine.
Var norm(const ParamBinder& p, const std::string& prefix, Var x);
/// x[B, k, W] -> [B, k, W]
Var self_attention(const ParamBinder& p, const std::string& prefix, Var x, std::size_t heads);
/// x[B, k, W] -> [B, k, W]
Var feed_forward(const ParamBinder& p, const std::string& prefix, Var x);

/// Sinusoidal encodings of positions 0..count-1, shape [count, dim].
Tensor sinusoid_table(std::size_t count, std::size_t dim);

}  // namespace layers
}  // namespace factordiff
