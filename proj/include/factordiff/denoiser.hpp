#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "factordiff/graph.hpp"
#include "factordiff/layers.hpp"
#include "factordiff/random.hpp"

namespace factordiff {

inline constexpr double kLayerNormEps = 1e-5;

/// Sinusoidal step encoding: entry 2i = sin(t / 10000^(2i/dim)),
/// entry 2i+1 = cos(t / 10000^(2i/dim)). dim must be even.
Tensor timestep_embedding(int t, std::size_t dim);

struct DenoiserConfig {
  std::size_t tokens = 8;    // lookback window k
  std::size_t factors = 16;  // factor dimension d
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t layers = 6;
  std::size_t ffn_mult = 4;
  std::size_t sectors = 5;
  bool use_label = true;
  bool use_industry = true;
  /// Labels are divided by this before the label embedding.
  double label_scale = 1.0;

  void validate() const;
  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

/// Conditioning for one sample. An empty slot is embedded as the null vector.
struct SampleCondition {
  std::optional<double> label;
  std::optional<int> sector;
};

/// Clears both slots with probability p (the slots are dropped together so
/// the null-conditioned branch sees a fully unconditional input).
void drop_conditions(std::span<SampleCondition> conds, double p, Rng& rng);

/// Conditions with every slot empty.
std::vector<SampleCondition> null_conditions(std::size_t n);

/// Transformer noise predictor eps(x_t, t, c) over k-token factor sequences.
///
/// Each block is pre-norm self-attention and feed-forward. After each
/// standard layer norm an adaptive layer norm applies x * (1 + gamma) + beta,
/// with gamma and beta regressed from silu(c) by affine maps, and the residual
/// branches are multiplied by gates alpha1, alpha2 regressed the same way.
/// All regression maps and the output projection start at zero, so each block
/// is the identity and the model predicts exactly zero noise at init.
class DenoiserModel {
 public:
  DenoiserModel(DenoiserConfig config, std::uint64_t seed);
  DenoiserModel(DenoiserConfig config, ParameterSet params);

  const DenoiserConfig& config() const noexcept { return config_; }
  const ParameterSet& parameters() const noexcept { return params_; }
  ParameterSet& parameters() noexcept { return params_; }

  /// Time branch alone: MLP over the sinusoidal step encoding, [B, width].
  Var time_embedding(const ParamBinder& p, std::span<const int> steps) const;
  /// Time branch plus one embedding per conditioning slot, [B, width].
  Var embed_conditions(const ParamBinder& p, std::span<const int> steps,
                       std::span<const SampleCondition> conds) const;
  /// One transformer block applied to h [B, k, width]; `cond_act` is silu(cond).
  Var block(const ParamBinder& p, std::size_t index, Var h, Var cond_act) const;
  /// Token projection, position encoding and all blocks: [B, k, width].
  Var trunk(const ParamBinder& p, Var x_t, Var cond) const;
  /// Predicted noise [B, k, d].
  Var forward(const ParamBinder& p, Var x_t, std::span<const int> steps,
              std::span<const SampleCondition> conds) const;

  /// Inference entry point: x_t is [B, k, d] (or [k, d] for one sample).
  Tensor denoise_eps(const Tensor& x_t, std::span<const int> steps,
                     std::span<const SampleCondition> conds) const;

 private:
  void check_input(const Shape& shape, std::size_t steps, std::size_t conds) const;

  DenoiserConfig config_;
  ParameterSet params_;
  Tensor positions_;
};

}  // namespace factordiff
