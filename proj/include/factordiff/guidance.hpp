#pragma once

#include <span>
#include <string>

#include "factordiff/denoiser.hpp"
#include "factordiff/predictor.hpp"
#include "factordiff/schedule.hpp"

namespace factordiff {

enum class GuidanceMode { none, predictor, predictor_free };

std::string to_string(GuidanceMode mode);
GuidanceMode parse_guidance_mode(const std::string& name);

struct GuidanceConfig {
  GuidanceMode mode = GuidanceMode::predictor_free;
  /// Strength of the regressor-gradient correction.
  double omega = 1.0;
  /// Extrapolation from the unconditional toward the conditional noise.
  double omega_free = 3.0;
  /// Pre-trained regressor used by predictor guidance (not owned).
  const RegressorModel* predictor = nullptr;

  void validate() const;
};

/// eps_hat - sqrt(1 - alpha_bar_t) * omega * grad_x (p(x_t) - y)^2, per
/// sample. The regressor sees x_t without the step.
Tensor predictor_guided_eps(const Tensor& eps_hat, const Tensor& x_t, std::span<const double> y,
                            std::span<const int> steps, const Schedule& sched, const GuidanceConfig& cfg);

/// eps_uncond + omega_free * (eps_cond - eps_uncond), evaluated as
/// eps_cond + (omega_free - 1) * (eps_cond - eps_uncond) so omega_free = 1 is exact.
Tensor cfg_eps(const Tensor& eps_cond, const Tensor& eps_uncond, double omega_free);

/// Effective noise for one sampler step on a batch x_t [B, k, d].
///   none            one call with `conds` as given
///   predictor       one unconditional call, then the regressor correction
///   predictor_free  a conditional and an unconditional call, combined
/// `labels` are the targets for predictor guidance.
Tensor eps_for_step(const DenoiserModel& model, const Tensor& x_t, std::span<const int> steps,
                    std::span<const SampleCondition> conds, std::span<const double> labels,
                    const Schedule& sched, const GuidanceConfig& cfg);

}  // namespace factordiff
