#pragma once

#include <cstddef>

#include "factordiff/graph.hpp"

namespace factordiff {

/// Adam with bias correction. Used for the denoiser.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParameterSet& params, const ParameterSet& grads);
  std::size_t steps() const noexcept { return t_; }

 private:
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  std::size_t t_ = 0;
  ParameterSet m_;
  ParameterSet v_;
};

/// Heavy-ball SGD; the learning rate is passed per step so callers can apply
/// a schedule.
class MomentumSgd {
 public:
  explicit MomentumSgd(double momentum = 0.9, double weight_decay = 0.0)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(ParameterSet& params, const ParameterSet& grads, double lr);

 private:
  double momentum_;
  double weight_decay_;
  ParameterSet velocity_;
};

/// Half-cosine decay from base_lr to 0 over `total` steps.
double cosine_lr(double base_lr, std::size_t step, std::size_t total) noexcept;

}  // namespace factordiff
