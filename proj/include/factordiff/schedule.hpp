#pragma once

#include <cstddef>
#include <vector>

#include "factordiff/tensor.hpp"

namespace factordiff {

/// Variance-preserving diffusion schedule over steps 1..T.
///
/// Arrays are stored 0-based: entry [t-1] belongs to step t. alpha_bar(0) is
/// defined as 1, so the step-1 posterior has zero variance.
class Schedule {
 public:
  Schedule() = default;
  /// Rebuilds a schedule from explicit beta values (e.g. from a checkpoint);
  /// the derived arrays are recomputed and must match what was saved.
  explicit Schedule(std::vector<double> beta);

  std::size_t steps() const noexcept { return beta_.size(); }

  double beta(int t) const;
  double alpha(int t) const;
  /// Cumulative product of alpha up to t; alpha_bar(0) == 1.
  double alpha_bar(int t) const;
  double posterior_variance(int t) const;

  const std::vector<double>& betas() const noexcept { return beta_; }
  const std::vector<double>& alphas() const noexcept { return alpha_; }
  const std::vector<double>& alpha_bars() const noexcept { return alpha_bar_; }
  const std::vector<double>& posterior_variances() const noexcept { return posterior_var_; }

  void check_step(int t) const;

  friend bool operator==(const Schedule&, const Schedule&) = default;

 private:
  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
  std::vector<double> posterior_var_;
};

/// Linear beta from beta_start to beta_end over T steps.
Schedule build_schedule(int steps, double beta_start, double beta_end);

/// sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps.
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const Schedule& sched);

struct PosteriorStats {
  Tensor mean;
  double variance = 0.0;
};

/// Mean and variance of p(x_{t-1} | x_t) given a noise estimate.
PosteriorStats posterior_stats(const Tensor& x_t, const Tensor& eps_hat, int t,
                               const Schedule& sched);

/// Mean squared error between true and predicted noise.
double diffusion_loss(const Tensor& eps, const Tensor& eps_hat);

}  // namespace factordiff
