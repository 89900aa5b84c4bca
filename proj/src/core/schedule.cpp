#include "factordiff/schedule.hpp"

#include <cmath>
#include <string>

#include "factordiff/error.hpp"

namespace factordiff {

Schedule::Schedule(std::vector<double> beta) : beta_(std::move(beta)) {
  require(!beta_.empty(), ErrorKind::domain, "schedule needs at least one step");
  const std::size_t T = beta_.size();
  alpha_.resize(T);
  alpha_bar_.resize(T);
  posterior_var_.resize(T);
  double running = 1.0;
  for (std::size_t i = 0; i < T; ++i) {
    require(beta_[i] > 0.0 && beta_[i] < 1.0, ErrorKind::domain,
            "beta at step " + std::to_string(i + 1) + " outside (0,1)");
    alpha_[i] = 1.0 - beta_[i];
    const double prev = running;
    running *= alpha_[i];
    alpha_bar_[i] = running;
    posterior_var_[i] = (1.0 - prev) * beta_[i] / (1.0 - running);
  }
}

void Schedule::check_step(int t) const {
  require(t >= 1 && static_cast<std::size_t>(t) <= steps(), ErrorKind::domain,
          "diffusion step " + std::to_string(t) + " outside [1," + std::to_string(steps()) + "]");
}

double Schedule::beta(int t) const {
  check_step(t);
  return beta_[static_cast<std::size_t>(t - 1)];
}

double Schedule::alpha(int t) const {
  check_step(t);
  return alpha_[static_cast<std::size_t>(t - 1)];
}

double Schedule::alpha_bar(int t) const {
  if (t == 0) {
    return 1.0;
  }
  check_step(t);
  return alpha_bar_[static_cast<std::size_t>(t - 1)];
}

double Schedule::posterior_variance(int t) const {
  check_step(t);
  return posterior_var_[static_cast<std::size_t>(t - 1)];
}

Schedule build_schedule(int steps, double beta_start, double beta_end) {
  require(steps > 0, ErrorKind::domain, "schedule step count must be positive");
  require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0, ErrorKind::domain,
          "schedule needs 0 < beta_start <= beta_end < 1");
  std::vector<double> beta(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    beta[static_cast<std::size_t>(i)] = beta_start + (beta_end - beta_start) * frac;
  }
  return Schedule(std::move(beta));
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const Schedule& sched) {
  const double ab = sched.alpha_bar(t);
  sched.check_step(t);
  require(x0.shape() == eps.shape(), ErrorKind::shape,
          "q_sample: x0 " + to_string(x0.shape()) + " vs eps " + to_string(eps.shape()));
  return axpby(std::sqrt(ab), x0, std::sqrt(1.0 - ab), eps);
}

PosteriorStats posterior_stats(const Tensor& x_t, const Tensor& eps_hat, int t,
                               const Schedule& sched) {
  sched.check_step(t);
  require(x_t.shape() == eps_hat.shape(), ErrorKind::shape, "posterior_stats: shape mismatch");
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(t));
  const double coef = sched.beta(t) / std::sqrt(1.0 - sched.alpha_bar(t));
  return {axpby(inv_sqrt_alpha, x_t, -inv_sqrt_alpha * coef, eps_hat),
          sched.posterior_variance(t)};
}

double diffusion_loss(const Tensor& eps, const Tensor& eps_hat) {
  require(eps.shape() == eps_hat.shape(), ErrorKind::shape, "diffusion_loss: shape mismatch");
  require(eps.size() > 0, ErrorKind::shape, "diffusion_loss: empty tensors");
  double total = 0.0;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const double d = eps[i] - eps_hat[i];
    total += d * d;
  }
  return total / static_cast<double>(eps.size());
}

}  // namespace factordiff
