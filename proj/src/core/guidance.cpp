#include "factordiff/guidance.hpp"

#include <cmath>

#include "factordiff/error.hpp"

namespace factordiff {

std::string to_string(GuidanceMode mode) {
  switch (mode) {
    case GuidanceMode::none: return "none";
    case GuidanceMode::predictor: return "predictor";
    case GuidanceMode::predictor_free: return "predictor_free";
  }
  return "none";
}

GuidanceMode parse_guidance_mode(const std::string& name) {
  if (name == "none") return GuidanceMode::none;
  if (name == "predictor") return GuidanceMode::predictor;
  if (name == "predictor_free") return GuidanceMode::predictor_free;
  fail(ErrorKind::config, "unknown guidance mode '" + name + "' (expected none, predictor or predictor_free)");
}

void GuidanceConfig::validate() const {
  require(std::isfinite(omega) && omega >= 0.0, ErrorKind::config, "guidance omega must be >= 0");
  require(std::isfinite(omega_free), ErrorKind::config, "guidance omega_free must be finite");
  if (mode == GuidanceMode::predictor) {
    require(predictor != nullptr, ErrorKind::config, "predictor guidance needs a trained predictor");
  }
  if (mode == GuidanceMode::predictor_free) {
    require(omega_free >= 1.0, ErrorKind::config, "predictor-free guidance needs omega_free >= 1");
  }
}

Tensor predictor_guided_eps(const Tensor& eps_hat, const Tensor& x_t, std::span<const double> y,
                            std::span<const int> steps, const Schedule& sched, const GuidanceConfig& cfg) {
  require(cfg.predictor != nullptr, ErrorKind::config, "predictor guidance needs a trained predictor");
  require(eps_hat.shape() == x_t.shape(), ErrorKind::shape,
          "predictor guidance: eps " + to_string(eps_hat.shape()) + " vs x_t " + to_string(x_t.shape()));
  if (cfg.omega == 0.0) {
    return eps_hat;
  }
  const bool single = x_t.rank() == 2;
  const std::size_t n = single ? 1 : x_t.dim(0);
  require(steps.size() == n && y.size() == n, ErrorKind::shape,
          "predictor guidance needs one step and one label per sample");
  const Tensor grad = cfg.predictor->input_gradient(x_t, y);
  const std::size_t per = x_t.size() / n;
  std::vector<double> out(eps_hat.size());
  for (std::size_t i = 0; i < n; ++i) {
    const double c = std::sqrt(1.0 - sched.alpha_bar(steps[i])) * cfg.omega;
    for (std::size_t j = i * per; j < (i + 1) * per; ++j) {
      out[j] = eps_hat[j] - c * grad[j];
    }
  }
  return Tensor(eps_hat.shape(), std::move(out));
}

Tensor cfg_eps(const Tensor& eps_cond, const Tensor& eps_uncond, double omega_free) {
  require(eps_cond.shape() == eps_uncond.shape(), ErrorKind::shape,
          "cfg_eps: conditional " + to_string(eps_cond.shape()) + " vs unconditional " +
              to_string(eps_uncond.shape()));
  std::vector<double> out(eps_cond.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = eps_cond[i] + (omega_free - 1.0) * (eps_cond[i] - eps_uncond[i]);
  }
  return Tensor(eps_cond.shape(), std::move(out));
}

Tensor eps_for_step(const DenoiserModel& model, const Tensor& x_t, std::span<const int> steps,
                    std::span<const SampleCondition> conds, std::span<const double> labels,
                    const Schedule& sched, const GuidanceConfig& cfg) {
  cfg.validate();
  switch (cfg.mode) {
    case GuidanceMode::none:
      return model.denoise_eps(x_t, steps, conds);
    case GuidanceMode::predictor: {
      const auto none = null_conditions(steps.size());
      return predictor_guided_eps(model.denoise_eps(x_t, steps, none), x_t, labels, steps, sched, cfg);
    }
    case GuidanceMode::predictor_free: {
      const Tensor cond = model.denoise_eps(x_t, steps, conds);
      if (cfg.omega_free == 1.0) {
        return cond;
      }
      const auto none = null_conditions(steps.size());
      return cfg_eps(cond, model.denoise_eps(x_t, steps, none), cfg.omega_free);
    }
  }
  return model.denoise_eps(x_t, steps, conds);
}

}  // namespace factordiff
