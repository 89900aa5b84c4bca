#include "factordiff/optim.hpp"

#include <cmath>
#include <numbers>
#include <vector>

#include "factordiff/error.hpp"

namespace factordiff {

void Adam::step(ParameterSet& params, const ParameterSet& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, value] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) {
      continue;
    }
    const Tensor& g = git->second;
    require(g.shape() == value.shape(), ErrorKind::shape, "Adam: gradient shape mismatch for " + name);
    auto [mit, m_new] = m_.try_emplace(name, Tensor(value.shape()));
    auto [vit, v_new] = v_.try_emplace(name, Tensor(value.shape()));
    std::vector<double> m = mit->second.to_vector();
    std::vector<double> v = vit->second.to_vector();
    std::vector<double> p = value.to_vector();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
    mit->second = Tensor(value.shape(), std::move(m));
    vit->second = Tensor(value.shape(), std::move(v));
    value = Tensor(value.shape(), std::move(p));
  }
}

void MomentumSgd::step(ParameterSet& params, const ParameterSet& grads, double lr) {
  for (auto& [name, value] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) {
      continue;
    }
    const Tensor& g = git->second;
    auto [it, inserted] = velocity_.try_emplace(name, Tensor(value.shape()));
    std::vector<double> vel = it->second.to_vector();
    std::vector<double> p = value.to_vector();
    for (std::size_t i = 0; i < p.size(); ++i) {
      vel[i] = momentum_ * vel[i] + g[i] + weight_decay_ * p[i];
      p[i] -= lr * vel[i];
    }
    it->second = Tensor(value.shape(), std::move(vel));
    value = Tensor(value.shape(), std::move(p));
  }
}

double cosine_lr(double base_lr, std::size_t step, std::size_t total) noexcept {
  if (total == 0) {
    return base_lr;
  }
  const double frac = static_cast<double>(step) / static_cast<double>(total);
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace factordiff
