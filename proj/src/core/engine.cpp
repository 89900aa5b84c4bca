#include "factordiff/engine.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "factordiff/error.hpp"
#include "factordiff/eval.hpp"
#include "factordiff/ops.hpp"
#include "factordiff/optim.hpp"

namespace factordiff {

namespace {

constexpr std::uint64_t kTrainStream = 0x7a17ULL;
constexpr std::uint64_t kEvalStream = 0xe7a1ULL;

// x_t for each sample of x0 [B, k, d] at its own step.
Tensor corrupt(const Tensor& x0, std::span<const int> steps, const Tensor& noise, const Schedule& sched) {
  const std::size_t n = x0.dim(0);
  const std::size_t per = x0.size() / std::max<std::size_t>(n, 1);
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < n; ++i) {
    const double ab = sched.alpha_bar(steps[i]);
    const double a = std::sqrt(ab);
    const double b = std::sqrt(1.0 - ab);
    for (std::size_t j = i * per; j < (i + 1) * per; ++j) {
      out[j] = a * x0[j] + b * noise[j];
    }
  }
  return Tensor(x0.shape(), std::move(out));
}

}  // namespace

void TrainRunConfig::validate(const Schedule& sched) const {
  require(t_prime >= 1 && static_cast<std::size_t>(t_prime) <= sched.steps(), ErrorKind::config,
          "training t_prime must lie in 1.." + std::to_string(sched.steps()) + ", got " +
              std::to_string(t_prime));
  require(batch_size > 0, ErrorKind::config, "training batch_size must be positive");
  require(std::isfinite(lr) && lr > 0.0, ErrorKind::config, "training lr must be positive");
  require(cond_drop_prob >= 0.0 && cond_drop_prob <= 1.0, ErrorKind::config,
          "cond_drop_prob must lie in [0, 1]");
  require(eval_t_max >= 0 && static_cast<std::size_t>(eval_t_max) <= sched.steps(), ErrorKind::config,
          "eval_t_max must lie in 0.." + std::to_string(sched.steps()));
}

std::size_t TrainRunConfig::total_steps(std::size_t samples) const {
  if (steps > 0) return steps;
  return epochs * ((samples + batch_size - 1) / batch_size);
}

std::vector<SampleCondition> batch_conditions(const SequenceBatch& batch) {
  std::vector<SampleCondition> out(batch.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].label = batch.y[i];
    out[i].sector = static_cast<int>(batch.meta[i].sector);
  }
  return out;
}

double diffusion_eval_loss(const DenoiserModel& model, const Schedule& sched, const SequenceBatch& batch,
                           std::span<const int> steps, const Tensor& noise) {
  require(steps.size() == batch.size() && noise.shape() == batch.x.shape(), ErrorKind::shape,
          "eval loss needs one step and one noise window per sample");
  const Tensor x_t = corrupt(batch.x, steps, noise, sched);
  const Tensor eps_hat = model.denoise_eps(x_t, steps, batch_conditions(batch));
  return diffusion_loss(noise, eps_hat);
}

TrainedDenoiser train_diffusion(const SequenceBatch& source, DenoiserModel model, const Schedule& sched,
                                const TrainRunConfig& cfg) {
  cfg.validate(sched);
  source.validate();
  require(source.size() > 0, ErrorKind::domain, "train_diffusion: empty source set");
  const DenoiserConfig& mc = model.config();
  require(source.tokens() == mc.tokens && source.factors() == mc.factors, ErrorKind::shape,
          "source windows [" + std::to_string(source.tokens()) + ", " + std::to_string(source.factors()) +
              "] do not match the denoiser input [" + std::to_string(mc.tokens) + ", " +
              std::to_string(mc.factors) + "]");

  TrainedDenoiser out{model, sched, {}, false};
  const std::size_t total = cfg.total_steps(source.size());
  const std::size_t n = source.size();

  SequenceBatch eval_set;
  std::vector<int> eval_steps;
  Tensor eval_noise;
  const bool evaluating = cfg.eval_t_max > 0 && cfg.eval_every > 0;
  if (evaluating) {
    Rng rng = make_stream(cfg.seed, kEvalStream);
    const std::size_t m = std::min(cfg.eval_samples, n);
    std::vector<std::size_t> idx(m);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (auto& i : idx) i = pick(rng);
    eval_set = source.subset(idx);
    std::uniform_int_distribution<int> step(1, cfg.eval_t_max);
    eval_steps.resize(m);
    for (auto& t : eval_steps) t = step(rng);
    eval_noise = normal_tensor(eval_set.x.shape(), rng);
  }

  Adam optimizer(cfg.lr);
  Rng rng = make_stream(cfg.seed, kTrainStream);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::uniform_int_distribution<int> step_dist(1, cfg.t_prime);
  const auto start = std::chrono::steady_clock::now();

  for (std::size_t step = 0; step < total; ++step) {
    std::vector<std::size_t> idx(cfg.batch_size);
    for (auto& i : idx) i = pick(rng);
    const SequenceBatch mb = source.subset(idx);
    std::vector<int> steps(cfg.batch_size);
    for (auto& t : steps) t = step_dist(rng);
    const Tensor noise = normal_tensor(mb.x.shape(), rng);
    std::vector<SampleCondition> conds = batch_conditions(mb);
    drop_conditions(conds, cfg.cond_drop_prob, rng);
    const Tensor x_t = corrupt(mb.x, steps, noise, sched);

    double loss_value = 0.0;
    ParameterSet grads;
    try {
      Graph g;
      ParamBinder p(g, model.parameters(), true);
      Var eps_hat = model.forward(p, g.constant(x_t), steps, conds);
      Var loss = ops::mse(eps_hat, g.constant(noise));
      loss_value = loss.value().item();
      grads = gradients_for(model.parameters(), g.backward(loss));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::numeric) throw;
      loss_value = std::nan("");
    }
    bool finite = std::isfinite(loss_value);
    if (finite) {
      for (const auto& [name, gtensor] : grads) {
        if (!gtensor.all_finite()) {
          finite = false;
          break;
        }
      }
    }
    if (!finite) {
      out.diverged = true;
      out.history.push_back({step, loss_value, cfg.lr, 0.0, std::nullopt});
      break;
    }

    optimizer.step(model.parameters(), grads);
    const bool params_finite = std::all_of(model.parameters().begin(), model.parameters().end(),
                                           [](const auto& kv) { return kv.second.all_finite(); });
    if (!params_finite) {
      out.diverged = true;
      out.history.push_back({step, loss_value, cfg.lr, 0.0, std::nullopt});
      break;
    }
    TrainRecord rec{step, loss_value, cfg.lr, 0.0, std::nullopt};
    if (evaluating && ((step + 1) % cfg.eval_every == 0 || step + 1 == total)) {
      rec.eval_loss = diffusion_eval_loss(model, sched, eval_set, eval_steps, eval_noise);
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.history.push_back(rec);
    out.model = model;
  }
  return out;
}

Tensor ddim_step(const Tensor& x_cur, const Tensor& eps_eff, int tau_cur, int tau_prev, const Schedule& sched) {
  require(tau_prev >= 0 && tau_prev < tau_cur, ErrorKind::domain,
          "ddim_step needs 0 <= tau_prev < tau_cur, got " + std::to_string(tau_prev) + " and " +
              std::to_string(tau_cur));
  require(x_cur.shape() == eps_eff.shape(), ErrorKind::shape,
          "ddim_step: x " + to_string(x_cur.shape()) + " vs eps " + to_string(eps_eff.shape()));
  const double ab_cur = sched.alpha_bar(tau_cur);
  const double ab_prev = sched.alpha_bar(tau_prev);
  const double s_cur = std::sqrt(1.0 - ab_cur);
  const double r_cur = std::sqrt(ab_cur);
  std::vector<double> out(x_cur.size());
  if (tau_prev == 0) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = (x_cur[i] - s_cur * eps_eff[i]) / r_cur;
    }
  } else {
    const double r_prev = std::sqrt(ab_prev);
    const double s_prev = std::sqrt(1.0 - ab_prev);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double x0 = (x_cur[i] - s_cur * eps_eff[i]) / r_cur;
      out[i] = r_prev * x0 + s_prev * eps_eff[i];
    }
  }
  return Tensor(x_cur.shape(), std::move(out));
}

std::vector<int> ddim_subsequence(int t_prime, std::size_t l) {
  require(t_prime >= 0, ErrorKind::domain, "ddim_subsequence: negative editing step");
  require(l > 0, ErrorKind::config, "ddim_subsequence: need at least one step");
  const std::size_t count = std::min<std::size_t>(l, static_cast<std::size_t>(t_prime));
  std::vector<int> tau(count);
  for (std::size_t j = 1; j <= count; ++j) {
    tau[j - 1] = static_cast<int>(std::lround(static_cast<double>(j) * t_prime / static_cast<double>(count)));
  }
  return tau;
}

void EditRunConfig::validate(const Schedule& sched) const {
  const int t_max = static_cast<int>(sched.steps());
  require(ddim_steps > 0, ErrorKind::config, "ddim_steps must be positive");
  require(workers > 0 && chunk > 0, ErrorKind::config, "workers and chunk must be positive");
  if (loss_guided) {
    require(0 <= t_prime_min && t_prime_min <= t_prime_max && t_prime_max <= t_max, ErrorKind::config,
            "loss-guided editing needs 0 <= t_prime_min <= t_prime_max <= " + std::to_string(t_max));
  } else {
    require(t_prime >= 0 && t_prime <= t_max, ErrorKind::config,
            "editing step " + std::to_string(t_prime) + " exceeds the schedule length " + std::to_string(t_max));
  }
  guidance.validate();
}

std::vector<int> assign_editing_steps(std::span<const double> losses, int t_min, int t_max) {
  require(!losses.empty(), ErrorKind::domain, "assign_editing_steps: no losses");
  require(t_min <= t_max, ErrorKind::domain, "assign_editing_steps: t_min exceeds t_max");
  for (double v : losses) {
    require(std::isfinite(v), ErrorKind::numeric, "assign_editing_steps: non-finite loss");
  }
  const std::vector<double> ranks = average_ranks(losses);
  const double n = static_cast<double>(losses.size());
  std::vector<int> out(losses.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double frac = losses.size() == 1 ? 0.5 : (ranks[i] - 1.0) / (n - 1.0);
    out[i] = static_cast<int>(std::lround(t_max - frac * (t_max - t_min)));
  }
  return out;
}

SequenceBatch edit_samples(const SequenceBatch& target, const DenoiserModel& model, const Schedule& sched,
                           const EditRunConfig& cfg, std::span<const double> losses) {
  cfg.validate(sched);
  if (cfg.loss_guided) {
    require(losses.size() == target.size(), ErrorKind::shape,
            "loss-guided editing needs one loss per sample: " + std::to_string(losses.size()) + " vs " +
                std::to_string(target.size()));
    const std::vector<int> steps = assign_editing_steps(losses, cfg.t_prime_min, cfg.t_prime_max);
    return edit_samples_at(target, model, sched, cfg, steps);
  }
  const std::vector<int> steps(target.size(), cfg.t_prime);
  return edit_samples_at(target, model, sched, cfg, steps);
}

SequenceBatch edit_samples_at(const SequenceBatch& target, const DenoiserModel& model, const Schedule& sched,
                              const EditRunConfig& cfg, std::span<const int> t_primes) {
  cfg.validate(sched);
  target.validate();
  const std::size_t n = target.size();
  require(t_primes.size() == n, ErrorKind::shape, "edit_samples: one editing step per sample required");
  for (int t : t_primes) {
    require(t >= 0 && static_cast<std::size_t>(t) <= sched.steps(), ErrorKind::config,
            "editing step " + std::to_string(t) + " exceeds the schedule length " +
                std::to_string(sched.steps()));
  }
  if (n == 0) return target;
  const DenoiserConfig& mc = model.config();
  require(target.tokens() == mc.tokens && target.factors() == mc.factors, ErrorKind::shape,
          "target windows do not match the denoiser input");

  const std::size_t per = target.x.size() / n;
  const Shape sample_shape{target.tokens(), target.factors()};
  std::vector<double> result(target.x.values().begin(), target.x.values().end());
  const bool conditioned = cfg.guidance.mode == GuidanceMode::predictor_free;

  auto run_chunk = [&](std::size_t begin, std::size_t end) {
    std::vector<std::vector<int>> taus;
    std::vector<std::vector<double>> xs;
    std::vector<std::size_t> ids;
    std::size_t longest = 0;
    for (std::size_t i = begin; i < end; ++i) {
      if (t_primes[i] == 0) continue;
      Rng rng = make_stream(cfg.seed, i);
      const std::vector<double> eps = normal_vector(per, rng);
      const double ab = sched.alpha_bar(t_primes[i]);
      std::vector<double> x(per);
      for (std::size_t j = 0; j < per; ++j) {
        x[j] = std::sqrt(ab) * target.x[i * per + j] + std::sqrt(1.0 - ab) * eps[j];
      }
      xs.push_back(std::move(x));
      taus.push_back(ddim_subsequence(t_primes[i], cfg.ddim_steps));
      ids.push_back(i);
      longest = std::max(longest, taus.back().size());
    }
    // Iteration s moves every sample with more than s remaining steps.
    for (std::size_t s = 0; s < longest; ++s) {
      std::vector<std::size_t> active;
      for (std::size_t a = 0; a < ids.size(); ++a) {
        if (s < taus[a].size()) active.push_back(a);
      }
      const std::size_t m = active.size();
      std::vector<double> xv(m * per);
      std::vector<int> cur(m), prev(m);
      std::vector<SampleCondition> conds(m);
      std::vector<double> labels(m);
      for (std::size_t r = 0; r < m; ++r) {
        const std::size_t a = active[r];
        const auto& tau = taus[a];
        const std::size_t pos = tau.size() - 1 - s;
        cur[r] = tau[pos];
        prev[r] = pos == 0 ? 0 : tau[pos - 1];
        std::copy(xs[a].begin(), xs[a].end(), xv.begin() + static_cast<std::ptrdiff_t>(r * per));
        const std::size_t i = ids[a];
        labels[r] = target.y[i];
        if (conditioned) {
          conds[r].label = target.y[i];
          conds[r].sector = static_cast<int>(target.meta[i].sector);
        }
      }
      const Tensor x_t({m, sample_shape[0], sample_shape[1]}, std::move(xv));
      const Tensor eps = eps_for_step(model, x_t, cur, conds, labels, sched, cfg.guidance);
      for (std::size_t r = 0; r < m; ++r) {
        const std::size_t a = active[r];
        const Tensor xr(sample_shape, std::vector<double>(x_t.data() + r * per, x_t.data() + (r + 1) * per));
        const Tensor er(sample_shape, std::vector<double>(eps.data() + r * per, eps.data() + (r + 1) * per));
        const Tensor next = ddim_step(xr, er, cur[r], prev[r], sched);
        require(next.all_finite(), ErrorKind::numeric,
                "edit_samples: non-finite value for sample " + std::to_string(ids[a]));
        std::copy(next.values().begin(), next.values().end(), xs[a].begin());
      }
    }
    for (std::size_t a = 0; a < ids.size(); ++a) {
      std::copy(xs[a].begin(), xs[a].end(), result.begin() + static_cast<std::ptrdiff_t>(ids[a] * per));
    }
  };

  const std::size_t chunks = (n + cfg.chunk - 1) / cfg.chunk;
  const std::size_t workers = std::min(cfg.workers, chunks);
  if (workers <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) {
      run_chunk(c * cfg.chunk, std::min(n, (c + 1) * cfg.chunk));
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t c = next.fetch_add(1);
          if (c >= chunks) return;
          try {
            run_chunk(c * cfg.chunk, std::min(n, (c + 1) * cfg.chunk));
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            next.store(chunks);
            return;
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }
  return target.with_x(Tensor(target.x.shape(), std::move(result)));
}

std::string to_string(AugmentMode mode) {
  switch (mode) {
    case AugmentMode::off: return "off";
    case AugmentMode::fixed: return "fixed";
    case AugmentMode::per_epoch: return "per_epoch";
    case AugmentMode::union_raw: return "union";
  }
  return "off";
}

AugmentMode parse_augment_mode(const std::string& name) {
  if (name == "off") return AugmentMode::off;
  if (name == "fixed") return AugmentMode::fixed;
  if (name == "per_epoch") return AugmentMode::per_epoch;
  if (name == "union") return AugmentMode::union_raw;
  fail(ErrorKind::config, "unknown augment mode '" + name + "' (expected off, fixed, per_epoch or union)");
}

BatchSource augmented_source(const SequenceBatch& raw, const DenoiserModel& model, const Schedule& sched,
                             const EditRunConfig& cfg, AugmentMode mode, std::vector<double> losses) {
  if (mode == AugmentMode::off) {
    return [raw](std::size_t) { return raw; };
  }
  cfg.validate(sched);
  auto edit = [&model, &sched, cfg, raw, losses](std::size_t epoch) {
    EditRunConfig c = cfg;
    c.seed = epoch == 0 ? cfg.seed : mix64(cfg.seed ^ (0x9e3779b97f4a7c15ULL * epoch));
    return edit_samples(raw, model, sched, c, losses);
  };
  if (mode == AugmentMode::fixed) {
    SequenceBatch once = edit(0);
    return [once](std::size_t) { return once; };
  }
  if (mode == AugmentMode::per_epoch) {
    return edit;
  }
  return [edit, raw](std::size_t epoch) { return concat(raw, edit(epoch)); };
}

}  // namespace factordiff
