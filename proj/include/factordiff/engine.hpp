#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "factordiff/data.hpp"
#include "factordiff/denoiser.hpp"
#include "factordiff/guidance.hpp"
#include "factordiff/predictor.hpp"
#include "factordiff/schedule.hpp"

namespace factordiff {

struct TrainRunConfig {
  /// Training steps are drawn uniformly from 1..t_prime.
  int t_prime = 1000;
  /// Passes over the source set; ignored when `steps` is nonzero.
  std::size_t epochs = 10;
  /// Optimizer steps; 0 derives them from `epochs`.
  std::size_t steps = 0;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  /// Probability of replacing both conditions with the null embedding.
  double cond_drop_prob = 0.1;
  std::uint64_t seed = 0;
  /// Held-out loss on a fixed draw of samples with steps in 1..eval_t_max,
  /// recorded every `eval_every` steps. 0 disables it.
  int eval_t_max = 0;
  std::size_t eval_every = 0;
  std::size_t eval_samples = 256;

  void validate(const Schedule& sched) const;
  std::size_t total_steps(std::size_t samples) const;
};

struct TrainRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
  std::optional<double> eval_loss;
};

struct TrainedDenoiser {
  DenoiserModel model;
  Schedule schedule;
  std::vector<TrainRecord> history;
  /// Training stopped on a non-finite loss; `model` holds the last finite
  /// parameters.
  bool diverged = false;
};

/// Conditions carried by a batch: its labels and sector ids.
std::vector<SampleCondition> batch_conditions(const SequenceBatch& batch);

/// Mean noise-prediction error on `batch` with the given per-sample steps and
/// noise. Conditions are the batch's own.
double diffusion_eval_loss(const DenoiserModel& model, const Schedule& sched, const SequenceBatch& batch,
                           std::span<const int> steps, const Tensor& noise);

/// Minibatch (sampled with replacement) noise-prediction training with Adam.
TrainedDenoiser train_diffusion(const SequenceBatch& source, DenoiserModel model, const Schedule& sched,
                                const TrainRunConfig& cfg);

/// One deterministic DDIM update from tau_cur to tau_prev (0 means the clean
/// estimate itself).
Tensor ddim_step(const Tensor& x_cur, const Tensor& eps_eff, int tau_cur, int tau_prev, const Schedule& sched);

/// min(l, t_prime) steps evenly spaced over 1..t_prime: round(j * t_prime / l).
std::vector<int> ddim_subsequence(int t_prime, std::size_t l);

struct EditRunConfig {
  int t_prime = 300;
  std::size_t ddim_steps = 50;
  GuidanceConfig guidance;
  /// Per-sample editing steps from training losses (see assign_editing_steps).
  bool loss_guided = false;
  int t_prime_min = 100;
  int t_prime_max = 500;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  /// Samples per denoiser call.
  std::size_t chunk = 64;

  void validate(const Schedule& sched) const;
};

/// Rank-based decreasing map: the lowest loss gets t_max, the highest t_min,
/// linear in average rank, rounded to the nearest step.
std::vector<int> assign_editing_steps(std::span<const double> losses, int t_min, int t_max);

/// Corrupts every sample to its editing step with noise from stream
/// (seed, sample index), then runs the DDIM chain back to 0. Labels and
/// metadata are kept. `losses` (one per sample) are required when
/// cfg.loss_guided is set.
SequenceBatch edit_samples(const SequenceBatch& target, const DenoiserModel& model, const Schedule& sched,
                           const EditRunConfig& cfg, std::span<const double> losses = {});

/// Same with explicit per-sample editing steps.
SequenceBatch edit_samples_at(const SequenceBatch& target, const DenoiserModel& model, const Schedule& sched,
                              const EditRunConfig& cfg, std::span<const int> t_primes);

enum class AugmentMode { off, fixed, per_epoch, union_raw };

std::string to_string(AugmentMode mode);
AugmentMode parse_augment_mode(const std::string& name);

/// Training-set source for the regressor:
///   off        the raw batch every epoch
///   fixed      one edited set reused every epoch
///   per_epoch  a fresh edit per epoch (seed varied by epoch)
///   union_raw  raw samples plus the epoch's fresh edit
/// The model, schedule and predictor referenced by cfg must outlive the source.
BatchSource augmented_source(const SequenceBatch& raw, const DenoiserModel& model, const Schedule& sched,
                             const EditRunConfig& cfg, AugmentMode mode, std::vector<double> losses = {});

}  // namespace factordiff
