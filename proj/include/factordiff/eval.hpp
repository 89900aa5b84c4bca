#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "factordiff/data.hpp"
#include "factordiff/tensor.hpp"

namespace factordiff {

/// Average (1-based) ranks; tied values share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);

/// Pearson correlation; weights are optional (empty means uniform).
double pearson(std::span<const double> x, std::span<const double> y,
               std::span<const double> weights = {});

/// Mean over days of the cross-sectional Pearson correlation. Days with
/// fewer than three stocks or with a constant side are skipped.
double information_coefficient(std::span<const double> pred, std::span<const double> label,
                               std::span<const std::int64_t> day);
/// Mean over days of the Spearman correlation (average ranks for ties).
double rank_ic(std::span<const double> pred, std::span<const double> label,
               std::span<const std::int64_t> day);
/// Per day: sort by descending prediction, weight rank r (0-based) by
/// 0.5^(r / H), and take the weighted Pearson correlation. Without a half-life
/// H is N/10 for the N stocks of that day.
double weighted_ic(std::span<const double> pred, std::span<const double> label,
                   std::span<const std::int64_t> day, std::optional<double> half_life = std::nullopt);

/// Frechet distance between Gaussian fits of two row sets (rows are
/// samples): |mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2), with a
/// 1e-6 ridge on both covariances.
double frechet_distance(const Tensor& a, const Tensor& b);
/// Same on flattened [k * d] windows.
double frechet_distance(const SequenceBatch& a, const SequenceBatch& b);

struct BacktestOptions {
  std::size_t top_k = 30;
  /// Exit a held stock once its price ratio since entry falls below this. It
  /// stays out while ranked in the top K; the slot goes to the next-ranked stock.
  std::optional<double> stop_loss;
  double annualization = 252.0;
};

struct BacktestResult {
  double annualized_rr = 0.0;
  double information_ratio = 0.0;
  /// Excess returns had zero spread, so the information ratio is reported as 0.
  bool ir_degenerate = false;
  std::vector<std::int64_t> days;
  std::vector<double> daily;       // portfolio return per day
  std::vector<double> benchmark;   // equal-weight universe return per day
};

/// Daily rebalanced equal-weight portfolio of the top-K predictions (ties by
/// ascending stock id). `next_return` holds each (day, stock)'s realized
/// return over the following holding day.
BacktestResult backtest_topk_dropk(std::span<const double> pred, std::span<const double> next_return,
                                   std::span<const std::int64_t> day,
                                   std::span<const std::int64_t> stock,
                                   const BacktestOptions& options = {});

/// Backtest of per-sample predictions; each sample's next-day return is read
/// from the panel and the last panel day is skipped.
BacktestResult backtest_predictions(std::span<const double> pred, const SequenceBatch& batch,
                                   const FactorPanel& panel, const BacktestOptions& options = {});

struct EvalReport {
  double ic = 0.0;
  double rank_ic = 0.0;
  double weighted_ic = 0.0;
  std::optional<double> fid;
  double annualized_rr = 0.0;
  double information_ratio = 0.0;
  bool ir_degenerate = false;
  std::size_t n_days = 0;
  std::size_t n_samples = 0;
  /// Serialized configuration that produced the report (JSON text).
  std::string config = "{}";

  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Metrics and backtest for predictions on a batch. Realized next-day
/// returns come from the panel the batch was windowed from.
EvalReport evaluate_predictions(std::span<const double> pred, const SequenceBatch& batch,
                                const FactorPanel& panel, const BacktestOptions& options = {});

}  // namespace factordiff
