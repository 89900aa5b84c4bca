#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "factordiff/random.hpp"
#include "factordiff/tensor.hpp"

namespace factordiff {

// ---------------------------------------------------------------------------
// Panel and synthetic market
// ---------------------------------------------------------------------------

/// Per-(stock, day) close prices and raw factors. Days are trading-day
/// indices 0..days-1; storage is stock-major.
struct FactorPanel {
  std::size_t stocks = 0;
  std::size_t days = 0;
  std::size_t factors = 0;
  std::vector<int> sector;      // [stocks]
  std::vector<double> close;    // [stocks * days]
  std::vector<double> values;   // [stocks * days * factors]

  double close_at(std::size_t stock, std::size_t day) const { return close[stock * days + day]; }
  std::span<const double> factor_row(std::size_t stock, std::size_t day) const {
    return {values.data() + (stock * days + day) * factors, factors};
  }
  void validate() const;
};

struct MarketConfig {
  std::size_t stocks = 500;
  std::size_t days = 1500;
  std::size_t sectors = 5;
  std::size_t factors = 16;
  std::size_t signal_factors = 4;
  std::size_t lookback = 8;
  int horizon = 5;
  /// Variance ratio of the planted label component to the rest.
  double snr = 0.25;
  double signal_persistence = 0.9;   // AR(1) coefficient of signal columns
  double sector_persistence = 0.3;   // AR(1) coefficient of sector returns
  double sector_share = 0.4;         // share of return noise from the sector
  double daily_vol = 0.02;
  /// Optional high-SNR window, as fractions of the calendar.
  double easy_begin = 0.0;
  double easy_end = 0.0;
  double easy_snr_mult = 4.0;
  /// Planted weights on the signal columns; drawn from the seed when empty.
  std::vector<double> weights;

  void validate() const;
};

struct SyntheticMarket {
  FactorPanel panel;
  /// Planted weights over all factors (zero outside the signal columns).
  std::vector<double> weights;
  /// Stock "size"; larger is a bigger, calmer company.
  std::vector<double> size;
  MarketConfig config;
  std::uint64_t seed = 0;
};

/// Sector AR(1) returns plus idiosyncratic noise drive prices; the signal
/// columns are AR(1) processes whose window mean, projected on the planted
/// weights, feeds the next days' returns so that corr(w . xbar, RR) equals
/// sqrt(snr / (1 + snr)) in population.
SyntheticMarket gen_synthetic_market(const MarketConfig& config, std::uint64_t seed);

/// Population correlation the generator targets for a given SNR.
double planted_correlation(double snr);

// ---------------------------------------------------------------------------
// Labels and sequences
// ---------------------------------------------------------------------------

/// (close[t+h] - close[t]) / close[t]; std::nullopt when t+h is past the end.
std::optional<double> return_ratio(const FactorPanel& panel, std::size_t stock, std::size_t day,
                                   int horizon);

struct SampleMeta {
  std::int64_t stock = 0;
  std::int64_t date = 0;
  std::int32_t sector = 0;
  friend bool operator==(const SampleMeta&, const SampleMeta&) = default;
  friend auto operator<=>(const SampleMeta&, const SampleMeta&) = default;
};

/// Robust (median / MAD) statistics per factor.
struct RobustStats {
  std::vector<double> median;
  std::vector<double> mad;
  std::vector<bool> constant;
  std::vector<std::string> warnings;
  friend bool operator==(const RobustStats&, const RobustStats&) = default;
};

/// n windowed samples: X [n, k, d], labels, and per-sample metadata.
struct SequenceBatch {
  Tensor x{Shape{0, 0, 0}};
  std::vector<double> y;
  std::vector<SampleMeta> meta;
  std::optional<RobustStats> stats;

  std::size_t size() const noexcept { return y.size(); }
  std::size_t tokens() const { return x.dim(1); }
  std::size_t factors() const { return x.dim(2); }
  /// Sample i as a [k, d] tensor.
  Tensor sample(std::size_t i) const;

  SequenceBatch subset(std::span<const std::size_t> indices) const;
  /// Same metadata and labels with new factor values.
  SequenceBatch with_x(Tensor x) const;
  void validate() const;

  friend bool operator==(const SequenceBatch&, const SequenceBatch&) = default;
};

SequenceBatch concat(const SequenceBatch& a, const SequenceBatch& b);

/// One sample per (stock, day) with `lookback` days of history and a
/// `horizon`-day label. Optional stock filter and date range [begin, end).
struct WindowOptions {
  std::size_t lookback = 8;
  int horizon = 5;
  std::int64_t date_begin = 0;
  std::int64_t date_end = -1;  // -1: no limit
  std::vector<std::size_t> stocks;  // empty: all
};
SequenceBatch window_sequences(const FactorPanel& panel, const WindowOptions& options);

/// Number of windows window_sequences yields per stock over `days` days.
std::size_t windows_per_stock(std::size_t days, std::size_t lookback, int horizon);

// ---------------------------------------------------------------------------
// Normalization and label filtering
// ---------------------------------------------------------------------------

/// Median and MAD of each column of a row-major [rows, d] matrix.
RobustStats fit_robust_stats(std::span<const double> rows, std::size_t d);
/// Statistics over panel rows with dates in [date_begin, date_end).
RobustStats fit_robust_stats(const FactorPanel& panel, std::int64_t date_begin,
                             std::int64_t date_end, std::span<const std::size_t> stocks = {});
/// (x - MED) / MAD per factor; constant factors map to 0.
SequenceBatch robust_zscore(const SequenceBatch& batch, const RobustStats& stats);
double robust_zscore_value(double x, const RobustStats& stats, std::size_t factor);

struct LabelFilter {
  enum class Mode { threshold, percentile };
  Mode mode = Mode::threshold;
  double low = -std::numeric_limits<double>::infinity();
  double high = std::numeric_limits<double>::infinity();
};

struct FilteredBatch {
  SequenceBatch batch;
  std::size_t dropped = 0;
};

/// Removes samples whose labels fall outside the bounds. Percentile bounds
/// are given in percent (e.g. 2.5, 97.5) and use the empirical quantiles.
FilteredBatch drop_extreme_labels(const SequenceBatch& batch, const LabelFilter& filter);

/// X + sigma * N(0, 1) elementwise; labels unchanged.
SequenceBatch noise_augment_baseline(const SequenceBatch& batch, double sigma, std::uint64_t seed);

/// Replaces a fraction of labels with labels drawn from other samples.
SequenceBatch inject_label_noise(const SequenceBatch& batch, double fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Splits and dataset preparation
// ---------------------------------------------------------------------------

/// Chronological split: train dates < train_end <= valid dates < valid_end <= test dates.
struct DateSplit {
  std::int64_t train_end = 0;
  std::int64_t valid_end = 0;
  std::int64_t days = 0;
};
DateSplit chronological_split(std::size_t days, double train_frac = 0.6, double valid_frac = 0.2);

struct PreparedData {
  SequenceBatch source_train;
  SequenceBatch target_train;
  SequenceBatch target_valid;
  SequenceBatch target_test;
  std::vector<std::size_t> target_stocks;
  DateSplit split;
  RobustStats stats;
};

/// Windows, splits and normalizes a market. Statistics come from source
/// training rows only; windows whose labels reach into the next split are
/// purged. Target stocks are the `target_stocks` largest by size.
PreparedData prepare_datasets(const SyntheticMarket& market, std::size_t target_stocks);

/// Planted linear functional on normalized factors: weights rescaled by MAD
/// so that w . xbar(raw) = w_norm . xbar(normalized) + const.
std::vector<double> normalized_weights(const std::vector<double>& weights, const RobustStats& stats);

/// w . (mean over tokens of sample i).
double planted_signal(const SequenceBatch& batch, std::size_t i, std::span<const double> weights);

}  // namespace factordiff
