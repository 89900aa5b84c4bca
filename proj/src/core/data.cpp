#include "factordiff/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "factordiff/error.hpp"

namespace factordiff {

namespace {

constexpr std::size_t kBurnIn = 40;

double median_of(std::vector<double>& v) {
  const std::size_t n = v.size();
  const std::size_t mid = n / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (n % 2 == 1) {
    return hi;
  }
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

// Linear-interpolated empirical quantile, q in [0, 1].
double quantile(std::vector<double> sorted, double q) {
  std::sort(sorted.begin(), sorted.end());
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

// Covariance of window means of a unit-variance AR(1) process at lag h.
double window_mean_cov(double phi, std::size_t k, std::ptrdiff_t h) {
  double acc = 0.0;
  const auto kk = static_cast<std::ptrdiff_t>(k);
  for (std::ptrdiff_t a = 0; a < kk; ++a) {
    for (std::ptrdiff_t b = 0; b < kk; ++b) {
      acc += std::pow(phi, static_cast<double>(std::abs(a - b + h)));
    }
  }
  return acc / static_cast<double>(k * k);
}

// Signal and noise loadings (a, b) such that the h-day sum of
// a * s_{t+j} + b * n_{t+j+1} correlates with s_t at sqrt(snr / (1 + snr))
// and has the variance of a pure-noise h-day sum, whatever the SNR.
std::pair<double, double> return_loadings(const MarketConfig& c, double snr) {
  if (snr <= 0.0) {
    return {0.0, 1.0};
  }
  const double rho = planted_correlation(snr);
  const double v0 = window_mean_cov(c.signal_persistence, c.lookback, 0);
  const auto h = static_cast<std::ptrdiff_t>(c.horizon);
  double cross = 0.0;  // sum_j corr(s_t, s_{t+j})
  double within = 0.0;  // sum_{j,j'} corr(s_{t+j}, s_{t+j'})
  for (std::ptrdiff_t j = 0; j < h; ++j) {
    cross += window_mean_cov(c.signal_persistence, c.lookback, j) / v0;
    for (std::ptrdiff_t jj = 0; jj < h; ++jj) {
      within += window_mean_cov(c.signal_persistence, c.lookback, j - jj) / v0;
    }
  }
  double noise = 0.0;  // variance of the h-day noise sum
  for (std::ptrdiff_t j = 0; j < h; ++j) {
    for (std::ptrdiff_t jj = 0; jj < h; ++jj) {
      noise += c.sector_share * std::pow(c.sector_persistence, static_cast<double>(std::abs(j - jj)));
    }
  }
  noise += (1.0 - c.sector_share) * static_cast<double>(h);
  const double b2 = (cross * cross / (rho * rho) - within) / noise;
  require(b2 >= 0.0, ErrorKind::config, "requested SNR exceeds what the signal persistence allows");
  const double scale = std::sqrt(noise / (within + b2 * noise));
  return {scale, std::sqrt(b2) * scale};
}

}  // namespace

double planted_correlation(double snr) {
  require(snr >= 0.0 && std::isfinite(snr), ErrorKind::domain, "SNR must be finite and non-negative");
  return std::sqrt(snr / (1.0 + snr));
}

void FactorPanel::validate() const {
  require(sector.size() == stocks, ErrorKind::shape, "panel: one sector id per stock required");
  require(close.size() == stocks * days, ErrorKind::shape, "panel: close array size mismatch");
  require(values.size() == stocks * days * factors, ErrorKind::shape, "panel: factor array size mismatch");
  for (double c : close) {
    require(c > 0.0 && std::isfinite(c), ErrorKind::domain, "panel: prices must be positive and finite");
  }
  for (int s : sector) {
    require(s >= 0, ErrorKind::domain, "panel: negative sector id");
  }
  for (double v : values) {
    require(std::isfinite(v), ErrorKind::domain, "panel: non-finite factor value");
  }
}

void MarketConfig::validate() const {
  require(stocks > 0 && days > 0 && sectors > 0, ErrorKind::config,
          "market needs stocks, days and sectors > 0");
  require(factors > 0 && signal_factors <= factors, ErrorKind::config,
          "market needs signal_factors <= factors");
  require(lookback > 0 && horizon >= 1, ErrorKind::config, "market needs lookback >= 1 and horizon >= 1");
  require(snr >= 0.0 && std::isfinite(snr), ErrorKind::config, "market snr must be non-negative");
  require(signal_persistence >= 0.0 && signal_persistence < 1.0, ErrorKind::config,
          "signal_persistence must be in [0, 1)");
  require(sector_persistence >= 0.0 && sector_persistence < 1.0, ErrorKind::config,
          "sector_persistence must be in [0, 1)");
  require(sector_share >= 0.0 && sector_share <= 1.0, ErrorKind::config, "sector_share must be in [0, 1]");
  require(daily_vol > 0.0 && daily_vol < 0.2, ErrorKind::config, "daily_vol must be in (0, 0.2)");
  require(easy_begin >= 0.0 && easy_end <= 1.0 && easy_begin <= easy_end, ErrorKind::config,
          "easy regime bounds must satisfy 0 <= begin <= end <= 1");
  require(easy_snr_mult > 0.0, ErrorKind::config, "easy_snr_mult must be positive");
  require(weights.empty() || weights.size() == signal_factors, ErrorKind::config,
          "market weights need one entry per signal factor");
}

SyntheticMarket gen_synthetic_market(const MarketConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t n = config.stocks;
  const std::size_t days = config.days;
  const std::size_t total = days + kBurnIn;
  const std::size_t d = config.factors;
  const std::size_t m = config.signal_factors;
  const double phi = config.signal_persistence;
  const double phi_s = config.sector_persistence;

  SyntheticMarket out;
  out.config = config;
  out.seed = seed;

  Rng setup = make_stream(seed, 0);
  std::normal_distribution<double> normal;

  std::vector<double> w = config.weights;
  if (w.empty()) {
    for (std::size_t j = 0; j < m; ++j) {
      w.push_back(normal(setup));
    }
  }
  out.weights.assign(d, 0.0);
  std::copy(w.begin(), w.end(), out.weights.begin());
  const double w_norm = std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
  const double signal_sd = w_norm * std::sqrt(window_mean_cov(phi, config.lookback, 0));

  FactorPanel& panel = out.panel;
  panel.stocks = n;
  panel.days = days;
  panel.factors = d;
  panel.sector.resize(n);
  panel.close.resize(n * days);
  panel.values.resize(n * days * d);

  std::vector<std::size_t> sector_order(n);
  std::iota(sector_order.begin(), sector_order.end(), 0);
  std::shuffle(sector_order.begin(), sector_order.end(), setup);
  for (std::size_t i = 0; i < n; ++i) {
    panel.sector[sector_order[i]] = static_cast<int>(i % config.sectors);
  }
  out.size.resize(n);
  std::vector<double> vol(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.size[i] = std::exp(1.0 * normal(setup));
    // Larger companies are calmer; spread kept narrow so pooled correlation
    // stays close to the per-stock value.
    vol[i] = config.daily_vol * std::clamp(1.0 - 0.2 * std::log(out.size[i]), 0.7, 1.4);
  }

  // Sector AR(1) return shocks with unit stationary variance.
  std::vector<double> sector_ret(config.sectors * total);
  {
    Rng rng = make_stream(seed, 1);
    for (std::size_t s = 0; s < config.sectors; ++s) {
      double prev = normal(rng);
      for (std::size_t t = 0; t < total; ++t) {
        prev = phi_s * prev + std::sqrt(1.0 - phi_s * phi_s) * normal(rng);
        sector_ret[s * total + t] = prev;
      }
    }
  }

  const auto base = return_loadings(config, config.snr);
  const auto easy = return_loadings(config, config.snr * config.easy_snr_mult);
  const auto easy_lo = static_cast<std::size_t>(std::floor(config.easy_begin * static_cast<double>(days)));
  const auto easy_hi = static_cast<std::size_t>(std::floor(config.easy_end * static_cast<double>(days)));

  // Per-day cross-sectional sector momentum for the sector-style factor.
  std::vector<double> daily(n * total);

  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = make_stream(seed, 1000 + i);
    const auto sec = static_cast<std::size_t>(panel.sector[i]);
    std::vector<double> u(m * total);
    for (std::size_t j = 0; j < m; ++j) {
      double prev = normal(rng);
      for (std::size_t t = 0; t < total; ++t) {
        prev = phi * prev + std::sqrt(1.0 - phi * phi) * normal(rng);
        u[j * total + t] = prev;
      }
    }
    // Standardized planted signal from the trailing window ending at t.
    std::vector<double> s(total, 0.0);
    if (signal_sd > 0.0) {
      for (std::size_t t = config.lookback - 1; t < total; ++t) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
          double mean = 0.0;
          for (std::size_t l = 0; l < config.lookback; ++l) mean += u[j * total + t - l];
          acc += w[j] * mean / static_cast<double>(config.lookback);
        }
        s[t] = acc / signal_sd;
      }
    }

    std::vector<double> price(total);
    std::vector<double> ret(total, 0.0);
    std::vector<double> volume(total);
    price[0] = 20.0 * std::exp(0.5 * normal(rng));
    const double base_volume = std::log(1e6 * out.size[i]);
    double vol_noise = 0.0;
    for (std::size_t t = 0; t < total; ++t) {
      if (t > 0) {
        const std::size_t day = t - 1 >= kBurnIn ? t - 1 - kBurnIn : days;
        const auto& [a, b] = (day >= easy_lo && day < easy_hi) ? easy : base;
        const double noise = std::sqrt(config.sector_share) * sector_ret[sec * total + t] +
                             std::sqrt(1.0 - config.sector_share) * normal(rng);
        const double r = std::max(-0.5, vol[i] * (a * s[t - 1] + b * noise));
        ret[t] = r;
        price[t] = price[t - 1] * (1.0 + r);
      }
      vol_noise = 0.7 * vol_noise + 0.3 * normal(rng);
      volume[t] = base_volume + 8.0 * std::abs(ret[t]) + vol_noise;
      daily[i * total + t] = ret[t];
    }

    auto trailing_return = [&](std::size_t t, std::size_t h) { return price[t] / price[t - h] - 1.0; };
    auto trailing_std = [&](std::size_t t, std::size_t h) {
      double mean = 0.0;
      for (std::size_t l = 0; l < h; ++l) mean += ret[t - l];
      mean /= static_cast<double>(h);
      double var = 0.0;
      for (std::size_t l = 0; l < h; ++l) var += (ret[t - l] - mean) * (ret[t - l] - mean);
      return std::sqrt(var / static_cast<double>(h));
    };
    auto trailing_mean = [&](const std::vector<double>& v, std::size_t t, std::size_t h) {
      double acc = 0.0;
      for (std::size_t l = 0; l < h; ++l) acc += v[t - l];
      return acc / static_cast<double>(h);
    };

    for (std::size_t day = 0; day < days; ++day) {
      const std::size_t t = day + kBurnIn;
      panel.close[i * days + day] = price[t];
      double* row = panel.values.data() + (i * days + day) * d;
      for (std::size_t j = 0; j < d; ++j) {
        if (j < m) {
          row[j] = u[j * total + t];
          continue;
        }
        switch (j - m) {
          case 0: row[j] = ret[t]; break;
          case 1: row[j] = trailing_return(t, 5); break;
          case 2: row[j] = trailing_return(t, 10); break;
          case 3: row[j] = trailing_std(t, 5); break;
          case 4: row[j] = trailing_std(t, 20); break;
          case 5: row[j] = price[t] / trailing_mean(price, t, 5) - 1.0; break;
          case 6: row[j] = price[t] / trailing_mean(price, t, 20) - 1.0; break;
          case 7: row[j] = volume[t]; break;
          case 8: row[j] = volume[t] - trailing_mean(volume, t, 20); break;
          case 9: row[j] = std::log(out.size[i]) + 0.05 * normal(rng); break;
          case 10: row[j] = 0.0; break;  // sector momentum, filled below
          default: row[j] = normal(rng); break;
        }
      }
    }
  }

  if (d > m + 10) {
    // Mean 5-day return of the stock's sector, shared by its members.
    std::vector<double> acc(config.sectors * days, 0.0);
    std::vector<double> count(config.sectors, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto sec = static_cast<std::size_t>(panel.sector[i]);
      count[sec] += 1.0;
      for (std::size_t day = 0; day < days; ++day) {
        const std::size_t t = day + kBurnIn;
        double r5 = 0.0;
        for (std::size_t l = 0; l < 5; ++l) r5 += daily[i * total + t - l];
        acc[sec * days + day] += r5;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      const auto sec = static_cast<std::size_t>(panel.sector[i]);
      for (std::size_t day = 0; day < days; ++day) {
        panel.values[(i * days + day) * d + m + 10] = acc[sec * days + day] / count[sec];
      }
    }
  }
  return out;
}

std::optional<double> return_ratio(const FactorPanel& panel, std::size_t stock, std::size_t day,
                                   int horizon) {
  require(horizon >= 1, ErrorKind::domain, "return ratio horizon must be >= 1");
  require(stock < panel.stocks && day < panel.days, ErrorKind::domain, "return ratio index out of range");
  const std::size_t future = day + static_cast<std::size_t>(horizon);
  if (future >= panel.days) {
    return std::nullopt;
  }
  const double now = panel.close_at(stock, day);
  return (panel.close_at(stock, future) - now) / now;
}

Tensor SequenceBatch::sample(std::size_t i) const {
  require(i < size(), ErrorKind::domain, "sample index out of range");
  const std::size_t per = tokens() * factors();
  auto v = x.values().subspan(i * per, per);
  return Tensor({tokens(), factors()}, std::vector<double>(v.begin(), v.end()));
}

SequenceBatch SequenceBatch::subset(std::span<const std::size_t> indices) const {
  const std::size_t per = tokens() * factors();
  std::vector<double> xs;
  xs.reserve(indices.size() * per);
  SequenceBatch out;
  out.stats = stats;
  out.y.reserve(indices.size());
  out.meta.reserve(indices.size());
  for (std::size_t i : indices) {
    require(i < size(), ErrorKind::domain, "subset index out of range");
    auto v = x.values().subspan(i * per, per);
    xs.insert(xs.end(), v.begin(), v.end());
    out.y.push_back(y[i]);
    out.meta.push_back(meta[i]);
  }
  out.x = Tensor({indices.size(), tokens(), factors()}, std::move(xs));
  return out;
}

SequenceBatch SequenceBatch::with_x(Tensor new_x) const {
  require(new_x.shape() == x.shape(), ErrorKind::shape,
          "with_x: shape " + to_string(new_x.shape()) + " does not match " + to_string(x.shape()));
  SequenceBatch out = *this;
  out.x = std::move(new_x);
  return out;
}

void SequenceBatch::validate() const {
  require(x.rank() == 3, ErrorKind::shape, "sequence batch X must be [n, k, d], got " + to_string(x.shape()));
  require(x.dim(0) == y.size() && y.size() == meta.size(), ErrorKind::shape,
          "sequence batch: X has " + std::to_string(x.dim(0)) + " samples, y " +
              std::to_string(y.size()) + ", meta " + std::to_string(meta.size()));
  require(x.all_finite(), ErrorKind::numeric, "sequence batch X contains non-finite values");
}

SequenceBatch concat(const SequenceBatch& a, const SequenceBatch& b) {
  if (a.size() == 0) return b;
  if (b.size() == 0) return a;
  require(a.tokens() == b.tokens() && a.factors() == b.factors(), ErrorKind::shape,
          "concat: window shapes differ");
  std::vector<double> xs = a.x.to_vector();
  xs.insert(xs.end(), b.x.values().begin(), b.x.values().end());
  SequenceBatch out;
  out.x = Tensor({a.size() + b.size(), a.tokens(), a.factors()}, std::move(xs));
  out.y = a.y;
  out.y.insert(out.y.end(), b.y.begin(), b.y.end());
  out.meta = a.meta;
  out.meta.insert(out.meta.end(), b.meta.begin(), b.meta.end());
  out.stats = a.stats;
  return out;
}

std::size_t windows_per_stock(std::size_t days, std::size_t lookback, int horizon) {
  const std::size_t need = lookback - 1 + static_cast<std::size_t>(horizon);
  return days > need ? days - need : 0;
}

SequenceBatch window_sequences(const FactorPanel& panel, const WindowOptions& options) {
  require(options.lookback >= 1, ErrorKind::domain, "window_sequences: lookback must be >= 1");
  require(options.horizon >= 1, ErrorKind::domain, "window_sequences: horizon must be >= 1");
  const std::size_t k = options.lookback;
  const std::size_t d = panel.factors;
  std::vector<std::size_t> stocks = options.stocks;
  if (stocks.empty()) {
    stocks.resize(panel.stocks);
    std::iota(stocks.begin(), stocks.end(), 0);
  }
  const auto lo = static_cast<std::size_t>(std::max<std::int64_t>(options.date_begin, 0));
  const std::size_t hi = options.date_end < 0
                             ? panel.days
                             : std::min(panel.days, static_cast<std::size_t>(options.date_end));

  SequenceBatch out;
  std::vector<double> xs;
  for (std::size_t stock : stocks) {
    require(stock < panel.stocks, ErrorKind::domain, "window_sequences: stock id out of range");
    for (std::size_t t = std::max(lo, k - 1); t < hi; ++t) {
      const auto label = return_ratio(panel, stock, t, options.horizon);
      if (!label) {
        break;
      }
      for (std::size_t l = t + 1 - k; l <= t; ++l) {
        auto row = panel.factor_row(stock, l);
        xs.insert(xs.end(), row.begin(), row.end());
      }
      out.y.push_back(*label);
      out.meta.push_back(SampleMeta{static_cast<std::int64_t>(stock), static_cast<std::int64_t>(t),
                                    panel.sector[stock]});
    }
  }
  out.x = Tensor({out.y.size(), k, d}, std::move(xs));
  return out;
}

RobustStats fit_robust_stats(std::span<const double> rows, std::size_t d) {
  require(d > 0 && rows.size() % d == 0, ErrorKind::shape, "robust stats: rows are not a multiple of d");
  const std::size_t n = rows.size() / d;
  require(n > 0, ErrorKind::domain, "robust stats need at least one row");
  RobustStats stats;
  stats.median.resize(d);
  stats.mad.resize(d);
  stats.constant.assign(d, false);
  std::vector<double> col(n);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < n; ++i) col[i] = rows[i * d + j];
    const double med = median_of(col);
    for (std::size_t i = 0; i < n; ++i) col[i] = std::abs(rows[i * d + j] - med);
    const double mad = median_of(col);
    stats.median[j] = med;
    stats.mad[j] = mad;
    if (!(mad > 0.0)) {
      stats.constant[j] = true;
      stats.warnings.push_back("factor " + std::to_string(j) + " has zero MAD; mapped to 0");
    }
  }
  return stats;
}

RobustStats fit_robust_stats(const FactorPanel& panel, std::int64_t date_begin, std::int64_t date_end,
                             std::span<const std::size_t> stocks) {
  const auto lo = static_cast<std::size_t>(std::max<std::int64_t>(date_begin, 0));
  const std::size_t hi = date_end < 0 ? panel.days : std::min<std::size_t>(panel.days, static_cast<std::size_t>(date_end));
  std::vector<std::size_t> ids(stocks.begin(), stocks.end());
  if (ids.empty()) {
    ids.resize(panel.stocks);
    std::iota(ids.begin(), ids.end(), 0);
  }
  std::vector<double> rows;
  rows.reserve(ids.size() * (hi > lo ? hi - lo : 0) * panel.factors);
  for (std::size_t s : ids) {
    for (std::size_t t = lo; t < hi; ++t) {
      auto row = panel.factor_row(s, t);
      rows.insert(rows.end(), row.begin(), row.end());
    }
  }
  return fit_robust_stats(rows, panel.factors);
}

double robust_zscore_value(double x, const RobustStats& stats, std::size_t factor) {
  if (stats.constant[factor]) {
    return 0.0;
  }
  return (x - stats.median[factor]) / stats.mad[factor];
}

SequenceBatch robust_zscore(const SequenceBatch& batch, const RobustStats& stats) {
  const std::size_t d = batch.factors();
  require(stats.median.size() == d && stats.mad.size() == d && stats.constant.size() == d,
          ErrorKind::shape, "robust_zscore: statistics cover " + std::to_string(stats.median.size()) +
                                " factors, batch has " + std::to_string(d));
  std::vector<double> xs(batch.x.size());
  auto v = batch.x.values();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    xs[i] = robust_zscore_value(v[i], stats, i % d);
  }
  SequenceBatch out = batch.with_x(Tensor(batch.x.shape(), std::move(xs)));
  out.stats = stats;
  return out;
}

FilteredBatch drop_extreme_labels(const SequenceBatch& batch, const LabelFilter& filter) {
  require(!(filter.low > filter.high), ErrorKind::domain, "drop_extreme_labels: bounds are inverted");
  double lo = filter.low;
  double hi = filter.high;
  if (filter.mode == LabelFilter::Mode::percentile) {
    require(batch.size() > 0, ErrorKind::domain, "percentile filter on an empty batch");
    if (std::isfinite(lo)) {
      require(lo >= 0.0 && lo <= 100.0, ErrorKind::domain, "percentile bounds must be in [0, 100]");
      lo = quantile(batch.y, lo / 100.0);
    }
    if (std::isfinite(hi)) {
      require(hi >= 0.0 && hi <= 100.0, ErrorKind::domain, "percentile bounds must be in [0, 100]");
      hi = quantile(batch.y, hi / 100.0);
    }
  }
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch.y[i] >= lo && batch.y[i] <= hi) keep.push_back(i);
  }
  return FilteredBatch{batch.subset(keep), batch.size() - keep.size()};
}

SequenceBatch noise_augment_baseline(const SequenceBatch& batch, double sigma, std::uint64_t seed) {
  require(sigma >= 0.0 && std::isfinite(sigma), ErrorKind::domain, "noise sigma must be non-negative");
  if (sigma == 0.0) {
    return batch;
  }
  Rng rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> xs = batch.x.to_vector();
  for (double& v : xs) v += sigma * normal(rng);
  return batch.with_x(Tensor(batch.x.shape(), std::move(xs)));
}

SequenceBatch inject_label_noise(const SequenceBatch& batch, double fraction, std::uint64_t seed) {
  require(fraction >= 0.0 && fraction <= 1.0, ErrorKind::domain, "label noise fraction must be in [0, 1]");
  Rng rng(seed);
  std::vector<std::size_t> idx(batch.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(batch.size())));
  std::vector<std::size_t> chosen(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count));
  std::vector<double> labels;
  for (std::size_t i : chosen) labels.push_back(batch.y[i]);
  std::shuffle(labels.begin(), labels.end(), rng);
  SequenceBatch out = batch;
  for (std::size_t j = 0; j < chosen.size(); ++j) out.y[chosen[j]] = labels[j];
  return out;
}

DateSplit chronological_split(std::size_t days, double train_frac, double valid_frac) {
  require(train_frac > 0.0 && valid_frac >= 0.0 && train_frac + valid_frac < 1.0, ErrorKind::config,
          "split fractions must be positive and sum below 1");
  DateSplit s;
  s.days = static_cast<std::int64_t>(days);
  s.train_end = static_cast<std::int64_t>(std::floor(train_frac * static_cast<double>(days)));
  s.valid_end = static_cast<std::int64_t>(std::floor((train_frac + valid_frac) * static_cast<double>(days)));
  return s;
}

PreparedData prepare_datasets(const SyntheticMarket& market, std::size_t target_stocks) {
  const FactorPanel& panel = market.panel;
  const MarketConfig& c = market.config;
  require(target_stocks > 0 && target_stocks <= panel.stocks, ErrorKind::config,
          "target subset size must be in [1, stocks]");
  PreparedData out;
  out.split = chronological_split(panel.days);

  std::vector<std::size_t> order(panel.stocks);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return market.size[a] > market.size[b]; });
  out.target_stocks.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(target_stocks));
  std::sort(out.target_stocks.begin(), out.target_stocks.end());

  out.stats = fit_robust_stats(panel, 0, out.split.train_end);

  auto make = [&](std::int64_t begin, std::int64_t end, std::vector<std::size_t> stocks) {
    WindowOptions w;
    w.lookback = c.lookback;
    w.horizon = c.horizon;
    w.date_begin = begin;
    // Purge windows whose label horizon reaches into the next split.
    w.date_end = std::max<std::int64_t>(begin, end - c.horizon);
    w.stocks = std::move(stocks);
    return robust_zscore(window_sequences(panel, w), out.stats);
  };
  out.source_train = make(0, out.split.train_end, {});
  out.target_train = make(0, out.split.train_end, out.target_stocks);
  out.target_valid = make(out.split.train_end, out.split.valid_end, out.target_stocks);
  WindowOptions test;
  test.lookback = c.lookback;
  test.horizon = c.horizon;
  test.date_begin = out.split.valid_end;
  test.stocks = out.target_stocks;
  out.target_test = robust_zscore(window_sequences(panel, test), out.stats);
  return out;
}

std::vector<double> normalized_weights(const std::vector<double>& weights, const RobustStats& stats) {
  require(weights.size() == stats.mad.size(), ErrorKind::shape, "weights and stats cover different factors");
  std::vector<double> out(weights.size(), 0.0);
  for (std::size_t j = 0; j < weights.size(); ++j) {
    if (!stats.constant[j]) out[j] = weights[j] * stats.mad[j];
  }
  return out;
}

double planted_signal(const SequenceBatch& batch, std::size_t i, std::span<const double> weights) {
  const std::size_t k = batch.tokens();
  const std::size_t d = batch.factors();
  require(weights.size() == d, ErrorKind::shape, "planted_signal: weight length differs from d");
  const double* x = batch.x.data() + i * k * d;
  double acc = 0.0;
  for (std::size_t t = 0; t < k; ++t) {
    for (std::size_t j = 0; j < d; ++j) acc += weights[j] * x[t * d + j];
  }
  return acc / static_cast<double>(k);
}

}  // namespace factordiff
