#include "factordiff/eval.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include <json.hpp>

#include "factordiff/error.hpp"

namespace factordiff {

namespace {

// Sample indices grouped by day, days ascending.
std::map<std::int64_t, std::vector<std::size_t>> group_by_day(std::span<const std::int64_t> day) {
  std::map<std::int64_t, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < day.size(); ++i) {
    out[day[i]].push_back(i);
  }
  return out;
}

void check_aligned(std::size_t pred, std::size_t label, std::size_t day, const char* what) {
  require(pred == label && label == day, ErrorKind::shape,
          std::string(what) + ": predictions, labels and days must align (" + std::to_string(pred) +
              ", " + std::to_string(label) + ", " + std::to_string(day) + ")");
}

bool has_spread(const std::vector<double>& v) {
  return std::any_of(v.begin(), v.end(), [&](double x) { return x != v.front(); });
}

template <class DayCorrelation>
double mean_daily(std::span<const double> pred, std::span<const double> label,
                  std::span<const std::int64_t> day, const char* what, DayCorrelation corr) {
  check_aligned(pred.size(), label.size(), day.size(), what);
  double acc = 0.0;
  std::size_t used = 0;
  for (const auto& [d, idx] : group_by_day(day)) {
    if (idx.size() < 3) {
      continue;
    }
    std::vector<double> p, l;
    p.reserve(idx.size());
    l.reserve(idx.size());
    for (std::size_t i : idx) {
      p.push_back(pred[i]);
      l.push_back(label[i]);
    }
    if (!has_spread(p) || !has_spread(l)) {
      continue;
    }
    acc += corr(p, l);
    ++used;
  }
  require(used > 0, ErrorKind::domain, std::string(what) + ": no day has three or more stocks with spread");
  return acc / static_cast<double>(used);
}

Eigen::MatrixXd to_matrix(const Tensor& t) {
  require(t.rank() == 2, ErrorKind::shape, "frechet_distance expects [n, dim] rows, got " + to_string(t.shape()));
  Eigen::MatrixXd m(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    for (std::size_t j = 0; j < t.dim(1); ++j) m(i, j) = t[i * t.dim(1) + j];
  }
  return m;
}

Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t m = i; m <= j; ++m) ranks[order[m]] = r;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y, std::span<const double> weights) {
  require(x.size() == y.size() && (weights.empty() || weights.size() == x.size()), ErrorKind::shape,
          "pearson: inputs must have equal length");
  require(x.size() >= 2, ErrorKind::domain, "pearson needs at least two points");
  auto w = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };
  double sw = 0.0, mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sw += w(i);
    mx += w(i) * x[i];
    my += w(i) * y[i];
  }
  mx /= sw;
  my /= sw;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += w(i) * dx * dy;
    sxx += w(i) * dx * dx;
    syy += w(i) * dy * dy;
  }
  require(sxx > 0.0 && syy > 0.0, ErrorKind::domain, "pearson: a side has zero variance");
  return sxy / std::sqrt(sxx * syy);
}

double information_coefficient(std::span<const double> pred, std::span<const double> label,
                               std::span<const std::int64_t> day) {
  return mean_daily(pred, label, day, "information_coefficient",
                    [](const std::vector<double>& p, const std::vector<double>& l) { return pearson(p, l); });
}

double rank_ic(std::span<const double> pred, std::span<const double> label, std::span<const std::int64_t> day) {
  return mean_daily(pred, label, day, "rank_ic", [](const std::vector<double>& p, const std::vector<double>& l) {
    return pearson(average_ranks(p), average_ranks(l));
  });
}

double weighted_ic(std::span<const double> pred, std::span<const double> label,
                   std::span<const std::int64_t> day, std::optional<double> half_life) {
  require(!half_life || *half_life > 0.0, ErrorKind::domain, "weighted_ic: half-life must be positive");
  return mean_daily(pred, label, day, "weighted_ic", [&](const std::vector<double>& p, const std::vector<double>& l) {
    const double h = half_life ? *half_life : static_cast<double>(p.size()) / 10.0;
    std::vector<std::size_t> order(p.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
    std::vector<double> w(p.size());
    for (std::size_t r = 0; r < order.size(); ++r) {
      w[order[r]] = std::pow(0.5, static_cast<double>(r) / h);
    }
    return pearson(p, l, w);
  });
}

double frechet_distance(const Tensor& a, const Tensor& b) {
  const Eigen::MatrixXd A = to_matrix(a);
  const Eigen::MatrixXd B = to_matrix(b);
  require(A.cols() == B.cols(), ErrorKind::shape, "frechet_distance: row widths differ");
  const auto dim = A.cols();
  require(A.rows() > dim && B.rows() > dim, ErrorKind::domain,
          "frechet_distance needs more samples than dimensions (" + std::to_string(A.rows()) + ", " +
              std::to_string(B.rows()) + " rows for dim " + std::to_string(dim) + ")");
  auto fit = [dim](const Eigen::MatrixXd& X, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
    mu = X.colwise().mean().transpose();
    const Eigen::MatrixXd c = X.rowwise() - mu.transpose();
    cov = (c.transpose() * c) / static_cast<double>(X.rows() - 1);
    cov += 1e-6 * Eigen::MatrixXd::Identity(dim, dim);
  };
  Eigen::VectorXd mu_a, mu_b;
  Eigen::MatrixXd cov_a, cov_b;
  fit(A, mu_a, cov_a);
  fit(B, mu_b, cov_b);
  const Eigen::MatrixXd ra = sym_sqrt(cov_a);
  const Eigen::MatrixXd inner = ra * cov_b * ra;
  const Eigen::MatrixXd mid = sym_sqrt(0.5 * (inner + inner.transpose()));
  const double value = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * mid.trace();
  return std::max(0.0, value);
}

double frechet_distance(const SequenceBatch& a, const SequenceBatch& b) {
  const std::size_t w = a.tokens() * a.factors();
  return frechet_distance(a.x.reshape({a.size(), w}), b.x.reshape({b.size(), b.tokens() * b.factors()}));
}

BacktestResult backtest_topk_dropk(std::span<const double> pred, std::span<const double> next_return,
                                   std::span<const std::int64_t> day, std::span<const std::int64_t> stock,
                                   const BacktestOptions& options) {
  check_aligned(pred.size(), next_return.size(), day.size(), "backtest");
  require(stock.size() == day.size(), ErrorKind::shape, "backtest: stock ids must align with days");
  require(options.top_k > 0, ErrorKind::domain, "backtest: K must be positive");

  BacktestResult out;
  std::map<std::int64_t, double> growth;  // held stock -> price ratio since entry
  std::set<std::int64_t> stopped;         // stopped out until it leaves the top K
  for (const auto& [d, idx] : group_by_day(day)) {
    require(options.top_k <= idx.size(), ErrorKind::domain,
            "backtest: K=" + std::to_string(options.top_k) + " exceeds the " + std::to_string(idx.size()) +
                " stocks on day " + std::to_string(d));
    std::vector<std::size_t> order = idx;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (pred[a] != pred[b]) return pred[a] > pred[b];
      return stock[a] < stock[b];
    });

    // A stopped stock stays banned while it ranks in the top K; its slot
    // goes to the next-ranked stock.
    std::set<std::int64_t> next_stopped;
    for (std::size_t r = 0; r < options.top_k; ++r) {
      if (stopped.count(stock[order[r]]) != 0) next_stopped.insert(stock[order[r]]);
    }
    std::map<std::int64_t, double> next_growth;
    double sum = 0.0;
    std::size_t held = 0;
    for (std::size_t r = 0; r < order.size() && held < options.top_k; ++r) {
      const std::size_t i = order[r];
      const std::int64_t s = stock[i];
      if (next_stopped.count(s) != 0) continue;
      const double g = (growth.count(s) != 0 ? growth[s] : 1.0) * (1.0 + next_return[i]);
      sum += next_return[i];
      ++held;
      if (options.stop_loss && g < *options.stop_loss) {
        next_stopped.insert(s);
      } else {
        next_growth[s] = g;
      }
    }
    growth = std::move(next_growth);
    stopped = std::move(next_stopped);

    double bench = 0.0;
    for (std::size_t i : idx) bench += next_return[i];
    out.days.push_back(d);
    out.daily.push_back(held > 0 ? sum / static_cast<double>(held) : 0.0);
    out.benchmark.push_back(bench / static_cast<double>(idx.size()));
  }
  require(!out.days.empty(), ErrorKind::domain, "backtest: no days to trade");

  const double n = static_cast<double>(out.daily.size());
  out.annualized_rr = std::accumulate(out.daily.begin(), out.daily.end(), 0.0) / n * options.annualization;
  std::vector<double> excess(out.daily.size());
  for (std::size_t i = 0; i < excess.size(); ++i) excess[i] = out.daily[i] - out.benchmark[i];
  const double mean = std::accumulate(excess.begin(), excess.end(), 0.0) / n;
  double var = 0.0;
  for (double e : excess) var += (e - mean) * (e - mean);
  const double sd = excess.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
  // Tolerate roundoff when the portfolio tracks the benchmark.
  double scale = 1e-300;
  for (std::size_t i = 0; i < excess.size(); ++i) {
    scale = std::max({scale, std::abs(out.daily[i]), std::abs(out.benchmark[i])});
  }
  if (excess.size() < 2 || sd <= 1e-12 * scale || sd == 0.0) {
    out.information_ratio = 0.0;
    out.ir_degenerate = true;
  } else {
    out.information_ratio = mean / sd * std::sqrt(options.annualization);
  }
  return out;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["ic"] = ic;
  j["rank_ic"] = rank_ic;
  j["weighted_ic"] = weighted_ic;
  j["fid"] = fid ? nlohmann::ordered_json(*fid) : nlohmann::ordered_json(nullptr);
  j["annualized_rr"] = annualized_rr;
  j["information_ratio"] = information_ratio;
  j["ir_degenerate"] = ir_degenerate;
  j["n_days"] = n_days;
  j["n_samples"] = n_samples;
  j["config"] = nlohmann::ordered_json::parse(config);
  return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    EvalReport r;
    r.ic = j.at("ic").get<double>();
    r.rank_ic = j.at("rank_ic").get<double>();
    r.weighted_ic = j.at("weighted_ic").get<double>();
    if (!j.at("fid").is_null()) r.fid = j.at("fid").get<double>();
    r.annualized_rr = j.at("annualized_rr").get<double>();
    r.information_ratio = j.at("information_ratio").get<double>();
    r.ir_degenerate = j.at("ir_degenerate").get<bool>();
    r.n_days = j.at("n_days").get<std::size_t>();
    r.n_samples = j.at("n_samples").get<std::size_t>();
    r.config = j.at("config").dump();
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("eval report: ") + e.what());
  }
}

BacktestResult backtest_predictions(std::span<const double> pred, const SequenceBatch& batch,
                                   const FactorPanel& panel, const BacktestOptions& options) {
  require(pred.size() == batch.size(), ErrorKind::shape, "backtest: one prediction per sample required");
  std::vector<std::int64_t> days, stocks;
  std::vector<double> next;
  std::vector<double> p;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto s = static_cast<std::size_t>(batch.meta[i].stock);
    const auto t = static_cast<std::size_t>(batch.meta[i].date);
    require(s < panel.stocks && t < panel.days, ErrorKind::domain, "backtest: sample lies outside the panel");
    if (t + 1 >= panel.days) continue;
    days.push_back(batch.meta[i].date);
    stocks.push_back(batch.meta[i].stock);
    next.push_back(panel.close_at(s, t + 1) / panel.close_at(s, t) - 1.0);
    p.push_back(pred[i]);
  }
  return backtest_topk_dropk(p, next, days, stocks, options);
}

EvalReport evaluate_predictions(std::span<const double> pred, const SequenceBatch& batch,
                                const FactorPanel& panel, const BacktestOptions& options) {
  require(pred.size() == batch.size(), ErrorKind::shape, "evaluate: one prediction per sample required");
  std::vector<std::int64_t> all_days;
  for (const auto& m : batch.meta) all_days.push_back(m.date);

  EvalReport r;
  r.ic = information_coefficient(pred, batch.y, all_days);
  r.rank_ic = rank_ic(pred, batch.y, all_days);
  r.weighted_ic = weighted_ic(pred, batch.y, all_days);
  const BacktestResult bt = backtest_predictions(pred, batch, panel, options);
  r.annualized_rr = bt.annualized_rr;
  r.information_ratio = bt.information_ratio;
  r.ir_degenerate = bt.ir_degenerate;
  r.n_days = bt.days.size();
  r.n_samples = batch.size();
  return r;
}

}  // namespace factordiff
