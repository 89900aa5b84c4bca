#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "factordiff/data.hpp"
#include "factordiff/error.hpp"
#include "factordiff/eval.hpp"
#include "factordiff/io.hpp"
#include "factordiff/schedule.hpp"

namespace py = pybind11;
using namespace factordiff;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>;

template <class T>
std::vector<T> to_vector(const py::array_t<T, py::array::c_style | py::array::forcecast>& a) {
  return std::vector<T>(a.data(), a.data() + a.size());
}

template <class T>
py::array_t<T> to_array(const std::vector<T>& v, std::vector<py::ssize_t> shape = {}) {
  if (shape.empty()) shape = {static_cast<py::ssize_t>(v.size())};
  py::array_t<T> out(shape);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Tensor rows(const DoubleArray& a) {
  if (a.ndim() != 2) throw Error(ErrorKind::shape, "expected a 2-D array of samples by features");
  return Tensor({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))}, to_vector(a));
}

void check_lengths(py::ssize_t n, std::initializer_list<py::ssize_t> others) {
  for (py::ssize_t m : others) {
    if (m != n) throw Error(ErrorKind::shape, "array lengths differ: " + std::to_string(n) + " vs " + std::to_string(m));
  }
}

py::dict dataset_dict(const SequenceBatch& b) {
  std::vector<std::int64_t> stock, date, sector;
  for (const auto& m : b.meta) {
    stock.push_back(m.stock);
    date.push_back(m.date);
    sector.push_back(m.sector);
  }
  py::dict d;
  d["x"] = to_array(b.x.to_vector(), {static_cast<py::ssize_t>(b.size()), static_cast<py::ssize_t>(b.tokens()),
                                      static_cast<py::ssize_t>(b.factors())});
  d["y"] = to_array(b.y);
  d["stock"] = to_array(stock);
  d["date"] = to_array(date);
  d["sector"] = to_array(sector);
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Diffusion augmentation toolkit for stock factor sequences";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      const std::string msg = std::string(to_string(e.kind())) + ": " + e.what();
      switch (e.kind()) {
        case ErrorKind::io:
          PyErr_SetString(PyExc_OSError, msg.c_str());
          break;
        case ErrorKind::numeric:
          PyErr_SetString(PyExc_ArithmeticError, msg.c_str());
          break;
        default:
          PyErr_SetString(PyExc_ValueError, msg.c_str());
      }
    }
  });

  m.def("information_coefficient",
        [](const DoubleArray& pred, const DoubleArray& label, const IntArray& day) {
          check_lengths(pred.size(), {label.size(), day.size()});
          return information_coefficient(to_vector(pred), to_vector(label), to_vector(day));
        },
        py::arg("pred"), py::arg("label"), py::arg("day"), "Mean daily Pearson correlation.");
  m.def("rank_ic",
        [](const DoubleArray& pred, const DoubleArray& label, const IntArray& day) {
          check_lengths(pred.size(), {label.size(), day.size()});
          return rank_ic(to_vector(pred), to_vector(label), to_vector(day));
        },
        py::arg("pred"), py::arg("label"), py::arg("day"), "Mean daily Spearman correlation.");
  m.def("weighted_ic",
        [](const DoubleArray& pred, const DoubleArray& label, const IntArray& day, std::optional<double> half_life) {
          check_lengths(pred.size(), {label.size(), day.size()});
          return weighted_ic(to_vector(pred), to_vector(label), to_vector(day), half_life);
        },
        py::arg("pred"), py::arg("label"), py::arg("day"), py::arg("half_life") = py::none(),
        "Mean daily correlation with weights halving every half_life ranks.");
  m.def("frechet_distance", [](const DoubleArray& a, const DoubleArray& b) { return frechet_distance(rows(a), rows(b)); },
        py::arg("a"), py::arg("b"), "Frechet distance between Gaussian fits of two [n, dim] sample sets.");

  m.def("backtest",
        [](const DoubleArray& pred, const DoubleArray& next_return, const IntArray& day, const IntArray& stock,
           std::size_t top_k, std::optional<double> stop_loss) {
          check_lengths(pred.size(), {next_return.size(), day.size(), stock.size()});
          BacktestOptions options;
          options.top_k = top_k;
          options.stop_loss = stop_loss;
          const BacktestResult r =
              backtest_topk_dropk(to_vector(pred), to_vector(next_return), to_vector(day), to_vector(stock), options);
          py::dict d;
          d["annualized_rr"] = r.annualized_rr;
          d["information_ratio"] = r.information_ratio;
          d["ir_degenerate"] = r.ir_degenerate;
          d["days"] = to_array(r.days);
          d["daily"] = to_array(r.daily);
          d["benchmark"] = to_array(r.benchmark);
          return d;
        },
        py::arg("pred"), py::arg("next_return"), py::arg("day"), py::arg("stock"), py::arg("top_k") = 30,
        py::arg("stop_loss") = py::none(), "Daily rebalanced equal-weight top-K backtest.");

  m.def("linear_schedule",
        [](int steps, double beta_start, double beta_end) {
          const Schedule s = build_schedule(steps, beta_start, beta_end);
          py::dict d;
          d["betas"] = to_array(s.betas());
          std::vector<double> alpha_bars{1.0};
          alpha_bars.insert(alpha_bars.end(), s.alpha_bars().begin(), s.alpha_bars().end());
          d["alpha_bars"] = to_array(alpha_bars);
          return d;
        },
        py::arg("steps") = 1000, py::arg("beta_start") = 1e-4, py::arg("beta_end") = 0.02,
        "Linear noise schedule; betas[t - 1] and alpha_bars[t] belong to step t.");

  m.def("load_dataset", [](const std::string& path) { return dataset_dict(load_dataset(path)); }, py::arg("path"),
        "Reads an .fdsb file into numpy arrays.");
  m.def("save_dataset",
        [](const std::string& path, const DoubleArray& x, const DoubleArray& y, const IntArray& stock,
           const IntArray& date, const IntArray& sector) {
          if (x.ndim() != 3) throw Error(ErrorKind::shape, "x must be [samples, tokens, factors]");
          check_lengths(x.shape(0), {y.size(), stock.size(), date.size(), sector.size()});
          const auto n = static_cast<std::size_t>(x.shape(0));
          SequenceBatch b;
          b.x = Tensor({n, static_cast<std::size_t>(x.shape(1)), static_cast<std::size_t>(x.shape(2))}, to_vector(x));
          b.y = to_vector(y);
          for (std::size_t i = 0; i < n; ++i) {
            b.meta.push_back({stock.data()[i], date.data()[i], static_cast<std::int32_t>(sector.data()[i])});
          }
          save_dataset(b, path);
        },
        py::arg("path"), py::arg("x"), py::arg("y"), py::arg("stock"), py::arg("date"), py::arg("sector"),
        "Writes numpy arrays as an .fdsb file.");

  m.def("synthetic_market",
        [](std::size_t stocks, std::size_t days, std::size_t factors, std::size_t signal_factors, std::uint64_t seed) {
          MarketConfig c;
          c.stocks = stocks;
          c.days = days;
          c.factors = factors;
          c.signal_factors = signal_factors;
          const SyntheticMarket mk = gen_synthetic_market(c, seed);
          const auto s = static_cast<py::ssize_t>(stocks), t = static_cast<py::ssize_t>(days);
          py::dict d;
          d["sector"] = to_array(mk.panel.sector);
          d["close"] = to_array(mk.panel.close, {s, t});
          d["factors"] = to_array(mk.panel.values, {s, t, static_cast<py::ssize_t>(factors)});
          d["weights"] = to_array(mk.weights);
          return d;
        },
        py::arg("stocks") = 100, py::arg("days") = 300, py::arg("factors") = 16, py::arg("signal_factors") = 4,
        py::arg("seed") = 0, "Synthetic factor panel with planted linear signal.");

  m.def("run_cli",
        [](const std::vector<std::string>& args) {
          std::ostringstream out, err;
          int code;
          {
            py::gil_scoped_release release;
            code = cli::run(args, out, err);
          }
          return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs a factordiff subcommand; returns (exit code, stdout, stderr).");
}
