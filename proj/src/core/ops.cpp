#include "factordiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "factordiff/error.hpp"

namespace factordiff::ops {

namespace {

Graph& graph_of(Var a) {
  require(a.valid(), ErrorKind::domain, "op applied to an unbound Var");
  return *a.graph();
}

[[noreturn]] void shape_error(Var a, const std::string& op, const std::string& message) {
  fail(ErrorKind::shape, op + " at node #" + std::to_string(a.graph()->size()) + " (input " +
                             a.graph()->label(a.id()) + "): " + message);
}

// Index maps from output elements to the elements of each broadcast operand.
struct BroadcastPlan {
  Shape out;
  bool same = false;
  std::vector<std::size_t> ia;
  std::vector<std::size_t> ib;
};

std::vector<std::size_t> broadcast_index(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t offset = rank - in.size();
  std::vector<std::size_t> strides(rank, 0);
  std::size_t stride = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    strides[offset + i] = in[i] == 1 ? 0 : stride;
    stride *= in[i];
  }
  const std::size_t n = element_count(out);
  std::vector<std::size_t> index(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t pos = 0;
  for (std::size_t e = 0; e < n; ++e) {
    index[e] = pos;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      pos += strides[d];
      if (counter[d] < out[d]) {
        break;
      }
      pos -= strides[d] * counter[d];
      counter[d] = 0;
    }
  }
  return index;
}

BroadcastPlan plan_broadcast(Var a, Var b, const char* op) {
  BroadcastPlan plan;
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa == sb) {
    plan.out = sa;
    plan.same = true;
    return plan;
  }
  try {
    plan.out = broadcast_shape(sa, sb);
  } catch (const Error& e) {
    shape_error(a, op, e.what());
  }
  plan.ia = broadcast_index(sa, plan.out);
  plan.ib = broadcast_index(sb, plan.out);
  return plan;
}

template <class Forward, class GradA, class GradB>
Var binary(Var a, Var b, const char* op, Forward f, GradA ga, GradB gb) {
  Graph& g = graph_of(a);
  BroadcastPlan plan = plan_broadcast(a, b, op);
  const Tensor av = a.value();
  const Tensor bv = b.value();
  const std::size_t n = element_count(plan.out);
  Shape shape = plan.out;
  std::vector<double> out(n);
  if (plan.same) {
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = f(av[i], bv[i]);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = f(av[plan.ia[i]], bv[plan.ib[i]]);
    }
  }
  auto backward = [av, bv, plan = std::move(plan), ga, gb](std::span<const double> go,
                                                           std::span<std::vector<double>*> in) {
    const std::size_t n = go.size();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t ja = plan.same ? i : plan.ia[i];
      const std::size_t jb = plan.same ? i : plan.ib[i];
      if (in[0] != nullptr) {
        (*in[0])[ja] += ga(go[i], av[ja], bv[jb]);
      }
      if (in[1] != nullptr) {
        (*in[1])[jb] += gb(go[i], av[ja], bv[jb]);
      }
    }
  };
  return g.record(op, Tensor(std::move(shape), std::move(out)), {a, b}, std::move(backward));
}

template <class Forward, class Derivative>
Var unary(Var a, const char* op, Forward f, Derivative df) {
  Graph& g = graph_of(a);
  const Tensor av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = f(av[i]);
  }
  auto backward = [av, df](std::span<const double> go, std::span<std::vector<double>*> in) {
    auto& gi = *in[0];
    for (std::size_t i = 0; i < go.size(); ++i) {
      gi[i] += go[i] * df(av[i]);
    }
  };
  return g.record(op, Tensor(av.shape(), std::move(out)), {a}, std::move(backward));
}

// C[m,p] += A[m,n] * B[n,p]. Each output element accumulates over n in
// ascending order regardless of m, so results are row-independent.
void gemm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t n,
             std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    double* c = C + i * p;
    const double* a = A + i * n;
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = a[k];
      const double* b = B + k * p;
      for (std::size_t j = 0; j < p; ++j) {
        c[j] += aik * b[j];
      }
    }
  }
}

// dA[m,n] += dC[m,p] * B[n,p]^T
void gemm_nt(const double* dC, const double* B, double* dA, std::size_t m, std::size_t n,
             std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* g = dC + i * p;
    for (std::size_t k = 0; k < n; ++k) {
      const double* b = B + k * p;
      double acc = 0.0;
      for (std::size_t j = 0; j < p; ++j) {
        acc += g[j] * b[j];
      }
      dA[i * n + k] += acc;
    }
  }
}

// dB[n,p] += A[m,n]^T * dC[m,p]
void gemm_tn(const double* A, const double* dC, double* dB, std::size_t m, std::size_t n,
             std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* a = A + i * n;
    const double* g = dC + i * p;
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = a[k];
      double* b = dB + k * p;
      for (std::size_t j = 0; j < p; ++j) {
        b[j] += aik * g[j];
      }
    }
  }
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      fail(ErrorKind::shape,
           "cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

Var add(Var a, Var b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

Var sub(Var a, Var b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

Var mul(Var a, Var b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Var scale(Var a, double s) {
  return unary(
      a, "scale", [s](double x) { return s * x; }, [s](double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary(
      a, "add_scalar", [s](double x) { return x + s; }, [](double) { return 1.0; });
}

Var square(Var a) {
  return unary(
      a, "square", [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var relu(Var a) {
  return unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var silu(Var a) {
  return unary(
      a, "silu", [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Var gelu(Var a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  return unary(
      a, "gelu",
      [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x))); },
      [](double x) {
        const double t = std::tanh(c * (x + k * x * x * x));
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * k * x * x);
      });
}

Var tanh(Var a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double x) {
        const double t = std::tanh(x);
        return 1.0 - t * t;
      });
}

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.empty() || sb.size() != 2 || sa.back() != sb[0]) {
    shape_error(a, "matmul", "cannot multiply " + to_string(sa) + " by " + to_string(sb));
  }
  const std::size_t n = sb[0];
  const std::size_t p = sb[1];
  const std::size_t m = n == 0 ? 0 : a.value().size() / n;
  const Tensor av = a.value();
  const Tensor bv = b.value();
  std::vector<double> out(m * p, 0.0);
  gemm_nn(av.data(), bv.data(), out.data(), m, n, p);
  Shape shape = sa;
  shape.back() = p;
  auto backward = [av, bv, m, n, p](std::span<const double> go,
                                    std::span<std::vector<double>*> in) {
    if (in[0] != nullptr) {
      gemm_nt(go.data(), bv.data(), in[0]->data(), m, n, p);
    }
    if (in[1] != nullptr) {
      gemm_tn(av.data(), go.data(), in[1]->data(), m, n, p);
    }
  };
  return g.record("matmul", Tensor(std::move(shape), std::move(out)), {a, b}, std::move(backward));
}

Var bmm(Var a, Var b) {
  Graph& g = graph_of(a);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[1]) {
    shape_error(a, "bmm", "cannot batch-multiply " + to_string(sa) + " by " + to_string(sb));
  }
  const std::size_t batch = sa[0];
  const std::size_t m = sa[1];
  const std::size_t n = sa[2];
  const std::size_t p = sb[2];
  const Tensor av = a.value();
  const Tensor bv = b.value();
  std::vector<double> out(batch * m * p, 0.0);
  for (std::size_t i = 0; i < batch; ++i) {
    gemm_nn(av.data() + i * m * n, bv.data() + i * n * p, out.data() + i * m * p, m, n, p);
  }
  auto backward = [av, bv, batch, m, n, p](std::span<const double> go,
                                           std::span<std::vector<double>*> in) {
    for (std::size_t i = 0; i < batch; ++i) {
      const double* gi = go.data() + i * m * p;
      if (in[0] != nullptr) {
        gemm_nt(gi, bv.data() + i * n * p, in[0]->data() + i * m * n, m, n, p);
      }
      if (in[1] != nullptr) {
        gemm_tn(av.data() + i * m * n, gi, in[1]->data() + i * n * p, m, n, p);
      }
    }
  };
  return g.record("bmm", Tensor({batch, m, p}, std::move(out)), {a, b}, std::move(backward));
}

Var linear(Var x, Var w, Var bias) { return add(matmul(x, w), bias); }

Var reshape(Var a, Shape shape) {
  Graph& g = graph_of(a);
  if (element_count(shape) != a.value().size()) {
    shape_error(a, "reshape", "cannot reshape " + to_string(a.shape()) + " to " + to_string(shape));
  }
  auto backward = [](std::span<const double> go, std::span<std::vector<double>*> in) {
    auto& gi = *in[0];
    for (std::size_t i = 0; i < go.size(); ++i) {
      gi[i] += go[i];
    }
  };
  return g.record("reshape", a.value().reshape(std::move(shape)), {a}, std::move(backward));
}

Var permute(Var a, std::vector<std::size_t> perm) {
  Graph& g = graph_of(a);
  const Shape& sa = a.shape();
  const std::size_t rank = sa.size();
  std::vector<std::size_t> sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> expected(rank);
  std::iota(expected.begin(), expected.end(), 0);
  if (sorted != expected) {
    shape_error(a, "permute", "invalid permutation for shape " + to_string(sa));
  }
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t d = rank; d-- > 1;) {
    in_strides[d - 1] = in_strides[d] * sa[d];
  }
  Shape out_shape(rank);
  std::vector<std::size_t> strides(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    out_shape[d] = sa[perm[d]];
    strides[d] = in_strides[perm[d]];
  }
  const std::size_t n = a.value().size();
  std::vector<std::size_t> source(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t pos = 0;
  for (std::size_t e = 0; e < n; ++e) {
    source[e] = pos;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      pos += strides[d];
      if (counter[d] < out_shape[d]) {
        break;
      }
      pos -= strides[d] * counter[d];
      counter[d] = 0;
    }
  }
  const Tensor av = a.value();
  std::vector<double> out(n);
  for (std::size_t e = 0; e < n; ++e) {
    out[e] = av[source[e]];
  }
  auto backward = [source = std::move(source)](std::span<const double> go,
                                               std::span<std::vector<double>*> in) {
    auto& gi = *in[0];
    for (std::size_t e = 0; e < go.size(); ++e) {
      gi[source[e]] += go[e];
    }
  };
  return g.record("permute", Tensor(std::move(out_shape), std::move(out)), {a},
                  std::move(backward));
}

Var layer_norm(Var a, double eps) {
  Graph& g = graph_of(a);
  const Shape& sa = a.shape();
  if (sa.empty() || sa.back() == 0) {
    shape_error(a, "layer_norm", "needs a non-empty last axis, got " + to_string(sa));
  }
  const std::size_t width = sa.back();
  const std::size_t rows = a.value().size() / width;
  const Tensor av = a.value();
  std::vector<double> out(av.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * width;
    double mu = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      mu += x[j];
    }
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      var += (x[j] - mu) * (x[j] - mu);
    }
    var /= static_cast<double>(width);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < width; ++j) {
      out[r * width + j] = (x[j] - mu) * is;
    }
  }
  Tensor y(sa, std::move(out));
  auto backward = [y, inv_std = std::move(inv_std), rows, width](
                      std::span<const double> go, std::span<std::vector<double>*> in) {
    auto& gi = *in[0];
    const double inv_w = 1.0 / static_cast<double>(width);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* dy = go.data() + r * width;
      const double* yr = y.data() + r * width;
      double mean_dy = 0.0;
      double mean_dyy = 0.0;
      for (std::size_t j = 0; j < width; ++j) {
        mean_dy += dy[j];
        mean_dyy += dy[j] * yr[j];
      }
      mean_dy *= inv_w;
      mean_dyy *= inv_w;
      for (std::size_t j = 0; j < width; ++j) {
        gi[r * width + j] += inv_std[r] * (dy[j] - mean_dy - yr[j] * mean_dyy);
      }
    }
  };
  return g.record("layer_norm", y, {a}, std::move(backward));
}

Var softmax(Var a) {
  Graph& g = graph_of(a);
  const Shape& sa = a.shape();
  if (sa.empty() || sa.back() == 0) {
    shape_error(a, "softmax", "needs a non-empty last axis, got " + to_string(sa));
  }
  const std::size_t width = sa.back();
  const std::size_t rows = a.value().size() / width;
  const Tensor av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * width;
    double* y = out.data() + r * width;
    const double mx = *std::max_element(x, x + width);
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      y[j] = std::exp(x[j] - mx);
      total += y[j];
    }
    for (std::size_t j = 0; j < width; ++j) {
      y[j] /= total;
    }
  }
  Tensor y(sa, std::move(out));
  auto backward = [y, rows, width](std::span<const double> go,
                                   std::span<std::vector<double>*> in) {
    auto& gi = *in[0];
    for (std::size_t r = 0; r < rows; ++r) {
      const double* dy = go.data() + r * width;
      const double* yr = y.data() + r * width;
      double dot = 0.0;
      for (std::size_t j = 0; j < width; ++j) {
        dot += dy[j] * yr[j];
      }
      for (std::size_t j = 0; j < width; ++j) {
        gi[r * width + j] += yr[j] * (dy[j] - dot);
      }
    }
  };
  return g.record("softmax", y, {a}, std::move(backward));
}

Var sum(Var a) {
  Graph& g = graph_of(a);
  const Tensor av = a.value();
  double total = 0.0;
  for (double v : av.values()) {
    total += v;
  }
  auto backward = [](std::span<const double> go, std::span<std::vector<double>*> in) {
    for (double& v : *in[0]) {
      v += go[0];
    }
  };
  return g.record("sum", Tensor::scalar(total), {a}, std::move(backward));
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) {
    shape_error(a, "mean", "empty tensor");
  }
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var mean_axis(Var a, std::size_t axis) {
  Graph& g = graph_of(a);
  const Shape& sa = a.shape();
  if (axis >= sa.size() || sa[axis] == 0) {
    shape_error(a, "mean_axis", "axis " + std::to_string(axis) + " invalid for " + to_string(sa));
  }
  std::size_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) {
    outer *= sa[d];
  }
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < sa.size(); ++d) {
    inner *= sa[d];
  }
  const std::size_t len = sa[axis];
  const double inv = 1.0 / static_cast<double>(len);
  const Tensor av = a.value();
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t l = 0; l < len; ++l) {
      const double* x = av.data() + (o * len + l) * inner;
      double* y = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        y[i] += x[i];
      }
    }
  }
  for (double& v : out) {
    v *= inv;
  }
  Shape shape = sa;
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  auto backward = [outer, len, inner, inv](std::span<const double> go,
                                           std::span<std::vector<double>*> in) {
    auto& gi = *in[0];
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t l = 0; l < len; ++l) {
        for (std::size_t i = 0; i < inner; ++i) {
          gi[(o * len + l) * inner + i] += go[o * inner + i] * inv;
        }
      }
    }
  };
  return g.record("mean_axis", Tensor(std::move(shape), std::move(out)), {a}, std::move(backward));
}

Var gather_rows(Var table, std::span<const std::size_t> ids) {
  Graph& g = graph_of(table);
  const Shape& st = table.shape();
  if (st.size() != 2) {
    shape_error(table, "gather_rows", "table must be rank 2, got " + to_string(st));
  }
  const std::size_t rows = st[0];
  const std::size_t width = st[1];
  const Tensor tv = table.value();
  std::vector<double> out(ids.size() * width);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] < rows, ErrorKind::domain,
            "gather_rows: row id " + std::to_string(ids[i]) + " out of range [0," +
                std::to_string(rows) + ")");
    std::copy_n(tv.data() + ids[i] * width, width, out.data() + i * width);
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  auto backward = [idx = std::move(idx), width](std::span<const double> go,
                                                std::span<std::vector<double>*> in) {
    auto& gi = *in[0];
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < width; ++j) {
        gi[idx[i] * width + j] += go[i * width + j];
      }
    }
  };
  return g.record("gather_rows", Tensor({ids.size(), width}, std::move(out)), {table},
                  std::move(backward));
}

Var mse(Var a, Var b) {
  if (a.shape() != b.shape()) {
    shape_error(a, "mse", "shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                              " differ");
  }
  return mean(square(sub(a, b)));
}

}  // namespace factordiff::ops
