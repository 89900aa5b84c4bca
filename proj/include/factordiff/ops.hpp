#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "factordiff/graph.hpp"

namespace factordiff::ops {

/// Output shape of a numpy-style broadcast; throws on incompatible extents.
Shape broadcast_shape(const Shape& a, const Shape& b);

// Elementwise binary ops broadcast numpy-style.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);

Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var square(Var a);

Var relu(Var a);
Var silu(Var a);
Var gelu(Var a);  // tanh approximation
Var tanh(Var a);

/// a[..., n] x b[n, p] -> [..., p]
Var matmul(Var a, Var b);
/// a[B, m, n] x b[B, n, p] -> [B, m, p]
Var bmm(Var a, Var b);
/// x[..., n] x w[n, p] + bias[p]
Var linear(Var x, Var w, Var bias);

Var reshape(Var a, Shape shape);
Var permute(Var a, std::vector<std::size_t> perm);

/// Normalizes over the last axis: (x - mean) / sqrt(var + eps), no affine.
Var layer_norm(Var a, double eps = 1e-5);
/// Softmax over the last axis.
Var softmax(Var a);

Var sum(Var a);
Var mean(Var a);
/// Mean over one axis; the axis is removed from the shape.
Var mean_axis(Var a, std::size_t axis);

/// Rows of table[S, W] selected by ids -> [ids.size(), W].
Var gather_rows(Var table, std::span<const std::size_t> ids);

/// Mean of squared differences over all elements.
Var mse(Var a, Var b);

}  // namespace factordiff::ops
