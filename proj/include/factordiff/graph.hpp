#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "factordiff/tensor.hpp"

namespace factordiff {

/// Named tensors, ordered by name. Used for model weights, optimizer state and
/// gradients alike.
using ParameterSet = std::map<std::string, Tensor>;

class Graph;

/// Handle to a node recorded on a Graph.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Graph* graph() const noexcept { return graph_; }
  bool valid() const noexcept { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Accumulates the gradient of one node's output into its inputs' buffers.
/// `inputs[i]` is null when input i does not need a gradient.
using BackwardFn =
    std::function<void(std::span<const double> out_grad, std::span<std::vector<double>*> inputs)>;

class Gradients;

/// Define-by-run tape for reverse-mode differentiation.
///
/// Every op appends one node; nodes only reference earlier nodes, so the
/// recording order is a topological order and the tape is acyclic by
/// construction. Node values are immutable Tensors.
class Graph {
 public:
  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    Tensor value;
    BackwardFn backward;
    bool needs_grad = false;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Differentiable leaf that is not a parameter (e.g. the input of an
  /// input-gradient computation).
  Var input(std::string name, Tensor value);
  /// Trainable leaf. Binding the same name twice returns the same node.
  Var parameter(const std::string& name, const Tensor& value);

  /// Appends an op node. Throws if the value is not finite.
  Var record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  /// Reverse sweep from a scalar node.
  Gradients backward(Var loss) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }

  /// "op#id" label used in error messages.
  std::string label(std::size_t id) const;

 private:
  friend class Gradients;

  std::deque<Node> nodes_;  // stable references across appends
  std::unordered_map<std::string, std::size_t> parameters_;
  std::unordered_map<std::string, std::size_t> inputs_;
};

class Gradients {
 public:
  /// Gradient of the loss with respect to a node (zeros if unreachable).
  Tensor wrt(Var v) const;
  /// Gradient for every parameter bound on the graph.
  ParameterSet parameters() const;
  /// Gradient for a named differentiable input.
  Tensor input(const std::string& name) const;

 private:
  friend class Graph;
  const Graph* graph_ = nullptr;
  std::vector<std::vector<double>> grads_;
};

/// Gradient for every entry of `params`: parameters that were never bound
/// or not on a path to the loss get an all-zeros tensor.
ParameterSet gradients_for(const ParameterSet& params, const Gradients& grads);

/// Builds a scalar loss on a fresh graph from a parameter point. The builder
/// must bind each entry through Graph::parameter under its map key.
using LossBuilder = std::function<Var(Graph&, const ParameterSet&)>;

struct FdReport {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares reverse-mode gradients with central differences at `point`.
/// Relative error per entry is |a - c| / (|a| + |c| + 1e-12).
FdReport fd_check(const LossBuilder& build, const ParameterSet& point, double eps);

}  // namespace factordiff
