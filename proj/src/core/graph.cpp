#include "factordiff/graph.hpp"

#include <cmath>

#include "factordiff/error.hpp"

namespace factordiff {

const Tensor& Var::value() const {
  require(graph_ != nullptr, ErrorKind::domain, "use of an unbound Var");
  return graph_->node(id_).value;
}

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{"constant", {}, std::move(value), {}, false});
  return Var(this, nodes_.size() - 1);
}

Var Graph::input(std::string name, Tensor value) {
  nodes_.push_back(Node{"input:" + name, {}, std::move(value), {}, true});
  inputs_[std::move(name)] = nodes_.size() - 1;
  return Var(this, nodes_.size() - 1);
}

Var Graph::parameter(const std::string& name, const Tensor& value) {
  if (auto it = parameters_.find(name); it != parameters_.end()) {
    return Var(this, it->second);
  }
  nodes_.push_back(Node{"param:" + name, {}, value, {}, true});
  parameters_.emplace(name, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

std::string Graph::label(std::size_t id) const {
  if (id >= nodes_.size()) {
    return "node#" + std::to_string(id);
  }
  return nodes_[id].op + "#" + std::to_string(id);
}

Var Graph::record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node node;
  node.op = std::string(op);
  node.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    require(v.graph() == this, ErrorKind::domain,
            node.op + ": input belongs to a different graph");
    node.inputs.push_back(v.id());
    node.needs_grad = node.needs_grad || nodes_[v.id()].needs_grad;
  }
  if (!value.all_finite()) {
    fail(ErrorKind::numeric, "non-finite value produced by " + node.op + "#" +
                                 std::to_string(nodes_.size()));
  }
  node.value = std::move(value);
  if (node.needs_grad) {
    node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Gradients Graph::backward(Var loss) const {
  require(loss.graph() == this, ErrorKind::domain, "backward: loss node is from another graph");
  const Node& root = nodes_.at(loss.id());
  require(root.value.size() == 1, ErrorKind::shape,
          "backward: loss " + label(loss.id()) + " must be scalar, got shape " +
              to_string(root.value.shape()));

  Gradients out;
  out.graph_ = this;
  out.grads_.resize(nodes_.size());
  out.grads_[loss.id()].assign(1, 1.0);

  std::vector<std::vector<double>*> input_grads;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    auto& grad = out.grads_[id];
    if (grad.empty() || !node.backward) {
      continue;
    }
    input_grads.assign(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      const Node& in = nodes_[node.inputs[i]];
      if (!in.needs_grad) {
        continue;
      }
      auto& buf = out.grads_[node.inputs[i]];
      if (buf.empty()) {
        buf.assign(in.value.size(), 0.0);
      }
      input_grads[i] = &buf;
    }
    node.backward(grad, input_grads);
  }
  return out;
}

Tensor Gradients::wrt(Var v) const {
  const auto& node = graph_->node(v.id());
  const auto& g = grads_.at(v.id());
  if (g.empty()) {
    return Tensor(node.value.shape());
  }
  return Tensor(node.value.shape(), g);
}

ParameterSet Gradients::parameters() const {
  ParameterSet out;
  for (const auto& [name, id] : graph_->parameters_) {
    const auto& g = grads_[id];
    const Shape& shape = graph_->nodes_[id].value.shape();
    out.emplace(name, g.empty() ? Tensor(shape) : Tensor(shape, g));
  }
  return out;
}

Tensor Gradients::input(const std::string& name) const {
  auto it = graph_->inputs_.find(name);
  require(it != graph_->inputs_.end(), ErrorKind::domain, "no graph input named '" + name + "'");
  const auto& g = grads_[it->second];
  const Shape& shape = graph_->nodes_[it->second].value.shape();
  return g.empty() ? Tensor(shape) : Tensor(shape, g);
}

ParameterSet gradients_for(const ParameterSet& params, const Gradients& grads) {
  ParameterSet bound = grads.parameters();
  ParameterSet out;
  for (const auto& [name, value] : params) {
    auto it = bound.find(name);
    out.emplace(name, it != bound.end() ? it->second : Tensor(value.shape()));
  }
  return out;
}

FdReport fd_check(const LossBuilder& build, const ParameterSet& point, double eps) {
  require(eps > 0.0, ErrorKind::domain, "fd_check: eps must be positive");
  ParameterSet analytic;
  {
    Graph g;
    Var loss = build(g, point);
    analytic = gradients_for(point, g.backward(loss));
  }
  auto evaluate = [&](const ParameterSet& p) {
    Graph g;
    return build(g, p).value().item();
  };

  FdReport report;
  ParameterSet probe = point;
  for (const auto& [name, value] : point) {
    std::vector<double> buf = value.to_vector();
    const Tensor& grad = analytic.at(name);
    for (std::size_t i = 0; i < buf.size(); ++i) {
      const double orig = buf[i];
      buf[i] = orig + eps;
      probe[name] = Tensor(value.shape(), buf);
      const double up = evaluate(probe);
      buf[i] = orig - eps;
      probe[name] = Tensor(value.shape(), buf);
      const double down = evaluate(probe);
      buf[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = grad[i];
      const double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
      if (rel > report.max_rel_error) {
        report = FdReport{rel, name, i, a, numeric};
      }
    }
    probe[name] = value;
  }
  return report;
}

}  // namespace factordiff
