#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "voxattn/tensor.hpp"

namespace voxattn {

// Recorded computation graph for reverse-mode differentiation. Nodes are
// appended in execution order, so every node's inputs precede it and the
// backward sweep is a single reverse pass over the node list.
//
// backward() may be called repeatedly; each call propagates a fresh adjoint
// seeded with 1 at the root and adds the result into the per-node gradient
// accumulators, so two calls yield exactly twice the gradient.
template <typename T>
class Tape {
public:
  struct Options {
    // When set, every pushed value is scanned for NaN/Inf and a NumericError
    // is raised naming the offending op.
    bool check_finite = false;
  };

  // Accumulates `delta` into the in-flight adjoint of node `id`. Only
  // meaningful inside a vjp callback during backward().
  using Vjp = std::function<void(Tape&, int self, const Tensor<T>& out_adjoint)>;

  Tape() = default;
  explicit Tape(Options opts) : opts_(opts) {}

  int add_leaf(Tensor<T> value) {
    return push("leaf", std::move(value), {}, nullptr);
  }

  int push(std::string op_name, Tensor<T> value, std::vector<int> inputs, Vjp vjp) {
    bool needs = value.requires_grad();
    for (int in : inputs) {
      check_id(in);
      if (nodes_[static_cast<std::size_t>(in)].needs) needs = true;
    }
    if (opts_.check_finite && !value.all_finite()) {
      throw NumericError("non-finite values produced by op '" + op_name + "'");
    }
    value.set_requires_grad(needs);
    nodes_.push_back(Node{std::move(op_name), std::move(inputs), std::move(value),
                          std::move(vjp), needs, std::nullopt});
    return static_cast<int>(nodes_.size()) - 1;
  }

  int size() const { return static_cast<int>(nodes_.size()); }

  const Tensor<T>& value(int id) const {
    check_id(id);
    return nodes_[static_cast<std::size_t>(id)].value;
  }

  bool requires_grad(int id) const {
    check_id(id);
    return nodes_[static_cast<std::size_t>(id)].needs;
  }

  const std::string& op_name(int id) const {
    check_id(id);
    return nodes_[static_cast<std::size_t>(id)].op;
  }

  bool has_gradient(int id) const {
    check_id(id);
    return nodes_[static_cast<std::size_t>(id)].grad.has_value();
  }

  const Tensor<T>& gradient(int id) const {
    check_id(id);
    const auto& g = nodes_[static_cast<std::size_t>(id)].grad;
    if (!g) {
      throw StateError("node " + std::to_string(id) + " (" +
                       nodes_[static_cast<std::size_t>(id)].op + ") has no gradient");
    }
    return *g;
  }

  void backward(int root);

  // Called by vjp implementations to feed gradient back to an input node.
  void accumulate_adjoint(int id, const Tensor<T>& delta);

  // Drops accumulated gradients, keeping values.
  void clear_gradients() {
    for (auto& n : nodes_) n.grad.reset();
  }

private:
  struct Node {
    std::string op;
    std::vector<int> inputs;
    Tensor<T> value;
    Vjp vjp;
    bool needs = false;
    std::optional<Tensor<T>> grad;  // persistent accumulator
  };

  void check_id(int id) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size())) {
      throw StateError("tape node id " + std::to_string(id) + " out of range");
    }
  }

  Options opts_;
  std::vector<Node> nodes_;
  std::vector<std::optional<Tensor<T>>> adjoints_;  // scratch, live during backward()
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace voxattn
