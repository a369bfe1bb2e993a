#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rhia/tensor.hpp"

namespace rhia {

template <class T>
class Tape;

// Handle to a node recorded on a tape. Cheap to copy; valid while the tape lives.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor<T>& value() const { return tape->tensor(id); }
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  T scalar() const { return value()[0]; }
};

// Test hook: when `op` is non-empty, the upstream gradient entering every node
// recorded under that op name is multiplied by `factor` before its backward
// rule runs. Used to prove the gradient checker catches a broken rule.
struct FaultHook {
  std::string op;
  double factor = 1.5;
};

inline FaultHook& fault_hook() {
  static FaultHook hook;
  return hook;
}

// Linear record of primitive applications. Nodes are appended in evaluation
// order, so creation order is a topological order and backward() is a single
// reverse sweep.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf aliasing an external parameter. Gradients accumulate into p.grad().
  Var<T> param(Tensor<T>& p) {
    Node n;
    n.ext = &p;
    n.requires_grad = true;
    n.op = "param";
    return push(std::move(n));
  }

  // Leaf holding data that never receives a gradient.
  Var<T> constant(Tensor<T> v) {
    Node n;
    n.own = std::move(v);
    n.op = "constant";
    return push(std::move(n));
  }

  // Appends the result of a primitive. `fn` is kept only when some input
  // needs a gradient.
  Var<T> record(Tensor<T> out, const char* op, std::initializer_list<Var<T>> inputs,
                BackwardFn fn) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || nodes_[in.id].requires_grad;
    Node n;
    n.own = std::move(out);
    n.op = op;
    n.requires_grad = needs;
    if (needs) n.backward = std::move(fn);
    return push(std::move(n));
  }

  Var<T> record(Tensor<T> out, const char* op, const std::vector<Var<T>>& inputs,
                BackwardFn fn) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || nodes_[in.id].requires_grad;
    Node n;
    n.own = std::move(out);
    n.op = op;
    n.requires_grad = needs;
    if (needs) n.backward = std::move(fn);
    return push(std::move(n));
  }

  Tensor<T>& tensor(std::uint32_t id) {
    Node& n = nodes_[id];
    return n.ext ? *n.ext : n.own;
  }
  const Tensor<T>& tensor(std::uint32_t id) const {
    const Node& n = nodes_[id];
    return n.ext ? *n.ext : n.own;
  }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  const std::string& op_name(std::uint32_t id) const { return nodes_[id].op; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse.
  void backward(Var<T> loss) {
    Tensor<T>& out = tensor(loss.id);
    if (out.size() != 1) {
      throw NumericError("backward: loss must be a scalar, got shape " + shape_str(out.shape()));
    }
    out.grad()[0] += T(1);
    const FaultHook& fault = fault_hook();
    for (std::uint32_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward) continue;
      if (!fault.op.empty() && fault.op == n.op) {
        for (auto& g : n.own.grad()) g *= static_cast<T>(fault.factor);
      }
      n.backward(*this, i);
    }
  }

 private:
  struct Node {
    Tensor<T> own;
    Tensor<T>* ext = nullptr;
    bool requires_grad = false;
    std::string op;
    BackwardFn backward;
  };

  Var<T> push(Node n) {
    nodes_.push_back(std::move(n));
    return Var<T>{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  std::vector<Node> nodes_;
};

}  // namespace rhia
