#ifndef SHAKEDROP_AUTOGRAD_HPP_
#define SHAKEDROP_AUTOGRAD_HPP_

#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "shakedrop/tensor.hpp"

namespace shakedrop {

enum class Phase { Train, Eval };

// Trainable value plus its gradient accumulator.
struct Parameter {
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  explicit Parameter(Tensor v) : value(std::move(v)), grad(Tensor::zeros_like(value)) {}

  void zero_grad() { grad.fill(0.0); }
};

class Tape;

// Handle to a node on a tape. Valid only for the tape that produced it.
struct Value {
  int idx = -1;
};

// Record of one forward pass. Nodes are appended in execution order, which is
// a topological order of the DAG; backward() replays them in reverse exactly
// once. A tape supports a single backward pass; reuse is an error.
class Tape {
 public:
  Value constant(Tensor x) { return push(std::move(x), false, nullptr, "constant"); }

  // Differentiable input that is not bound to a Parameter (gradient readable
  // through grad(), used by finite-difference checks).
  Value input(Tensor x) { return push(std::move(x), true, nullptr, "input"); }

  // Differentiable leaf bound to a Parameter; backward() adds the accumulated
  // gradient into p.grad when p is trainable. The parameter's current value is
  // copied onto the tape.
  Value leaf(Parameter& p) { return push(p.value, true, &p, "leaf"); }

  // Records one operation. backward_fn has signature void(Tape&, int self);
  // it reads grad_buffer(self) and accumulates into the inputs' grad buffers.
  // Nodes whose inputs all skip gradients drop their backward closure.
  template <typename F>
  Value emit(const char* op, Tensor out, std::vector<int> inputs, F&& backward_fn) {
    bool needs = false;
    for (int i : inputs) needs = needs || node(i).requires_grad;
    Value v = push(std::move(out), needs, nullptr, op);
    if (needs) {
      node(v.idx).inputs = std::move(inputs);
      node(v.idx).back = std::forward<F>(backward_fn);
    }
    return v;
  }

  const Tensor& value(Value v) const { return node(v.idx).value; }

  // Gradient of the last backward()'s loss w.r.t. this node.
  const Tensor& grad(Value v) const {
    if (!backward_done_) throw std::logic_error("tape: grad() before backward()");
    return node(v.idx).grad;
  }

  bool requires_grad(Value v) const { return node(v.idx).requires_grad; }

  // Reverse sweep from a scalar loss. seed scales the whole gradient (used to
  // weight replica shards); parameter leaves accumulate into Parameter::grad.
  void backward(Value loss, Real seed = 1.0) {
    if (backward_done_) throw std::logic_error("tape: backward() called twice on the same tape");
    const Node& loss_node = node(loss.idx);
    if (!loss_node.value.is_scalar())
      throw std::invalid_argument("tape: backward() requires a scalar loss, got shape " +
                                  shape_str(loss_node.value.shape()));
    backward_done_ = true;
    for (Node& n : nodes_)
      if (n.requires_grad) n.grad = Tensor::zeros_like(n.value);
    if (!loss_node.requires_grad) return;
    node(loss.idx).grad[0] = seed;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.requires_grad && n.back) n.back(*this, i);
    }
    for (Node& n : nodes_)
      if (n.param && n.param->trainable)
        for (int i = 0; i < n.grad.numel(); ++i) n.param->grad[i] += n.grad[i];
  }

  bool backward_done() const { return backward_done_; }
  int size() const { return static_cast<int>(nodes_.size()); }

  // Mutable gradient access for backward closures.
  Tensor& grad_buffer(int idx) { return node(idx).grad; }
  const Tensor& value_at(int idx) const { return node(idx).value; }
  bool requires_grad_at(int idx) const { return node(idx).requires_grad; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    const char* op = "";
    std::vector<int> inputs;
    std::function<void(Tape&, int)> back;
  };

  Value push(Tensor value, bool requires_grad, Parameter* param, const char* op) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.param = param;
    n.op = op;
    nodes_.push_back(std::move(n));
    return Value{static_cast<int>(nodes_.size()) - 1};
  }

  Node& node(int idx) {
    if (idx < 0 || idx >= static_cast<int>(nodes_.size()))
      throw std::logic_error("tape: value handle does not belong to this tape");
    return nodes_[static_cast<std::size_t>(idx)];
  }
  const Node& node(int idx) const { return const_cast<Tape*>(this)->node(idx); }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace shakedrop

#endif  // SHAKEDROP_AUTOGRAD_HPP_
