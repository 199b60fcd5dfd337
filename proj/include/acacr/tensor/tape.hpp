#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "acacr/tensor/tensor.hpp"

namespace acacr {

template <Real T>
class Tape;

/// Handle to a value recorded on a tape. Cheap to copy; valid while the tape lives.
template <Real T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order, so the backward sweep walks ids from the loss down to
/// zero and visits each node once.
template <Real T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }

  Var<T> variable(Tensor<T> value) { return push(std::move(value), true, nullptr); }

  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward backward, const char* op) {
    bool needs_grad = false;
    for (const Var<T>& in : inputs) {
      own(in, op);
      needs_grad = needs_grad || nodes_[in.id].requires_grad;
    }
    require_finite(value, op);
    return push(std::move(value), needs_grad, needs_grad ? std::move(backward) : nullptr);
  }

  const Tensor<T>& value(Var<T> v) const {
    own(v, "value");
    return nodes_[v.id].value;
  }

  bool requires_grad(Var<T> v) const {
    own(v, "requires_grad");
    return nodes_[v.id].requires_grad;
  }

  std::size_t size() const { return nodes_.size(); }

  // Adds g into the gradient slot of v. No-op for nodes outside the gradient path.
  void accumulate(Var<T> v, const Tensor<T>& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (g.shape() != n.value.shape()) {
      throw ShapeError("gradient shape " + shape_string(g.shape()) + " does not match value " +
                       shape_string(n.value.shape()));
    }
    if (!n.grad) {
      n.grad = g;
      return;
    }
    auto& acc = n.grad->storage();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
  }

  void backward(Var<T> loss) {
    if (loss.tape != this || loss.id >= nodes_.size()) throw Error("backward: loss is not recorded on this tape");
    if (backward_done_) throw Error("backward: already run on this tape");
    const Tensor<T>& lv = nodes_[loss.id].value;
    if (lv.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_string(lv.shape()));
    backward_done_ = true;
    accumulate(loss, Tensor<T>(lv.shape(), T(1)));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.grad || !n.backward) continue;
      // Copy: the callback may accumulate into other nodes but never into i.
      const Tensor<T> g = *n.grad;
      n.backward(*this, g);
    }
  }

  bool has_run_backward() const { return backward_done_; }

  // Gradient of the last backward sweep; zeros when v was not reached.
  Tensor<T> grad(Var<T> v) const {
    own(v, "grad");
    const Node& n = nodes_[v.id];
    return n.grad ? *n.grad : Tensor<T>(n.value.shape());
  }

 private:
  struct Node {
    Tensor<T> value;
    bool requires_grad = false;
    Backward backward;
    std::optional<Tensor<T>> grad;
  };

  Var<T> push(Tensor<T> value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), requires_grad, std::move(backward), std::nullopt});
    return Var<T>{this, nodes_.size() - 1};
  }

  void own(Var<T> v, const char* op) const {
    if (v.tape != this || v.id >= nodes_.size()) {
      throw Error(std::string(op) + ": variable belongs to a different tape");
    }
  }

  std::deque<Node> nodes_;  // stable references across push_back
  bool backward_done_ = false;
};

}  // namespace acacr
