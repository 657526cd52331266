#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

#include "lapflow/tensor.hpp"

namespace lapflow {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
  bool valid() const noexcept { return tape != nullptr; }
};

/// Gradients of a scalar loss with respect to every requires_grad leaf.
template <typename T>
class Gradients {
 public:
  /// Gradient of `v`; zeros when `v` did not influence the loss.
  const Tensor<T>& operator[](Var<T> v) const {
    if (v.id >= grads_.size() || grads_[v.id].shape() != v.shape()) {
      throw DimensionError("gradient requested for a value that is not a requires_grad leaf");
    }
    return grads_[v.id];
  }

  Tensor<T> take(Var<T> v) {
    (void)(*this)[v];
    return std::move(grads_[v.id]);
  }

 private:
  friend class Tape<T>;
  std::vector<Tensor<T>> grads_;
};

/// Append-only record of primitive operations. Inputs always precede their
/// outputs, so walking node ids downwards is a reverse topological order.
/// Gradients accumulate additively into each input.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var<T> constant(Tensor<T> value) { return push_leaf(std::move(value), nullptr, false); }

  /// Leaf that owns its value and requires a gradient.
  Var<T> leaf(Tensor<T> value) { return push_leaf(std::move(value), nullptr, grad_enabled_); }

  /// Leaf that refers to storage owned elsewhere (parameters). The referenced
  /// tensor must outlive the tape and stay unmodified while it is in use.
  Var<T> borrow(const Tensor<T>& value, bool requires_grad = true) {
    return push_leaf(Tensor<T>{}, &value, requires_grad && grad_enabled_);
  }

  /// Borrowed leaf whose gradient is added into `sink` (same shape) during
  /// backward instead of being returned in the Gradients map.
  Var<T> borrow(const Tensor<T>& value, Tensor<T>& sink) {
    require_same_shape(value.shape(), sink.shape(), "borrow gradient sink");
    Var<T> v = push_leaf(Tensor<T>{}, &value, grad_enabled_);
    nodes_.back().sink = &sink;
    return v;
  }

  Var<T> record(Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn fn) {
#ifndef NDEBUG
    if (!value.all_finite()) throw DivergenceError("non-finite value produced on tape");
#endif
    Node node;
    node.owned = std::move(value);
    if (grad_enabled_) {
      for (const auto& in : inputs) {
        if (nodes_[in.id].requires_grad) {
          node.requires_grad = true;
          break;
        }
      }
    }
    if (node.requires_grad) node.backward = std::move(fn);
    nodes_.push_back(std::move(node));
    return Var<T>{this, nodes_.size() - 1};
  }

  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()),
                  std::move(fn));
  }

  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.borrowed ? *n.borrowed : n.owned;
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }

  /// Upstream gradient of node `id` during backward.
  const Tensor<T>& grad(std::size_t id) const { return nodes_[id].grad; }

  /// Zero-initialised accumulator for node `id` (allocated on first use).
  Tensor<T>& accumulator(std::size_t id) {
    Node& n = nodes_[id];
    if (n.sink) return *n.sink;
    if (n.grad.empty() && !value(id).empty()) n.grad = Tensor<T>(value(id).shape());
    return n.grad;
  }

  Gradients<T> backward(Var<T> loss) {
    if (loss.tape != this) throw DimensionError("backward: loss belongs to another tape");
    if (value(loss.id).size() != 1) {
      throw DimensionError("backward: loss must be scalar, got shape " +
                           shape_str(value(loss.id).shape()));
    }
    Gradients<T> out;
    out.grads_.resize(nodes_.size());
    if (nodes_[loss.id].requires_grad) {
      accumulator(loss.id)[0] = T{1};
      for (std::size_t id = loss.id + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.requires_grad || n.grad.empty() || n.is_leaf) continue;
        if (n.backward) n.backward(*this, id);
        n.grad = Tensor<T>{};
      }
    }
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
      Node& n = nodes_[id];
      if (!n.is_leaf || !n.requires_grad || n.sink) continue;
      out.grads_[id] = n.grad.empty() ? Tensor<T>(value(id).shape()) : std::move(n.grad);
    }
    return out;
  }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* borrowed = nullptr;
    Tensor<T>* sink = nullptr;
    Tensor<T> grad;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
  };

  Var<T> push_leaf(Tensor<T> value, const Tensor<T>* borrowed, bool requires_grad) {
    Node node;
    node.owned = std::move(value);
    node.borrowed = borrowed;
    node.requires_grad = requires_grad;
    node.is_leaf = true;
    nodes_.push_back(std::move(node));
    return Var<T>{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  bool grad_enabled_;
};

}  // namespace lapflow
