// SPDX-License-Identifier: Apache-2.0
//
// Dense tensors with an attached reverse-mode differentiation record.
//
// A Tensor<S> is a cheap value-semantic handle onto a shared node. Every
// operation (see ops.hpp) produces a fresh node whose `pull` closure knows how
// to push adjoints into its parents; DiffGraph replays those closures in
// reverse topological order. Scalar type S is float or double; 64-bit is used
// wherever gradients are checked against finite differences.

#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "avfusion/errors.hpp"
#include "avfusion/rng.hpp"

namespace avfusion {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

using BoolMat = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using BoolVec = Eigen::Array<bool, Eigen::Dynamic, 1>;

inline Index shape_size(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

/// Thread-local switch: while disabled, operations compute values only and
/// record no differentiation entries (used by the finite-difference oracle).
struct GradMode {
  static bool& enabled() {
    thread_local bool on = true;
    return on;
  }
};

struct NoGradGuard {
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::enabled() = false; }
  ~NoGradGuard() { GradMode::enabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename S>
struct TensorNode {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // allocated on first use, same length as value
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> pull;  // adjoint rule of the producing op
  const char* op = "leaf";
  bool requires_grad = false;
  bool backward_done = false;

  Index size() const { return static_cast<Index>(value.size()); }
  bool is_leaf() const { return parents.empty() && !pull; }

  /// Pointer to the grad buffer, zero-initialized on first access.
  S* grad_acc() {
    if (grad.empty()) grad.assign(value.size(), S(0));
    return grad.data();
  }
};

template <typename S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<S> values) {
    if (shape_size(shape) != static_cast<Index>(values.size())) {
      throw ShapeError("Tensor: " + shape_str(shape) + " cannot hold " +
                       std::to_string(values.size()) + " values");
    }
    Tensor t;
    t.node_ = std::make_shared<TensorNode<S>>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(values);
    return t;
  }

  static Tensor zeros(Shape shape) {
    std::vector<S> v(static_cast<std::size_t>(shape_size(shape)), S(0));
    return from(std::move(shape), std::move(v));
  }

  static Tensor full(Shape shape, S fill) {
    std::vector<S> v(static_cast<std::size_t>(shape_size(shape)), fill);
    return from(std::move(shape), std::move(v));
  }

  static Tensor scalar(S v) { return from(Shape{}, {v}); }

  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
    std::vector<S> v(static_cast<std::size_t>(shape_size(shape)));
    for (auto& x : v) x = static_cast<S>(rng.normal() * stddev);
    return from(std::move(shape), std::move(v));
  }

  bool valid() const { return node_ != nullptr; }

  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index dim(Index i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  Index size() const { return node_->size(); }

  std::span<const S> values() const { return {node_->value.data(), node_->value.size()}; }
  std::span<S> values_mut() { return {node_->value.data(), node_->value.size()}; }

  bool requires_grad() const { return node_->requires_grad; }

  Tensor& set_requires_grad(bool on = true) {
    if (!node_->is_leaf()) {
      throw ContractError("set_requires_grad: only leaf tensors may be toggled");
    }
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const S> grad() const { return {node_->grad.data(), node_->grad.size()}; }
  void zero_grad() { node_->grad.assign(node_->value.size(), S(0)); }

  S item() const {
    if (size() != 1) {
      throw ContractError("item: tensor " + shape_str(shape()) + " is not a scalar");
    }
    return node_->value[0];
  }

  template <typename... Ix>
  S at(Ix... ix) const {
    const Index idx[] = {static_cast<Index>(ix)...};
    const std::size_t n = sizeof...(Ix);
    if (n != node_->shape.size()) {
      throw ContractError("at: rank mismatch for " + shape_str(shape()));
    }
    Index flat = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (idx[i] < 0 || idx[i] >= node_->shape[i]) {
        throw ContractError("at: index out of range for " + shape_str(shape()));
      }
      flat = flat * node_->shape[i] + idx[i];
    }
    return node_->value[static_cast<std::size_t>(flat)];
  }

  /// Eigen view of a rank-2 tensor.
  Eigen::Map<const RowMat<S>> mat() const {
    if (rank() != 2) throw ContractError("mat: tensor " + shape_str(shape()) + " is not rank-2");
    return {node_->value.data(), dim(0), dim(1)};
  }

  /// Eigen view of a rank-1 tensor.
  Eigen::Map<const VecX<S>> vec() const {
    if (rank() != 1) throw ContractError("vec: tensor " + shape_str(shape()) + " is not rank-1");
    return {node_->value.data(), size()};
  }

  /// Flat Eigen view regardless of rank.
  Eigen::Map<const VecX<S>> flat() const { return {node_->value.data(), size()}; }

  bool all_finite() const {
    for (S v : node_->value) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  void backward() const;

  const std::shared_ptr<TensorNode<S>>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode<S>> node_;
};

/// Topologically ordered record of the primitive operations that produced one
/// tensor. Replaying the adjoint closures in reverse order accumulates
/// gradients into every reachable parameter exactly once per backward() call.
template <typename S>
class DiffGraph {
 public:
  explicit DiffGraph(const Tensor<S>& root) : root_(root.node()) {
    if (!root_) throw ContractError("DiffGraph: empty tensor");
    // Iterative post-order DFS over parents; order_ ends up forward-topological.
    std::unordered_set<const TensorNode<S>*> seen;
    std::vector<std::pair<TensorNode<S>*, std::size_t>> stack;
    stack.emplace_back(root_.get(), 0);
    seen.insert(root_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        TensorNode<S>* p = node->parents[next++].get();
        if (seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order_.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::size_t node_count() const { return order_.size(); }

  /// Seeds the (scalar) root with adjoint 1 and replays all recorded adjoint
  /// rules. A second call over the same record is rejected.
  void backward() {
    if (root_->size() != 1) {
      throw ContractError("backward: objective " + shape_str(root_->shape) + " is not scalar");
    }
    if (root_->is_leaf()) {
      throw ContractError("backward: root is a leaf with no recorded operations");
    }
    if (root_->backward_done || !root_->pull) {
      throw ContractError("backward: this forward record was already consumed");
    }
    root_->grad.assign(1, S(1));
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      TensorNode<S>* n = *it;
      if (n->pull && n->requires_grad && !n->grad.empty()) n->pull(*n);
    }
    // Detach the record: leaf gradients persist (and keep accumulating across
    // later passes until explicitly zeroed); intermediate state is released.
    for (TensorNode<S>* n : order_) {
      if (!n->is_leaf()) {
        n->pull = nullptr;
        n->parents.clear();
        n->grad.clear();
        n->backward_done = true;
      }
    }
  }

 private:
  std::shared_ptr<TensorNode<S>> root_;
  std::vector<TensorNode<S>*> order_;
};

template <typename S>
void Tensor<S>::backward() const {
  DiffGraph<S>(*this).backward();
}

/// Resets accumulated gradients on a parameter set (start of an optimizer window).
template <typename S>
void zero_grads(std::span<Tensor<S>> params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace avfusion
