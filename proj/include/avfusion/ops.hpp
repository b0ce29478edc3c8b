// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives over Tensor<S>. Free functions, Eigen-backed.
//
// Shape rules per operation:
//   matmul      [m,k]x[k,n]->[m,n], [m,k]x[k]->[m], [k]x[k,n]->[n]
//   add/sub/mul same shape, elementwise
//   scale       tensor * compile-time-constant scalar
//   add_scalar/mul_scalar  broadcast a size-1 tensor over every element
//   add_bias    [m,n] + [n] broadcast over rows;  mul_rows is the hadamard analogue
//   concat      along axis 0 (rank-1/2) or axis 1 (rank-2)
//   stack       k rank-1 [n] tensors -> [k,n]
//   slice_rows/row/element  differentiable views (copying) into rows/entries
//   transpose   [m,n]->[n,m];  reshape preserves element count
//   mean_pool   [m,n] -> [n] (axis 0) or [m] (axis 1)
//   layer_norm  per-row normalization over the last axis, eps floor on variance
//   masked_softmax  last-axis softmax; masked entries are exactly 0 in the output
//   dilated_conv1d  acausal (centered) taps, zero padding, output length = input
//   nll_weighted    mean_i w_i * -log(max(p[i,y_i], floor))

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "avfusion/tensor.hpp"

namespace avfusion {

/// Assembles an operation node. Records parents and the adjoint closure only
/// while grad mode is enabled and at least one parent requires gradients.
/// This is the extension point every primitive below goes through.
template <typename S>
Tensor<S> make_custom_op(const char* op, Shape shape, std::vector<S> value,
                         std::vector<Tensor<S>> parents,
                         std::function<void(TensorNode<S>&)> pull) {
  Tensor<S> out = Tensor<S>::from(std::move(shape), std::move(value));
  bool track = GradMode::enabled();
  if (track) {
    track = false;
    for (const auto& p : parents) track = track || p.requires_grad();
  }
  TensorNode<S>& node = *out.node();
  node.op = op;
  if (track) {
    node.requires_grad = true;
    node.parents.reserve(parents.size());
    for (const auto& p : parents) node.parents.push_back(p.node());
    node.pull = std::move(pull);
  }
  return out;
}

namespace detail {

template <typename S>
[[noreturn]] void shape_fail(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                   " and " + shape_str(b.shape()));
}

template <typename S>
Eigen::Map<RowMat<S>> grad_mat(TensorNode<S>& n) {
  return {n.grad_acc(), n.shape[0], n.shape[1]};
}

template <typename S>
Eigen::Map<VecX<S>> grad_vec(TensorNode<S>& n) {
  return {n.grad_acc(), n.size()};
}

template <typename S>
Eigen::Map<const RowMat<S>> value_mat(const TensorNode<S>& n) {
  return {n.value.data(), n.shape[0], n.shape[1]};
}

template <typename S>
Eigen::Map<const VecX<S>> value_vec(const TensorNode<S>& n) {
  return {n.value.data(), n.size()};
}

/// Tap offsets of the acausal dilated convolution. Odd widths use the
/// centered grid d*(j - (k-1)/2); even widths place taps mirror-symmetric
/// about the output index with none at 0, e.g. width 2 -> {-d, +d}.
inline std::vector<Index> conv_offsets(Index width, Index dilation) {
  std::vector<Index> off(static_cast<std::size_t>(width));
  for (Index j = 0; j < width; ++j) {
    if (width % 2 == 1) {
      off[static_cast<std::size_t>(j)] = dilation * (j - (width - 1) / 2);
    } else {
      off[static_cast<std::size_t>(j)] =
          j < width / 2 ? dilation * (j - width / 2) : dilation * (j - width / 2 + 1);
    }
  }
  return off;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() == 2 && b.rank() == 2) {
    if (a.dim(1) != b.dim(0)) detail::shape_fail("matmul", a, b);
    const Index m = a.dim(0), n = b.dim(1);
    std::vector<S> out(static_cast<std::size_t>(m * n));
    Eigen::Map<RowMat<S>>(out.data(), m, n).noalias() = a.mat() * b.mat();
    return make_custom_op<S>(
        "matmul", {m, n}, std::move(out), {a, b}, [](TensorNode<S>& self) {
          auto ga = Eigen::Map<const RowMat<S>>(self.grad.data(), self.shape[0], self.shape[1]);
          auto& pa = *self.parents[0];
          auto& pb = *self.parents[1];
          if (pa.requires_grad)
            detail::grad_mat(pa).noalias() += ga * detail::value_mat(pb).transpose();
          if (pb.requires_grad)
            detail::grad_mat(pb).noalias() += detail::value_mat(pa).transpose() * ga;
        });
  }
  if (a.rank() == 2 && b.rank() == 1) {
    if (a.dim(1) != b.dim(0)) detail::shape_fail("matmul", a, b);
    const Index m = a.dim(0);
    std::vector<S> out(static_cast<std::size_t>(m));
    Eigen::Map<VecX<S>>(out.data(), m).noalias() = a.mat() * b.vec();
    return make_custom_op<S>(
        "matmul", {m}, std::move(out), {a, b}, [](TensorNode<S>& self) {
          auto g = Eigen::Map<const VecX<S>>(self.grad.data(), self.size());
          auto& pa = *self.parents[0];
          auto& pb = *self.parents[1];
          if (pa.requires_grad)
            detail::grad_mat(pa).noalias() += g * detail::value_vec(pb).transpose();
          if (pb.requires_grad)
            detail::grad_vec(pb).noalias() += detail::value_mat(pa).transpose() * g;
        });
  }
  if (a.rank() == 1 && b.rank() == 2) {
    if (a.dim(0) != b.dim(0)) detail::shape_fail("matmul", a, b);
    const Index n = b.dim(1);
    std::vector<S> out(static_cast<std::size_t>(n));
    Eigen::Map<VecX<S>>(out.data(), n).noalias() = b.mat().transpose() * a.vec();
    return make_custom_op<S>(
        "matmul", {n}, std::move(out), {a, b}, [](TensorNode<S>& self) {
          auto g = Eigen::Map<const VecX<S>>(self.grad.data(), self.size());
          auto& pa = *self.parents[0];
          auto& pb = *self.parents[1];
          if (pa.requires_grad)
            detail::grad_vec(pa).noalias() += detail::value_mat(pb) * g;
          if (pb.requires_grad)
            detail::grad_mat(pb).noalias() += detail::value_vec(pa) * g.transpose();
        });
  }
  detail::shape_fail("matmul", a, b);
}

// ---------------------------------------------------------------------------
// elementwise

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape()) detail::shape_fail("add", a, b);
  std::vector<S> out(a.values().begin(), a.values().end());
  Eigen::Map<VecX<S>>(out.data(), a.size()) += b.flat();
  return make_custom_op<S>("add", a.shape(), std::move(out), {a, b}, [](TensorNode<S>& self) {
    auto g = Eigen::Map<const VecX<S>>(self.grad.data(), self.size());
    for (auto& p : self.parents) {
      if (p->requires_grad) detail::grad_vec(*p) += g;
    }
  });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape()) detail::shape_fail("sub", a, b);
  std::vector<S> out(a.values().begin(), a.values().end());
  Eigen::Map<VecX<S>>(out.data(), a.size()) -= b.flat();
  return make_custom_op<S>("sub", a.shape(), std::move(out), {a, b}, [](TensorNode<S>& self) {
    auto g = Eigen::Map<const VecX<S>>(self.grad.data(), self.size());
    if (self.parents[0]->requires_grad) detail::grad_vec(*self.parents[0]) += g;
    if (self.parents[1]->requires_grad) detail::grad_vec(*self.parents[1]) -= g;
  });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape()) detail::shape_fail("mul", a, b);
  std::vector<S> out(static_cast<std::size_t>(a.size()));
  Eigen::Map<VecX<S>>(out.data(), a.size()) = a.flat().cwiseProduct(b.flat());
  return make_custom_op<S>("mul", a.shape(), std::move(out), {a, b}, [](TensorNode<S>& self) {
    auto g = Eigen::Map<const VecX<S>>(self.grad.data(), self.size());
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) detail::grad_vec(pa) += g.cwiseProduct(detail::value_vec(pb));
    if (pb.requires_grad) detail::grad_vec(pb) += g.cwiseProduct(detail::value_vec(pa));
  });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, double c) {
  std::vector<S> out(static_cast<std::size_t>(a.size()));
  Eigen::Map<VecX<S>>(out.data(), a.size()) = a.flat() * static_cast<S>(c);
  return make_custom_op<S>("scale", a.shape(), std::move(out), {a}, [c](TensorNode<S>& self) {
    auto g = Eigen::Map<const VecX<S>>(self.grad.data(), self.size());
    if (self.parents[0]->requires_grad)
      detail::grad_vec(*self.parents[0]) += g * static_cast<S>(c);
  });
}

/// x + s with s a size-1 tensor broadcast everywhere.
template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, const Tensor<S>& s) {
  if (s.size() != 1) detail::shape_fail("add_scalar", a, s);
  std::vector<S> out(a.values().begin(), a.values().end());
  const S sv = s.values()[0];
  for (auto& v : out) v += sv;
  return make_custom_op<S>("add_scalar", a.shape(), std::move(out), {a, s},
                           [](TensorNode<S>& self) {
                             auto g = Eigen::Map<const VecX<S>>(self.grad.data(), self.size());
                             if (self.parents[0]->requires_grad)
                               detail::grad_vec(*self.parents[0]) += g;
                             if (self.parents[1]->requires_grad)
                               self.parents[1]->grad_acc()[0] += g.sum();
                           });
}

/// x * s with s a size-1 tensor broadcast everywhere.
template <typename S>
Tensor<S> mul_scalar(const Tensor<S>& a, const Tensor<S>& s) {
  if (s.size() != 1) detail::shape_fail("mul_scalar", a, s);
  std::vector<S> out(static_cast<std::size_t>(a.size()));
  Eigen::Map<VecX<S>>(out.data(), a.size()) = a.flat() * s.values()[0];
  return make_custom_op<S>(
      "mul_scalar", a.shape(), std::move(out), {a, s}, [](TensorNode<S>& self) {
        auto g = Eigen::Map<const VecX<S>>(self.grad.data(), self.size());
        auto& pa = *self.parents[0];
        auto& ps = *self.parents[1];
        if (pa.requires_grad) detail::grad_vec(pa) += g * ps.value[0];
        if (ps.requires_grad)
          ps.grad_acc()[0] += g.dot(detail::value_vec(pa));
      });
}

/// [m,n] + row vector [n], broadcast over rows.
template <typename S>
Tensor<S> add_bias(const Tensor<S>& x, const Tensor<S>& b) {
  if (x.rank() != 2 || b.rank() != 1 || x.dim(1) != b.dim(0)) {
    detail::shape_fail("add_bias", x, b);
  }
  std::vector<S> out(x.values().begin(), x.values().end());
  Eigen::Map<RowMat<S>>(out.data(), x.dim(0), x.dim(1)).rowwise() += b.vec().transpose();
  return make_custom_op<S>(
      "add_bias", x.shape(), std::move(out), {x, b}, [](TensorNode<S>& self) {
        auto g = Eigen::Map<const RowMat<S>>(self.grad.data(), self.shape[0], self.shape[1]);
        if (self.parents[0]->requires_grad) detail::grad_mat(*self.parents[0]) += g;
        if (self.parents[1]->requires_grad)
          detail::grad_vec(*self.parents[1]) += g.colwise().sum().transpose();
      });
}

/// [m,n] * row vector [n], hadamard broadcast over rows.
template <typename S>
Tensor<S> mul_rows(const Tensor<S>& x, const Tensor<S>& g) {
  if (x.rank() != 2 || g.rank() != 1 || x.dim(1) != g.dim(0)) {
    detail::shape_fail("mul_rows", x, g);
  }
  std::vector<S> out(static_cast<std::size_t>(x.size()));
  Eigen::Map<RowMat<S>>(out.data(), x.dim(0), x.dim(1)) =
      x.mat().array().rowwise() * g.vec().transpose().array();
  return make_custom_op<S>(
      "mul_rows", x.shape(), std::move(out), {x, g}, [](TensorNode<S>& self) {
        auto gr = Eigen::Map<const RowMat<S>>(self.grad.data(), self.shape[0], self.shape[1]);
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        if (px.requires_grad)
          detail::grad_mat(px).array() +=
              gr.array().rowwise() * detail::value_vec(pg).transpose().array();
        if (pg.requires_grad)
          detail::grad_vec(pg) +=
              (gr.array() * detail::value_mat(px).array()).colwise().sum().matrix().transpose();
      });
}

// ---------------------------------------------------------------------------
// nonlinearities

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  std::vector<S> out(static_cast<std::size_t>(x.size()));
  auto xs = x.values();
  for (Index i = 0; i < x.size(); ++i) {
    const S v = xs[static_cast<std::size_t>(i)];
    // branch keeps exp() argument non-positive for both signs
    out[static_cast<std::size_t>(i)] =
        v >= S(0) ? S(1) / (S(1) + std::exp(-v)) : std::exp(v) / (S(1) + std::exp(v));
  }
  return make_custom_op<S>("sigmoid", x.shape(), std::move(out), {x}, [](TensorNode<S>& self) {
    if (!self.parents[0]->requires_grad) return;
    auto g = Eigen::Map<const VecX<S>>(self.grad.data(), self.size());
    auto y = detail::value_vec(self);
    detail::grad_vec(*self.parents[0]).array() += g.array() * y.array() * (S(1) - y.array());
  });
}

template <typename S>
Tensor<S> tanh(const Tensor<S>& x) {
  std::vector<S> out(static_cast<std::size_t>(x.size()));
  auto xs = x.values();
  for (Index i = 0; i < x.size(); ++i)
    out[static_cast<std::size_t>(i)] = std::tanh(xs[static_cast<std::size_t>(i)]);
  return make_custom_op<S>("tanh", x.shape(), std::move(out), {x}, [](TensorNode<S>& self) {
    if (!self.parents[0]->requires_grad) return;
    auto g = Eigen::Map<const VecX<S>>(self.grad.data(), self.size());
    auto y = detail::value_vec(self);
    detail::grad_vec(*self.parents[0]).array() += g.array() * (S(1) - y.array().square());
  });
}

// ---------------------------------------------------------------------------
// reductions and rearrangement

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  return make_custom_op<S>("sum", Shape{}, {x.flat().sum()}, {x}, [](TensorNode<S>& self) {
    if (!self.parents[0]->requires_grad) return;
    detail::grad_vec(*self.parents[0]).array() += self.grad[0];
  });
}

template <typename S>
Tensor<S> mean_pool(const Tensor<S>& x, int axis) {
  if (x.rank() != 2 || (axis != 0 && axis != 1)) {
    throw ContractError("mean_pool: need a rank-2 tensor and axis 0 or 1, got " +
                        shape_str(x.shape()));
  }
  const Index m = x.dim(0), n = x.dim(1);
  if (axis == 0) {
    std::vector<S> out(static_cast<std::size_t>(n));
    Eigen::Map<VecX<S>>(out.data(), n) = x.mat().colwise().mean().transpose();
    return make_custom_op<S>("mean_pool", {n}, std::move(out), {x}, [m](TensorNode<S>& self) {
      if (!self.parents[0]->requires_grad) return;
      auto g = Eigen::Map<const VecX<S>>(self.grad.data(), self.size());
      detail::grad_mat(*self.parents[0]).rowwise() += (g / static_cast<S>(m)).transpose();
    });
  }
  std::vector<S> out(static_cast<std::size_t>(m));
  Eigen::Map<VecX<S>>(out.data(), m) = x.mat().rowwise().mean();
  return make_custom_op<S>("mean_pool", {m}, std::move(out), {x}, [n](TensorNode<S>& self) {
    if (!self.parents[0]->requires_grad) return;
    auto g = Eigen::Map<const VecX<S>>(self.grad.data(), self.size());
    detail::grad_mat(*self.parents[0]).colwise() += g / static_cast<S>(n);
  });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x) {
  if (x.rank() != 2) throw ContractError("transpose: need rank-2, got " + shape_str(x.shape()));
  const Index m = x.dim(0), n = x.dim(1);
  std::vector<S> out(static_cast<std::size_t>(m * n));
  Eigen::Map<RowMat<S>>(out.data(), n, m) = x.mat().transpose();
  return make_custom_op<S>("transpose", {n, m}, std::move(out), {x}, [](TensorNode<S>& self) {
    if (!self.parents[0]->requires_grad) return;
    auto g = Eigen::Map<const RowMat<S>>(self.grad.data(), self.shape[0], self.shape[1]);
    detail::grad_mat(*self.parents[0]) += g.transpose();
  });
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                     " changes element count");
  }
  std::vector<S> out(x.values().begin(), x.values().end());
  return make_custom_op<S>("reshape", std::move(shape), std::move(out), {x},
                           [](TensorNode<S>& self) {
                             if (!self.parents[0]->requires_grad) return;
                             auto g = Eigen::Map<const VecX<S>>(self.grad.data(), self.size());
                             detail::grad_vec(*self.parents[0]) += g;
                           });
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: empty input list");
  const Index rank = parts[0].rank();
  if ((rank == 1 && axis != 0) || (rank == 2 && axis != 0 && axis != 1) || rank > 2) {
    throw ContractError("concat: unsupported rank/axis combination");
  }
  if (rank == 1) {
    Index total = 0;
    for (const auto& p : parts) {
      if (p.rank() != 1) detail::shape_fail("concat", parts[0], p);
      total += p.size();
    }
    std::vector<S> out;
    out.reserve(static_cast<std::size_t>(total));
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    return make_custom_op<S>("concat", {total}, std::move(out), parts, [](TensorNode<S>& self) {
      Index at = 0;
      for (auto& p : self.parents) {
        if (p->requires_grad) {
          Eigen::Map<VecX<S>>(p->grad_acc(), p->size()) +=
              Eigen::Map<const VecX<S>>(self.grad.data() + at, p->size());
        }
        at += p->size();
      }
    });
  }
  const Index cols = parts[0].dim(1), rows = parts[0].dim(0);
  if (axis == 0) {
    Index total = 0;
    for (const auto& p : parts) {
      if (p.rank() != 2 || p.dim(1) != cols) detail::shape_fail("concat", parts[0], p);
      total += p.dim(0);
    }
    std::vector<S> out;
    out.reserve(static_cast<std::size_t>(total * cols));
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    return make_custom_op<S>("concat", {total, cols}, std::move(out), parts,
                             [](TensorNode<S>& self) {
                               Index at = 0;
                               for (auto& p : self.parents) {
                                 if (p->requires_grad) {
                                   Eigen::Map<VecX<S>>(p->grad_acc(), p->size()) +=
                                       Eigen::Map<const VecX<S>>(self.grad.data() + at, p->size());
                                 }
                                 at += p->size();
                               }
                             });
  }
  Index total_cols = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != rows) detail::shape_fail("concat", parts[0], p);
    total_cols += p.dim(1);
  }
  std::vector<S> out(static_cast<std::size_t>(rows * total_cols));
  Eigen::Map<RowMat<S>> om(out.data(), rows, total_cols);
  Index at = 0;
  for (const auto& p : parts) {
    om.middleCols(at, p.dim(1)) = p.mat();
    at += p.dim(1);
  }
  return make_custom_op<S>("concat", {rows, total_cols}, std::move(out), parts,
                           [](TensorNode<S>& self) {
                             auto g = Eigen::Map<const RowMat<S>>(self.grad.data(), self.shape[0],
                                                                  self.shape[1]);
                             Index c = 0;
                             for (auto& p : self.parents) {
                               if (p->requires_grad)
                                 detail::grad_mat(*p) += g.middleCols(c, p->shape[1]);
                               c += p->shape[1];
                             }
                           });
}

/// Stacks k rank-1 tensors of equal length into a [k, n] matrix (new axis 0).
template <typename S>
Tensor<S> stack(const std::vector<Tensor<S>>& rows) {
  if (rows.empty()) throw ContractError("stack: empty input list");
  const Index n = rows[0].size();
  for (const auto& r : rows) {
    if (r.rank() != 1 || r.size() != n) detail::shape_fail("stack", rows[0], r);
  }
  std::vector<S> out;
  out.reserve(static_cast<std::size_t>(n) * rows.size());
  for (const auto& r : rows) out.insert(out.end(), r.values().begin(), r.values().end());
  return make_custom_op<S>("stack", {static_cast<Index>(rows.size()), n}, std::move(out), rows,
                           [](TensorNode<S>& self) {
                             Index at = 0;
                             for (auto& p : self.parents) {
                               if (p->requires_grad) {
                                 Eigen::Map<VecX<S>>(p->grad_acc(), p->size()) +=
                                     Eigen::Map<const VecX<S>>(self.grad.data() + at, p->size());
                               }
                               at += p->size();
                             }
                           });
}

template <typename S>
Tensor<S> slice_rows(const Tensor<S>& x, Index first, Index count) {
  if (x.rank() != 2) throw ContractError("slice_rows: need rank-2, got " + shape_str(x.shape()));
  if (first < 0 || count < 1 || first + count > x.dim(0)) {
    throw ContractError("slice_rows: rows [" + std::to_string(first) + ", " +
                        std::to_string(first + count) + ") out of range for " +
                        shape_str(x.shape()));
  }
  const Index n = x.dim(1);
  std::vector<S> out(x.values().begin() + first * n, x.values().begin() + (first + count) * n);
  return make_custom_op<S>("slice_rows", {count, n}, std::move(out), {x},
                           [first](TensorNode<S>& self) {
                             auto& p = *self.parents[0];
                             if (!p.requires_grad) return;
                             auto g = Eigen::Map<const RowMat<S>>(self.grad.data(), self.shape[0],
                                                                  self.shape[1]);
                             detail::grad_mat(p).middleRows(first, self.shape[0]) += g;
                           });
}

/// Single row of a rank-2 tensor as a rank-1 tensor.
template <typename S>
Tensor<S> row(const Tensor<S>& x, Index r) {
  if (x.rank() != 2) throw ContractError("row: need rank-2, got " + shape_str(x.shape()));
  if (r < 0 || r >= x.dim(0)) {
    throw ContractError("row: index " + std::to_string(r) + " out of range for " +
                        shape_str(x.shape()));
  }
  const Index n = x.dim(1);
  std::vector<S> out(x.values().begin() + r * n, x.values().begin() + (r + 1) * n);
  return make_custom_op<S>("row", {n}, std::move(out), {x}, [r](TensorNode<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto g = Eigen::Map<const VecX<S>>(self.grad.data(), self.size());
    detail::grad_mat(p).row(r) += g.transpose();
  });
}

/// Single entry of a rank-1 tensor as a scalar tensor.
template <typename S>
Tensor<S> element(const Tensor<S>& x, Index i) {
  if (x.rank() != 1) throw ContractError("element: need rank-1, got " + shape_str(x.shape()));
  if (i < 0 || i >= x.size()) {
    throw ContractError("element: index " + std::to_string(i) + " out of range for " +
                        shape_str(x.shape()));
  }
  return make_custom_op<S>("element", Shape{}, {x.values()[static_cast<std::size_t>(i)]}, {x},
                           [i](TensorNode<S>& self) {
                             auto& p = *self.parents[0];
                             if (p.requires_grad) p.grad_acc()[i] += self.grad[0];
                           });
}

// ---------------------------------------------------------------------------
// layer normalization

/// Per-row normalization over the last axis: (x - mean) / sqrt(var + eps).
/// Rank-1 input is treated as a single row. Affine transforms are composed
/// from mul_rows/add_bias by callers that need them.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, double eps = 1e-5) {
  if (x.rank() != 1 && x.rank() != 2) {
    throw ContractError("layer_norm: need rank-1 or rank-2, got " + shape_str(x.shape()));
  }
  const Index rows = x.rank() == 2 ? x.dim(0) : 1;
  const Index n = x.rank() == 2 ? x.dim(1) : x.dim(0);
  std::vector<S> out(static_cast<std::size_t>(rows * n));
  std::vector<S> inv_std(static_cast<std::size_t>(rows));
  auto xm = Eigen::Map<const RowMat<S>>(x.values().data(), rows, n);
  auto om = Eigen::Map<RowMat<S>>(out.data(), rows, n);
  for (Index r = 0; r < rows; ++r) {
    const S mean = xm.row(r).mean();
    const S var = (xm.row(r).array() - mean).square().mean();
    const S inv = S(1) / std::sqrt(var + static_cast<S>(eps));
    inv_std[static_cast<std::size_t>(r)] = inv;
    om.row(r) = (xm.row(r).array() - mean) * inv;
  }
  return make_custom_op<S>(
      "layer_norm", x.shape(), std::move(out), {x},
      [rows, n, inv_std = std::move(inv_std)](TensorNode<S>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto g = Eigen::Map<const RowMat<S>>(self.grad.data(), rows, n);
        auto y = Eigen::Map<const RowMat<S>>(self.value.data(), rows, n);
        auto gx = Eigen::Map<RowMat<S>>(p.grad_acc(), rows, n);
        for (Index r = 0; r < rows; ++r) {
          const S gm = g.row(r).mean();
          const S gym = g.row(r).cwiseProduct(y.row(r)).mean();
          gx.row(r).array() += inv_std[static_cast<std::size_t>(r)] *
                               (g.row(r).array() - gm - y.row(r).array() * gym);
        }
      });
}

// ---------------------------------------------------------------------------
// softmax

namespace detail {

// Shared forward for the masked softmax rows. Mask handling per the additive
// surrogate scheme: +(-1e30) on masked logits, then exact zeroing of masked
// outputs after normalization.
template <typename S>
void masked_softmax_rows(const S* x, const bool* mask, S* y, Index rows, Index n) {
  constexpr S kNegHuge = S(-1e30);
  for (Index r = 0; r < rows; ++r) {
    const S* xr = x + r * n;
    const bool* mr = mask + r * n;
    S* yr = y + r * n;
    bool any = false;
    for (Index j = 0; j < n; ++j) any = any || mr[j];
    if (!any) {
      throw ContractError("masked_softmax: fully masked row " + std::to_string(r));
    }
    S zmax = std::numeric_limits<S>::lowest();
    for (Index j = 0; j < n; ++j) {
      const S z = mr[j] ? xr[j] : xr[j] + kNegHuge;
      zmax = std::max(zmax, z);
    }
    S sum = S(0);
    for (Index j = 0; j < n; ++j) {
      const S z = mr[j] ? xr[j] : xr[j] + kNegHuge;
      yr[j] = std::exp(z - zmax);
      sum += yr[j];
    }
    for (Index j = 0; j < n; ++j) yr[j] = mr[j] ? yr[j] / sum : S(0);
  }
}

template <typename S>
std::function<void(TensorNode<S>&)> softmax_pull(Index rows, Index n) {
  return [rows, n](TensorNode<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto g = Eigen::Map<const RowMat<S>>(self.grad.data(), rows, n);
    auto y = Eigen::Map<const RowMat<S>>(self.value.data(), rows, n);
    auto gx = Eigen::Map<RowMat<S>>(p.grad_acc(), rows, n);
    for (Index r = 0; r < rows; ++r) {
      const S dot = g.row(r).dot(y.row(r));
      gx.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
    }
  };
}

}  // namespace detail

/// Last-axis softmax with a boolean mask; masked entries come out exactly 0
/// and each row of surviving probabilities sums to 1.
template <typename S>
Tensor<S> masked_softmax(const Tensor<S>& logits, const BoolMat& mask) {
  if (logits.rank() != 2 || mask.rows() != logits.dim(0) || mask.cols() != logits.dim(1)) {
    throw ShapeError("masked_softmax: mask " + std::to_string(mask.rows()) + "x" +
                     std::to_string(mask.cols()) + " does not match logits " +
                     shape_str(logits.shape()));
  }
  const Index rows = logits.dim(0), n = logits.dim(1);
  std::vector<S> out(static_cast<std::size_t>(rows * n));
  detail::masked_softmax_rows(logits.values().data(), mask.data(), out.data(), rows, n);
  return make_custom_op<S>("masked_softmax", logits.shape(), std::move(out), {logits},
                           detail::softmax_pull<S>(rows, n));
}

template <typename S>
Tensor<S> masked_softmax(const Tensor<S>& logits, const BoolVec& mask) {
  if (logits.rank() != 1 || mask.size() != logits.size()) {
    throw ShapeError("masked_softmax: mask length " + std::to_string(mask.size()) +
                     " does not match logits " + shape_str(logits.shape()));
  }
  const Index n = logits.size();
  std::vector<S> out(static_cast<std::size_t>(n));
  detail::masked_softmax_rows(logits.values().data(), mask.data(), out.data(), 1, n);
  return make_custom_op<S>("masked_softmax", logits.shape(), std::move(out), {logits},
                           detail::softmax_pull<S>(1, n));
}

/// Unmasked softmax along the last axis.
template <typename S>
Tensor<S> softmax(const Tensor<S>& logits) {
  if (logits.rank() == 1) {
    const BoolVec all = BoolVec::Constant(logits.size(), true);
    return masked_softmax(logits, all);
  }
  const BoolMat all = BoolMat::Constant(logits.dim(0), logits.dim(1), true);
  return masked_softmax(logits, all);
}

// ---------------------------------------------------------------------------
// dilated convolution

/// 1-D acausal dilated convolution with zero padding; output length equals
/// input length. See detail::conv_offsets for the tap placement rule.
template <typename S>
Tensor<S> dilated_conv1d(const Tensor<S>& signal, const Tensor<S>& kernel, Index dilation) {
  if (signal.rank() != 1 || kernel.rank() != 1) detail::shape_fail("dilated_conv1d", signal, kernel);
  if (dilation < 1) throw ContractError("dilated_conv1d: dilation must be >= 1");
  const Index n = signal.size(), kw = kernel.size();
  const auto off = detail::conv_offsets(kw, dilation);
  std::vector<S> out(static_cast<std::size_t>(n), S(0));
  auto xs = signal.values();
  auto ks = kernel.values();
  for (Index i = 0; i < n; ++i) {
    S acc = S(0);
    for (Index j = 0; j < kw; ++j) {
      const Index src = i + off[static_cast<std::size_t>(j)];
      if (src >= 0 && src < n)
        acc += ks[static_cast<std::size_t>(j)] * xs[static_cast<std::size_t>(src)];
    }
    out[static_cast<std::size_t>(i)] = acc;
  }
  return make_custom_op<S>(
      "dilated_conv1d", {n}, std::move(out), {signal, kernel}, [off](TensorNode<S>& self) {
        auto& px = *self.parents[0];
        auto& pk = *self.parents[1];
        const Index n = px.size(), kw = pk.size();
        const S* g = self.grad.data();
        S* gx = px.requires_grad ? px.grad_acc() : nullptr;
        S* gk = pk.requires_grad ? pk.grad_acc() : nullptr;
        for (Index i = 0; i < n; ++i) {
          for (Index j = 0; j < kw; ++j) {
            const Index src = i + off[static_cast<std::size_t>(j)];
            if (src < 0 || src >= n) continue;
            if (gx) gx[src] += pk.value[static_cast<std::size_t>(j)] * g[i];
            if (gk) gk[j] += px.value[static_cast<std::size_t>(src)] * g[i];
          }
        }
      });
}

/// Column-wise dilated convolution of [m,C] with per-channel kernels [C,kw].
template <typename S>
Tensor<S> dilated_conv1d_per_channel(const Tensor<S>& x, const Tensor<S>& kernels,
                                     Index dilation) {
  if (x.rank() != 2 || kernels.rank() != 2 || kernels.dim(0) != x.dim(1)) {
    detail::shape_fail("dilated_conv1d_per_channel", x, kernels);
  }
  if (dilation < 1) throw ContractError("dilated_conv1d_per_channel: dilation must be >= 1");
  const Index m = x.dim(0), ch = x.dim(1), kw = kernels.dim(1);
  const auto off = detail::conv_offsets(kw, dilation);
  std::vector<S> out(static_cast<std::size_t>(m * ch), S(0));
  auto xm = x.mat();
  auto km = kernels.mat();
  Eigen::Map<RowMat<S>> om(out.data(), m, ch);
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < kw; ++j) {
      const Index src = i + off[static_cast<std::size_t>(j)];
      if (src < 0 || src >= m) continue;
      om.row(i).array() += km.col(j).transpose().array() * xm.row(src).array();
    }
  }
  return make_custom_op<S>(
      "dilated_conv1d_per_channel", x.shape(), std::move(out), {x, kernels},
      [off](TensorNode<S>& self) {
        auto& px = *self.parents[0];
        auto& pk = *self.parents[1];
        const Index m = px.shape[0], kw = pk.shape[1];
        auto g = Eigen::Map<const RowMat<S>>(self.grad.data(), self.shape[0], self.shape[1]);
        auto xm = detail::value_mat(px);
        auto km = detail::value_mat(pk);
        for (Index i = 0; i < m; ++i) {
          for (Index j = 0; j < kw; ++j) {
            const Index src = i + off[static_cast<std::size_t>(j)];
            if (src < 0 || src >= m) continue;
            if (px.requires_grad)
              detail::grad_mat(px).row(src).array() +=
                  km.col(j).transpose().array() * g.row(i).array();
            if (pk.requires_grad)
              detail::grad_mat(pk).col(j).array() +=
                  (xm.row(src).array() * g.row(i).array()).transpose();
          }
        }
      });
}

// ---------------------------------------------------------------------------
// weighted negative log-likelihood

/// mean_i  w_i * -log(max(p[i, y_i], floor)). The weights are constants (no
/// gradient flows through them); probabilities below the floor are clamped and
/// counted via `clamped` when provided.
template <typename S>
Tensor<S> nll_weighted(const Tensor<S>& probs, const std::vector<Index>& labels,
                       const std::vector<double>& weights, double floor = 1e-12,
                       long* clamped = nullptr) {
  if (probs.rank() != 2) {
    throw ContractError("nll_weighted: probs must be rank-2, got " + shape_str(probs.shape()));
  }
  const Index n = probs.dim(0), c = probs.dim(1);
  if (static_cast<Index>(labels.size()) != n || static_cast<Index>(weights.size()) != n) {
    throw ContractError("nll_weighted: labels/weights length must match batch size " +
                        std::to_string(n));
  }
  auto pm = probs.mat();
  std::vector<char> clamp_flags(static_cast<std::size_t>(n), 0);
  double acc = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Index y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c) {
      throw ContractError("nll_weighted: label " + std::to_string(y) + " out of range [0, " +
                          std::to_string(c) + ")");
    }
    double p = static_cast<double>(pm(i, y));
    if (p < floor) {
      p = floor;
      clamp_flags[static_cast<std::size_t>(i)] = 1;
      if (clamped) ++*clamped;
    }
    acc -= weights[static_cast<std::size_t>(i)] * std::log(p);
  }
  acc /= static_cast<double>(n);
  return make_custom_op<S>(
      "nll_weighted", Shape{}, {static_cast<S>(acc)}, {probs},
      [labels, weights, floor, clamp_flags](TensorNode<S>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        const Index n = p.shape[0];
        auto pv = detail::value_mat(p);
        auto gx = detail::grad_mat(p);
        const S g = self.grad[0];
        for (Index i = 0; i < n; ++i) {
          if (clamp_flags[static_cast<std::size_t>(i)]) continue;  // flat region
          const Index y = labels[static_cast<std::size_t>(i)];
          const double w = weights[static_cast<std::size_t>(i)];
          gx(i, y) -= g * static_cast<S>(w / (static_cast<double>(n) *
                                              std::max(static_cast<double>(pv(i, y)), floor)));
        }
      });
}

}  // namespace avfusion
