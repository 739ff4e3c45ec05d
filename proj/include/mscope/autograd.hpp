// Copyright 2026 The MotionScope Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Tape-free reverse-mode differentiation over whole tensors. Every op returns
// a Var whose node remembers its inputs and a closure that pushes the output
// gradient back to them. backward() walks the graph in reverse topological
// order.

#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <string>
#include <unordered_set>
#include <vector>

#include "mscope/tensor.hpp"

namespace mscope {

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node& self)>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;

  double* grad_buffer() {
    if (!requires_grad) return nullptr;
    if (grad.empty()) grad = Tensor(value.shape());
    return grad.mutable_data().data();
  }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph construction for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  /// Leaves only; mutating an interior node invalidates its consumers.
  Tensor& mutable_value() { return node_->value; }
  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  const Tensor& grad() const {
    if (node_->grad.empty()) node_->grad = Tensor(node_->value.shape());
    return node_->grad;
  }
  void zero_grad() { node_->grad = Tensor(); }

  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rank() const { return node_->value.rank(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  std::size_t size() const { return node_->value.size(); }
  double item() const {
    if (size() != 1) throw DimensionError("item() on " + shape_string(shape()));
    return node_->value[0];
  }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

inline Var constant(Tensor value) {
  auto n = std::make_shared<detail::Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

inline Var variable(Tensor value) {
  auto n = std::make_shared<detail::Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

namespace detail {

inline Var make_result(Tensor value, const char* op,
                       std::vector<std::shared_ptr<Node>> parents, BackwardFn fn) {
#ifndef NDEBUG
  value.require_finite(op);
#else
  (void)op;
#endif
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool needs = false;
  if (grad_mode()) {
    for (const auto& p : parents) needs = needs || p->requires_grad;
  }
  if (needs) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward = std::move(fn);
  }
  return Var(std::move(n));
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

// Splits `shape` around `axis` into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

inline double sigmoid_scalar(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
inline double softplus_scalar(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace detail

/// Runs reverse accumulation from a single-element `loss`.
inline void backward(const Var& loss) {
  if (loss.size() != 1) {
    throw DimensionError("backward() needs a scalar, got " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  auto an = a.node(), bn = b.node();
  return detail::make_result(Tensor::adopt(a.shape(), std::move(out)), "add", {an, bn},
                             [an, bn](detail::Node& self) {
                               const auto g = self.grad.data();
                               for (auto* n : {an.get(), bn.get()}) {
                                 if (double* d = n->grad_buffer()) {
                                   for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                                 }
                               }
                             });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  auto an = a.node(), bn = b.node();
  return detail::make_result(Tensor::adopt(a.shape(), std::move(out)), "sub", {an, bn},
                             [an, bn](detail::Node& self) {
                               const auto g = self.grad.data();
                               if (double* d = an->grad_buffer()) {
                                 for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                               }
                               if (double* d = bn->grad_buffer()) {
                                 for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
                               }
                             });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  auto an = a.node(), bn = b.node();
  return detail::make_result(Tensor::adopt(a.shape(), std::move(out)), "mul", {an, bn},
                             [an, bn](detail::Node& self) {
                               const auto g = self.grad.data();
                               if (double* d = an->grad_buffer()) {
                                 for (std::size_t i = 0; i < g.size(); ++i)
                                   d[i] += g[i] * bn->value[i];
                               }
                               if (double* d = bn->grad_buffer()) {
                                 for (std::size_t i = 0; i < g.size(); ++i)
                                   d[i] += g[i] * an->value[i];
                               }
                             });
}

inline Var scale(const Var& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * s;
  auto an = a.node();
  return detail::make_result(Tensor::adopt(a.shape(), std::move(out)), "scale", {an},
                             [an, s](detail::Node& self) {
                               const auto g = self.grad.data();
                               if (double* d = an->grad_buffer()) {
                                 for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * s;
                               }
                             });
}

/// x[..., C] + b[C], broadcast over all leading axes.
inline Var add_bias(const Var& x, const Var& b) {
  if (b.rank() != 1 || x.shape().back() != b.dim(0)) {
    throw DimensionError("add_bias: " + shape_string(x.shape()) + " with bias " +
                         shape_string(b.shape()));
  }
  const std::size_t c = b.dim(0);
  const std::size_t rows = x.size() / c;
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = x.value()[r * c + j] + b.value()[j];
  auto xn = x.node(), bn = b.node();
  return detail::make_result(Tensor::adopt(x.shape(), std::move(out)), "add_bias", {xn, bn},
                             [xn, bn, rows, c](detail::Node& self) {
                               const auto g = self.grad.data();
                               if (double* d = xn->grad_buffer()) {
                                 for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                               }
                               if (double* d = bn->grad_buffer()) {
                                 for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t j = 0; j < c; ++j) d[j] += g[r * c + j];
                               }
                             });
}

inline Var sigmoid(const Var& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::sigmoid_scalar(x.value()[i]);
  auto xn = x.node();
  return detail::make_result(Tensor::adopt(x.shape(), std::move(out)), "sigmoid", {xn},
                             [xn](detail::Node& self) {
                               double* d = xn->grad_buffer();
                               if (!d) return;
                               const auto g = self.grad.data();
                               const auto y = self.value.data();
                               for (std::size_t i = 0; i < g.size(); ++i)
                                 d[i] += g[i] * y[i] * (1.0 - y[i]);
                             });
}

/// Tanh-approximated GELU.
inline Var gelu(const Var& x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.value()[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(k * (v + c * v * v * v)));
  }
  auto xn = x.node();
  return detail::make_result(
      Tensor::adopt(x.shape(), std::move(out)), "gelu", {xn}, [xn](detail::Node& self) {
        double* d = xn->grad_buffer();
        if (!d) return;
        const auto g = self.grad.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double v = xn->value[i];
          const double u = k * (v + c * v * v * v);
          const double t = std::tanh(u);
          const double du = k * (1.0 + 3.0 * c * v * v);
          d[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
        }
      });
}

inline Var reciprocal(const Var& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / x.value()[i];
  auto xn = x.node();
  return detail::make_result(Tensor::adopt(x.shape(), std::move(out)), "reciprocal", {xn},
                             [xn](detail::Node& self) {
                               double* d = xn->grad_buffer();
                               if (!d) return;
                               const auto g = self.grad.data();
                               const auto y = self.value.data();
                               for (std::size_t i = 0; i < g.size(); ++i)
                                 d[i] -= g[i] * y[i] * y[i];
                             });
}

// ---------------------------------------------------------------------------
// Shape

inline Var reshape(const Var& x, Shape shape) {
  Tensor v = x.value().reshaped(std::move(shape));
  auto xn = x.node();
  return detail::make_result(std::move(v), "reshape", {xn}, [xn](detail::Node& self) {
    double* d = xn->grad_buffer();
    if (!d) return;
    const auto g = self.grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

/// Gathers slices of the leading axis: out[r] = x[indices[r]].
inline Var select_rows(const Var& x, std::vector<std::size_t> indices) {
  if (indices.empty()) throw DimensionError("select_rows: empty index list");
  const std::size_t rows = x.dim(0);
  const std::size_t len = x.size() / rows;
  std::vector<double> out(indices.size() * len);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= rows) {
      throw DimensionError("select_rows: index " + std::to_string(indices[r]) +
                           " out of range for " + shape_string(x.shape()));
    }
    std::copy_n(x.value().data().data() + indices[r] * len, len, out.data() + r * len);
  }
  Shape shape = x.shape();
  shape[0] = indices.size();
  auto xn = x.node();
  return detail::make_result(Tensor::adopt(std::move(shape), std::move(out)), "select_rows",
                             {xn}, [xn, idx = std::move(indices), len](detail::Node& self) {
                               double* d = xn->grad_buffer();
                               if (!d) return;
                               const auto g = self.grad.data();
                               for (std::size_t r = 0; r < idx.size(); ++r)
                                 for (std::size_t j = 0; j < len; ++j)
                                   d[idx[r] * len + j] += g[r * len + j];
                             });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  auto xn = x.node();
  return detail::make_result(Tensor::adopt({1}, {s}), "sum", {xn}, [xn](detail::Node& self) {
    double* d = xn->grad_buffer();
    if (!d) return;
    const double g = self.grad[0];
    for (std::size_t i = 0; i < xn->value.size(); ++i) d[i] += g;
  });
}

inline Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

/// Sums out `axis`; the axis is removed from the result shape (a rank-1 input
/// reduces to shape {1}).
inline Var sum_axis(const Var& x, std::size_t axis) {
  const auto s = detail::split_axis(x.shape(), axis);
  std::vector<double> out(s.outer * s.inner, 0.0);
  const auto v = x.value().data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t a = 0; a < s.extent; ++a)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += v[(o * s.extent + a) * s.inner + i];
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (shape.empty()) shape = {1};
  auto xn = x.node();
  return detail::make_result(Tensor::adopt(std::move(shape), std::move(out)), "sum_axis", {xn},
                             [xn, s](detail::Node& self) {
                               double* d = xn->grad_buffer();
                               if (!d) return;
                               const auto g = self.grad.data();
                               for (std::size_t o = 0; o < s.outer; ++o)
                                 for (std::size_t a = 0; a < s.extent; ++a)
                                   for (std::size_t i = 0; i < s.inner; ++i)
                                     d[(o * s.extent + a) * s.inner + i] += g[o * s.inner + i];
                             });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// op(a) * op(b) for rank-2 or rank-3 operands. A rank-2 operand paired with a
/// rank-3 one is shared across the batch. `ta`/`tb` transpose the trailing
/// two axes.
inline Var matmul(const Var& a, const Var& b, bool ta = false, bool tb = false) {
  if (a.rank() < 2 || a.rank() > 3 || b.rank() < 2 || b.rank() > 3) {
    throw DimensionError("matmul: unsupported ranks " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const bool a3 = a.rank() == 3, b3 = b.rank() == 3;
  const std::size_t batch = a3 ? a.dim(0) : (b3 ? b.dim(0) : 1);
  if (a3 && b3 && a.dim(0) != b.dim(0)) {
    throw DimensionError("matmul: batch mismatch " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const std::size_t ar = a.shape()[a.rank() - 2], ac = a.shape()[a.rank() - 1];
  const std::size_t br = b.shape()[b.rank() - 2], bc = b.shape()[b.rank() - 1];
  const std::size_t m = ta ? ac : ar, k = ta ? ar : ac;
  const std::size_t kb = tb ? bc : br, n = tb ? br : bc;
  if (k != kb) {
    throw DimensionError("matmul: inner extents differ, " + shape_string(a.shape()) +
                         (ta ? "^T" : "") + " x " + shape_string(b.shape()) + (tb ? "^T" : ""));
  }
  if (a3 && !b3 && !ta) {
    // A shared right operand: one gemm over the stacked rows of a.
    const std::size_t rows = batch * m;
    std::vector<double> out(rows * n);
    kernel::gemm(false, tb, rows, n, k, a.value().data().data(), b.value().data().data(),
                 out.data(), false);
    auto an = a.node(), bn = b.node();
    return detail::make_result(
        Tensor::adopt({batch, m, n}, std::move(out)), "matmul", {an, bn},
        [an, bn, tb, rows, n, k](detail::Node& self) {
          const double* g = self.grad.data().data();
          if (double* da = an->grad_buffer()) {
            kernel::gemm(false, !tb, rows, k, n, g, bn->value.data().data(), da, true);
          }
          if (double* db = bn->grad_buffer()) {
            if (!tb) {
              kernel::gemm(true, false, k, n, rows, an->value.data().data(), g, db, true);
            } else {
              kernel::gemm(true, false, n, k, rows, g, an->value.data().data(), db, true);
            }
          }
        });
  }
  const std::size_t a_stride = a3 ? m * k : 0, b_stride = b3 ? k * n : 0;
  std::vector<double> out(batch * m * n);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    kernel::gemm(ta, tb, m, n, k, a.value().data().data() + bi * a_stride,
                 b.value().data().data() + bi * b_stride, out.data() + bi * m * n, false);
  }
  Shape shape = (a3 || b3) ? Shape{batch, m, n} : Shape{m, n};
  auto an = a.node(), bn = b.node();
  return detail::make_result(
      Tensor::adopt(std::move(shape), std::move(out)), "matmul", {an, bn},
      [an, bn, ta, tb, m, n, k, batch, a_stride, b_stride](detail::Node& self) {
        const double* g = self.grad.data().data();
        double* da = an->grad_buffer();
        double* db = bn->grad_buffer();
        const double* av = an->value.data().data();
        const double* bv = bn->value.data().data();
        for (std::size_t bi = 0; bi < batch; ++bi) {
          const double* gb = g + bi * m * n;
          if (da) {
            if (!ta) {
              kernel::gemm(false, !tb, m, k, n, gb, bv + bi * b_stride, da + bi * a_stride, true);
            } else {
              kernel::gemm(tb, true, k, m, n, bv + bi * b_stride, gb, da + bi * a_stride, true);
            }
          }
          if (db) {
            if (!tb) {
              kernel::gemm(!ta, false, k, n, m, av + bi * a_stride, gb, db + bi * b_stride, true);
            } else {
              kernel::gemm(true, ta, n, k, m, gb, av + bi * a_stride, db + bi * b_stride, true);
            }
          }
        }
      });
}

/// Max-subtracted softmax along `axis`.
inline Var softmax(const Var& x, std::size_t axis) {
  const auto s = detail::split_axis(x.shape(), axis);
  const auto v = x.value().data();
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = v[base];
      for (std::size_t a = 1; a < s.extent; ++a) mx = std::max(mx, v[base + a * s.inner]);
      double z = 0.0;
      for (std::size_t a = 0; a < s.extent; ++a) {
        const double e = std::exp(v[base + a * s.inner] - mx);
        out[base + a * s.inner] = e;
        z += e;
      }
      for (std::size_t a = 0; a < s.extent; ++a) out[base + a * s.inner] /= z;
    }
  }
  auto xn = x.node();
  return detail::make_result(
      Tensor::adopt(x.shape(), std::move(out)), "softmax", {xn}, [xn, s](detail::Node& self) {
        double* d = xn->grad_buffer();
        if (!d) return;
        const auto g = self.grad.data();
        const auto y = self.value.data();
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.extent * s.inner + i;
            double dot = 0.0;
            for (std::size_t a = 0; a < s.extent; ++a)
              dot += g[base + a * s.inner] * y[base + a * s.inner];
            for (std::size_t a = 0; a < s.extent; ++a) {
              const std::size_t idx = base + a * s.inner;
              d[idx] += y[idx] * (g[idx] - dot);
            }
          }
        }
      });
}

/// Layer normalization over the last axis with affine gain and shift.
inline Var layer_norm(const Var& x, const Var& gain, const Var& shift, double eps = 1e-5) {
  const std::size_t c = x.shape().back();
  if (gain.size() != c || shift.size() != c) {
    throw DimensionError("layer_norm: " + shape_string(x.shape()) + " with gain " +
                         shape_string(gain.shape()));
  }
  const std::size_t rows = x.size() / c;
  std::vector<double> out(x.size()), xhat(x.size()), inv_std(rows);
  const auto v = x.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += v[r * c + j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (v[r * c + j] - mu) * (v[r * c + j] - mu);
    var /= static_cast<double>(c);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[r * c + j] = (v[r * c + j] - mu) * inv_std[r];
      out[r * c + j] = xhat[r * c + j] * gain.value()[j] + shift.value()[j];
    }
  }
  auto xn = x.node(), gn = gain.node(), sn = shift.node();
  return detail::make_result(
      Tensor::adopt(x.shape(), std::move(out)), "layer_norm", {xn, gn, sn},
      [xn, gn, sn, rows, c, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](detail::Node& self) {
        const auto g = self.grad.data();
        double* dx = xn->grad_buffer();
        double* dg = gn->grad_buffer();
        double* ds = sn->grad_buffer();
        const double cd = static_cast<double>(c);
        for (std::size_t r = 0; r < rows; ++r) {
          double sum_gy = 0.0, sum_gy_xhat = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            const double gy = g[r * c + j] * gn->value[j];
            sum_gy += gy;
            sum_gy_xhat += gy * xhat[r * c + j];
            if (dg) dg[j] += g[r * c + j] * xhat[r * c + j];
            if (ds) ds[j] += g[r * c + j];
          }
          if (dx) {
            for (std::size_t j = 0; j < c; ++j) {
              const double gy = g[r * c + j] * gn->value[j];
              dx[r * c + j] +=
                  inv_std[r] * (gy - sum_gy / cd - xhat[r * c + j] * sum_gy_xhat / cd);
            }
          }
        }
      });
}

/// Multiplies each row x[..., r, :] by s[..., r].
inline Var scale_rows(const Var& x, const Var& s) {
  const std::size_t rows = s.size();
  if (rows == 0 || x.size() % rows != 0 || x.rank() != s.rank() + 1) {
    throw DimensionError("scale_rows: " + shape_string(x.shape()) + " by " +
                         shape_string(s.shape()));
  }
  const std::size_t len = x.size() / rows;
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < len; ++j) out[r * len + j] = x.value()[r * len + j] * s.value()[r];
  auto xn = x.node(), sn = s.node();
  return detail::make_result(Tensor::adopt(x.shape(), std::move(out)), "scale_rows", {xn, sn},
                             [xn, sn, rows, len](detail::Node& self) {
                               const auto g = self.grad.data();
                               double* dx = xn->grad_buffer();
                               double* ds = sn->grad_buffer();
                               for (std::size_t r = 0; r < rows; ++r) {
                                 double acc = 0.0;
                                 for (std::size_t j = 0; j < len; ++j) {
                                   if (dx) dx[r * len + j] += g[r * len + j] * sn->value[r];
                                   acc += g[r * len + j] * xn->value[r * len + j];
                                 }
                                 if (ds) ds[r] += acc;
                               }
                             });
}

/// Weighted average of adjacent token pairs along the second-to-last axis:
/// out[..., j, :] = (w[2j] x[2j] + w[2j+1] x[2j+1]) / (w[2j] + w[2j+1]).
inline Var pair_merge(const Var& x, const Var& w) {
  if (x.rank() < 2 || w.rank() != x.rank() - 1) {
    throw DimensionError("pair_merge: " + shape_string(x.shape()) + " with weights " +
                         shape_string(w.shape()));
  }
  const std::size_t t = x.shape()[x.rank() - 2];
  const std::size_t c = x.shape().back();
  if (w.shape().back() != t || w.size() * c != x.size()) {
    throw DimensionError("pair_merge: weights " + shape_string(w.shape()) +
                         " do not index tokens of " + shape_string(x.shape()));
  }
  if (t % 2 != 0) {
    throw std::logic_error("pair_merge: odd temporal length " + std::to_string(t));
  }
  const std::size_t groups = w.size() / t;
  const std::size_t half = t / 2;
  std::vector<double> out(groups * half * c);
  const auto xv = x.value().data();
  const auto wv = w.value().data();
  for (std::size_t gi = 0; gi < groups; ++gi) {
    for (std::size_t j = 0; j < half; ++j) {
      const double wa = wv[gi * t + 2 * j], wb = wv[gi * t + 2 * j + 1];
      const double denom = wa + wb;
      const double* xa = xv.data() + (gi * t + 2 * j) * c;
      const double* xb = xa + c;
      double* o = out.data() + (gi * half + j) * c;
      for (std::size_t k = 0; k < c; ++k) o[k] = (wa * xa[k] + wb * xb[k]) / denom;
    }
  }
  Shape shape = x.shape();
  shape[shape.size() - 2] = half;
  auto xn = x.node(), wn = w.node();
  return detail::make_result(
      Tensor::adopt(std::move(shape), std::move(out)), "pair_merge", {xn, wn},
      [xn, wn, groups, t, half, c](detail::Node& self) {
        const auto g = self.grad.data();
        const auto y = self.value.data();
        double* dx = xn->grad_buffer();
        double* dw = wn->grad_buffer();
        for (std::size_t gi = 0; gi < groups; ++gi) {
          for (std::size_t j = 0; j < half; ++j) {
            const std::size_t ia = gi * t + 2 * j;
            const double wa = wn->value[ia], wb = wn->value[ia + 1];
            const double denom = wa + wb;
            const double* go = g.data() + (gi * half + j) * c;
            const double* yo = y.data() + (gi * half + j) * c;
            double dwa = 0.0, dwb = 0.0;
            for (std::size_t k = 0; k < c; ++k) {
              const double xa = xn->value[ia * c + k], xb = xn->value[(ia + 1) * c + k];
              if (dx) {
                dx[ia * c + k] += go[k] * wa / denom;
                dx[(ia + 1) * c + k] += go[k] * wb / denom;
              }
              dwa += go[k] * (xa - yo[k]);
              dwb += go[k] * (xb - yo[k]);
            }
            if (dw) {
              dw[ia] += dwa / denom;
              dw[ia + 1] += dwb / denom;
            }
          }
        }
      });
}

/// x / (||x|| + eps) along the last axis.
inline Var l2_normalize(const Var& x, double eps = 1e-12) {
  const std::size_t c = x.shape().back();
  const std::size_t rows = x.size() / c;
  std::vector<double> out(x.size()), norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += x.value()[r * c + j] * x.value()[r * c + j];
    norms[r] = std::sqrt(s);
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = x.value()[r * c + j] / (norms[r] + eps);
  }
  auto xn = x.node();
  return detail::make_result(
      Tensor::adopt(x.shape(), std::move(out)), "l2_normalize", {xn},
      [xn, rows, c, eps, norms = std::move(norms)](detail::Node& self) {
        double* d = xn->grad_buffer();
        if (!d) return;
        const auto g = self.grad.data();
        for (std::size_t r = 0; r < rows; ++r) {
          const double n = norms[r];
          const double den = n + eps;
          double xg = 0.0;
          for (std::size_t j = 0; j < c; ++j) xg += xn->value[r * c + j] * g[r * c + j];
          const double coeff = n > 0.0 ? xg / (n * den * den) : 0.0;
          for (std::size_t j = 0; j < c; ++j)
            d[r * c + j] += g[r * c + j] / den - xn->value[r * c + j] * coeff;
        }
      });
}

// ---------------------------------------------------------------------------
// Fused losses. Targets are constants.

/// Mean binary cross-entropy of sigmoid(logits) against targets in [0, 1].
inline Var bce_with_logits(const Var& logits, const Tensor& targets) {
  if (logits.shape() != targets.shape()) {
    throw DimensionError("bce_with_logits: " + shape_string(logits.shape()) + " vs " +
                         shape_string(targets.shape()));
  }
  const std::size_t n = logits.size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = logits.value()[i];
    s += detail::softplus_scalar(z) - z * targets[i];
  }
  auto zn = logits.node();
  return detail::make_result(Tensor::adopt({1}, {s / static_cast<double>(n)}), "bce", {zn},
                             [zn, targets, n](detail::Node& self) {
                               double* d = zn->grad_buffer();
                               if (!d) return;
                               const double g = self.grad[0] / static_cast<double>(n);
                               for (std::size_t i = 0; i < n; ++i)
                                 d[i] += g * (detail::sigmoid_scalar(zn->value[i]) - targets[i]);
                             });
}

/// 1 - (2 sum(p t) + 1) / (sum(p) + sum(t) + 1) with p = sigmoid(logits).
inline Var dice_loss(const Var& logits, const Tensor& targets) {
  if (logits.shape() != targets.shape()) {
    throw DimensionError("dice_loss: " + shape_string(logits.shape()) + " vs " +
                         shape_string(targets.shape()));
  }
  const std::size_t n = logits.size();
  std::vector<double> p(n);
  double inter = 0.0, sp = 0.0, st = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = detail::sigmoid_scalar(logits.value()[i]);
    inter += p[i] * targets[i];
    sp += p[i];
    st += targets[i];
  }
  const double num = 2.0 * inter + 1.0;
  const double den = sp + st + 1.0;
  auto zn = logits.node();
  return detail::make_result(Tensor::adopt({1}, {1.0 - num / den}), "dice", {zn},
                             [zn, targets, p = std::move(p), num, den](detail::Node& self) {
                               double* d = zn->grad_buffer();
                               if (!d) return;
                               const double g = self.grad[0];
                               for (std::size_t i = 0; i < p.size(); ++i) {
                                 const double dp = -(2.0 * targets[i] * den - num) / (den * den);
                                 d[i] += g * dp * p[i] * (1.0 - p[i]);
                               }
                             });
}

/// -log softmax over {a.m+, a.m-_1, ...} / tau at the positive entry.
/// `negatives` may be empty (loss 0). Bank vectors are constants.
inline Var info_nce(const Var& anchor, const Tensor& positive, const Tensor& negatives,
                    double tau) {
  const std::size_t c = anchor.size();
  if (positive.size() != c || (!negatives.empty() && negatives.shape().back() != c)) {
    throw DimensionError("info_nce: anchor " + shape_string(anchor.shape()) + ", positive " +
                         shape_string(positive.shape()) + ", negatives " +
                         shape_string(negatives.shape()));
  }
  if (!(tau > 0.0)) throw InputError("info_nce: temperature must be positive");
  const std::size_t nn = negatives.empty() ? 0 : negatives.size() / c;
  std::vector<double> logits(nn + 1);
  const auto a = anchor.value().data();
  auto dot = [&](const double* m) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += a[j] * m[j];
    return s / tau;
  };
  logits[0] = dot(positive.data().data());
  for (std::size_t i = 0; i < nn; ++i) logits[i + 1] = dot(negatives.data().data() + i * c);
  const double mx = *std::max_element(logits.begin(), logits.end());
  double rest = 0.0;
  for (std::size_t i = 1; i <= nn; ++i) rest += std::exp(logits[i] - mx);
  const double z = rest + std::exp(logits[0] - mx);
  // log1p keeps precision when the positive dominates.
  const double loss = logits[0] == mx ? std::log1p(rest) : mx + std::log(z) - logits[0];
  std::vector<double> prob(nn + 1);
  for (std::size_t i = 0; i <= nn; ++i) prob[i] = std::exp(logits[i] - mx) / z;
  auto an = anchor.node();
  return detail::make_result(Tensor::adopt({1}, {loss}), "info_nce", {an},
                             [an, positive, negatives, prob = std::move(prob), c, nn,
                              tau](detail::Node& self) {
                               double* d = an->grad_buffer();
                               if (!d) return;
                               const double g = self.grad[0] / tau;
                               for (std::size_t j = 0; j < c; ++j) {
                                 double s = (prob[0] - 1.0) * positive[j];
                                 for (std::size_t i = 0; i < nn; ++i)
                                   s += prob[i + 1] * negatives[i * c + j];
                                 d[j] += g * s;
                               }
                             });
}

}  // namespace mscope
