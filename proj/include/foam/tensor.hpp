#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "foam/common.hpp"
#include "foam/rng.hpp"

namespace foam {

namespace detail {

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated when gradients can reach this node
  bool requires_grad = false;
  bool retain_grad = false;  // keep adjoint after backward even if non-leaf
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this node's accumulated adjoint (self.grad) and adds the
  // contributions into the parents' grad buffers.
  std::function<void(TensorNode& self)> backprop;

  bool is_leaf() const { return !backprop; }
};

template <typename T>
inline void check_finite(const std::vector<T>& data, const char* op) {
  for (const T& v : data) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw NumericError(std::string("non-finite value produced by op '") + op + "'");
    }
  }
}

}  // namespace detail

/// Dense row-major tensor with optional reverse-mode gradient tracking.
/// Copying a Tensor is cheap and aliases the underlying node; use clone()
/// for an independent copy.
template <typename T>
class Tensor {
 public:
  using Node = detail::TensorNode<T>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }

  static Tensor ones(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), T(1), requires_grad);
  }

  static Tensor filled(Shape shape, T value, bool requires_grad = false) {
    auto node = std::make_shared<Node>();
    node->data.assign(numel(shape), value);
    node->shape = std::move(shape);
    set_leaf_grad(*node, requires_grad);
    return Tensor(std::move(node));
  }

  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (numel(shape) != data.size()) {
      throw ShapeError("from_data: shape " + shape_str(shape) + " does not match " +
                       std::to_string(data.size()) + " values");
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    set_leaf_grad(*node, requires_grad);
    return Tensor(std::move(node));
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from_data({1}, {value}, requires_grad);
  }

  static Tensor randn(Shape shape, Rng& rng, bool requires_grad = false) {
    std::vector<T> data(numel(shape));
    for (T& v : data) v = static_cast<T>(rng.normal(0.0, 1.0));
    return from_data(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor uniform(Shape shape, T lo, T hi, Rng& rng, bool requires_grad = false) {
    std::vector<T> data(numel(shape));
    for (T& v : data) v = static_cast<T>(rng.uniform(lo, hi));
    return from_data(std::move(shape), std::move(data), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  std::vector<T>& values() { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }

  /// Gradient buffer; empty until a backward pass has reached this tensor.
  std::vector<T>& grad() { return node_->grad; }
  const std::vector<T>& grad() const { return node_->grad; }

  void zero_grad() {
    if (node_->grad.empty()) node_->grad.assign(node_->data.size(), T(0));
    std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  /// Keep this (possibly intermediate) tensor's adjoint after backward.
  void retain_grad() { node_->retain_grad = true; }

  T item() const {
    if (size() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not scalar");
    return node_->data[0];
  }

  /// A leaf copy sharing no graph history. Values are copied; gradients do
  /// not flow across the boundary.
  Tensor detach() const {
    auto node = std::make_shared<Node>();
    node->shape = node_->shape;
    node->data = node_->data;
    node->op = "detach";
    return Tensor(std::move(node));
  }

  Tensor clone() const {
    auto node = std::make_shared<Node>();
    node->shape = node_->shape;
    node->data = node_->data;
    node->requires_grad = node_->requires_grad;
    if (node->requires_grad) node->grad.assign(node->data.size(), T(0));
    return Tensor(std::move(node));
  }

  /// Reverse-mode sweep from a scalar. Parameter (leaf) gradients accumulate
  /// additively across calls; intermediate adjoints are transient.
  void backward() const {
    if (size() != 1) {
      throw ShapeError("backward: loss must be scalar, got " + shape_str(shape()));
    }
    if (!std::isfinite(static_cast<double>(node_->data[0]))) {
      throw NumericError("backward: loss is not finite");
    }
    if (!node_->requires_grad) return;

    std::vector<Node*> order;  // post-order: inputs before consumers
    topo_sort(node_.get(), order);

    for (Node* n : order) {
      if (n->requires_grad && n->grad.empty()) n->grad.assign(n->data.size(), T(0));
    }
    node_->grad[0] += T(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->requires_grad && n->backprop) n->backprop(*n);
    }
    // Drop transient adjoints so a later backward starts clean.
    for (Node* n : order) {
      if (!n->is_leaf() && !n->retain_grad) {
        n->grad.clear();
        n->grad.shrink_to_fit();
      }
    }
  }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  static void set_leaf_grad(Node& node, bool requires_grad) {
    node.requires_grad = requires_grad;
    if (requires_grad) node.grad.assign(node.data.size(), T(0));
  }

  static void topo_sort(Node* root, std::vector<Node*>& out) {
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node* parent = node->parents[next++].get();
        if (visited.insert(parent).second) stack.emplace_back(parent, 0);
      } else {
        out.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<Node> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

namespace detail {

template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> data, const char* op,
                  std::vector<Tensor<T>> parents,
                  std::function<void(TensorNode<T>&)> backprop) {
  check_finite(data, op);
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool rg = false;
  for (const auto& p : parents) rg = rg || p.requires_grad();
  node->requires_grad = rg;
  if (rg) {
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_ptr());
    node->backprop = std::move(backprop);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
inline void acc_grad(TensorNode<T>& parent, std::size_t i, T v) {
  if (parent.requires_grad) parent.grad[i] += v;
}

// Broadcast layout under the leading-1 rule: after stripping leading unit
// extents, the smaller shape must be a suffix of the larger one.
struct BroadcastPlan {
  bool a_is_small = false;
  std::size_t small_n = 0;
  std::size_t out_n = 0;
};

inline Shape strip_leading_ones(const Shape& s) {
  std::size_t i = 0;
  while (i + 1 < s.size() && s[i] == 1) ++i;
  return Shape(s.begin() + static_cast<std::ptrdiff_t>(i), s.end());
}

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

template <typename T>
BroadcastPlan broadcast_plan(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  BroadcastPlan plan;
  if (a.shape() == b.shape()) {
    plan.small_n = a.size();
    plan.out_n = a.size();
    return plan;
  }
  Shape sa = strip_leading_ones(a.shape());
  Shape sb = strip_leading_ones(b.shape());
  if (b.size() == 1 || is_suffix(sb, sa)) {
    plan.a_is_small = false;
    plan.small_n = b.size();
    plan.out_n = a.size();
  } else if (a.size() == 1 || is_suffix(sa, sb)) {
    plan.a_is_small = true;
    plan.small_n = a.size();
    plan.out_n = b.size();
  } else {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " are not broadcastable (leading-1 rule)");
  }
  if (plan.small_n == 0 || plan.out_n % plan.small_n != 0) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " are not broadcastable (leading-1 rule)");
  }
  return plan;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  auto plan = detail::broadcast_plan(a, b, "add");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(plan.out_n);
  const std::size_t an = av.size(), bn = bv.size();
  for (std::size_t i = 0; i < plan.out_n; ++i) out[i] = av[i % an] + bv[i % bn];
  Shape out_shape = plan.a_is_small ? b.shape() : a.shape();
  return detail::make_op<T>(
      std::move(out_shape), std::move(out), "add", {a, b},
      [an, bn](detail::TensorNode<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          detail::acc_grad(pa, i % an, self.grad[i]);
          detail::acc_grad(pb, i % bn, self.grad[i]);
        }
      });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  auto plan = detail::broadcast_plan(a, b, "sub");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(plan.out_n);
  const std::size_t an = av.size(), bn = bv.size();
  for (std::size_t i = 0; i < plan.out_n; ++i) out[i] = av[i % an] - bv[i % bn];
  Shape out_shape = plan.a_is_small ? b.shape() : a.shape();
  return detail::make_op<T>(
      std::move(out_shape), std::move(out), "sub", {a, b},
      [an, bn](detail::TensorNode<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          detail::acc_grad(pa, i % an, self.grad[i]);
          detail::acc_grad(pb, i % bn, -self.grad[i]);
        }
      });
}

/// Hadamard product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  auto plan = detail::broadcast_plan(a, b, "mul");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(plan.out_n);
  const std::size_t an = av.size(), bn = bv.size();
  for (std::size_t i = 0; i < plan.out_n; ++i) out[i] = av[i % an] * bv[i % bn];
  Shape out_shape = plan.a_is_small ? b.shape() : a.shape();
  return detail::make_op<T>(
      std::move(out_shape), std::move(out), "mul", {a, b},
      [an, bn](detail::TensorNode<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          detail::acc_grad(pa, i % an, self.grad[i] * pb.data[i % bn]);
          detail::acc_grad(pb, i % bn, self.grad[i] * pa.data[i % an]);
        }
      });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  auto plan = detail::broadcast_plan(a, b, "div");
  const auto& av = a.values();
  const auto& bv = b.values();
  for (const T& v : bv) {
    if (v == T(0)) throw ValueError("div: division by zero");
  }
  std::vector<T> out(plan.out_n);
  const std::size_t an = av.size(), bn = bv.size();
  for (std::size_t i = 0; i < plan.out_n; ++i) out[i] = av[i % an] / bv[i % bn];
  Shape out_shape = plan.a_is_small ? b.shape() : a.shape();
  return detail::make_op<T>(
      std::move(out_shape), std::move(out), "div", {a, b},
      [an, bn](detail::TensorNode<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const T bi = pb.data[i % bn];
          detail::acc_grad(pa, i % an, self.grad[i] / bi);
          detail::acc_grad(pb, i % bn, -self.grad[i] * pa.data[i % an] / (bi * bi));
        }
      });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  std::vector<T> out(a.values());
  for (T& v : out) v += c;
  return detail::make_op<T>(a.shape(), std::move(out), "add_scalar", {a},
                            [](detail::TensorNode<T>& self) {
                              auto& p = *self.parents[0];
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                detail::acc_grad(p, i, self.grad[i]);
                            });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
  std::vector<T> out(a.values());
  for (T& v : out) v *= c;
  return detail::make_op<T>(a.shape(), std::move(out), "mul_scalar", {a},
                            [c](detail::TensorNode<T>& self) {
                              auto& p = *self.parents[0];
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                detail::acc_grad(p, i, self.grad[i] * c);
                            });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return mul_scalar(a, T(-1));
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

// ---------------------------------------------------------------------------
// Elementwise nonlinearities
// ---------------------------------------------------------------------------

namespace detail {

template <typename T, typename F, typename DF>
Tensor<T> unary_op(const Tensor<T>& a, const char* op, F fwd, DF dfwd) {
  const auto& av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  return make_op<T>(a.shape(), std::move(out), op, {a},
                    [dfwd](TensorNode<T>& self) {
                      auto& p = *self.parents[0];
                      if (!p.requires_grad) return;
                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                        p.grad[i] += self.grad[i] * dfwd(p.data[i], self.data[i]);
                    });
}

}  // namespace detail

template <typename T>
Tensor<T> exp_(const Tensor<T>& a) {
  return detail::unary_op(
      a, "exp", [](T x) { return std::exp(x); },
      [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log_(const Tensor<T>& a) {
  for (const T& v : a.values()) {
    if (v <= T(0)) throw ValueError("log: nonpositive input");
  }
  return detail::unary_op(
      a, "log", [](T x) { return std::log(x); },
      [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary_op(
      a, "relu", [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary_op(
      a, "sigmoid",
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

/// Exact Gaussian-CDF GELU: x * Phi(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  return detail::unary_op(
      a, "gelu",
      [](T x) {
        const double xd = static_cast<double>(x);
        return static_cast<T>(xd * 0.5 * (1.0 + std::erf(xd * inv_sqrt2)));
      },
      [](T x, T) {
        const double xd = static_cast<double>(x);
        const double phi = 0.5 * (1.0 + std::erf(xd * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * xd * xd);
        return static_cast<T>(phi + xd * pdf);
      });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  if (!(lo <= hi)) throw ValueError("clamp: lo > hi");
  return detail::unary_op(
      a, "clamp",
      [lo, hi](T x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sin_(const Tensor<T>& a) {
  return detail::unary_op(
      a, "sin", [](T x) { return std::sin(x); },
      [](T x, T) { return std::cos(x); });
}

template <typename T>
Tensor<T> cos_(const Tensor<T>& a) {
  return detail::unary_op(
      a, "cos", [](T x) { return std::cos(x); },
      [](T x, T) { return -std::sin(x); });
}

// ---------------------------------------------------------------------------
// Reductions, shaping, linear algebra
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = T(0);
  for (const T& v : a.values()) s += v;
  return detail::make_op<T>({1}, {s}, "sum", {a}, [](detail::TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    const T g = self.grad[0];
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  const T inv_n = T(1) / static_cast<T>(a.size());
  return mul_scalar(sum(a), inv_n);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  return detail::make_op<T>(std::move(shape), a.values(), "reshape", {a},
                            [](detail::TensorNode<T>& self) {
                              auto& p = *self.parents[0];
                              if (!p.requires_grad) return;
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                p.grad[i] += self.grad[i];
                            });
}

/// Sub-block [offset, offset+len) along axis 0. Contiguous in row-major.
template <typename T>
Tensor<T> narrow0(const Tensor<T>& a, std::size_t offset, std::size_t len) {
  if (a.rank() < 1 || offset + len > a.shape()[0]) {
    throw ShapeError("narrow0: range [" + std::to_string(offset) + ", " +
                     std::to_string(offset + len) + ") exceeds axis 0 of " + shape_str(a.shape()));
  }
  const std::size_t inner = a.size() / a.shape()[0];
  std::vector<T> out(a.values().begin() + static_cast<std::ptrdiff_t>(offset * inner),
                     a.values().begin() + static_cast<std::ptrdiff_t>((offset + len) * inner));
  Shape shape = a.shape();
  shape[0] = len;
  return detail::make_op<T>(std::move(shape), std::move(out), "narrow0", {a},
                            [offset, inner](detail::TensorNode<T>& self) {
                              auto& p = *self.parents[0];
                              if (!p.requires_grad) return;
                              const std::size_t base = offset * inner;
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                p.grad[base + i] += self.grad[i];
                            });
}

/// Concatenation along axis 0. All parts must agree on the trailing extents.
template <typename T>
Tensor<T> concat0(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat0: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t total0 = 0;
  for (const auto& p : parts) {
    Shape t(p.shape().begin() + 1, p.shape().end());
    if (p.rank() != parts[0].rank() || t != tail) {
      throw ShapeError("concat0: incompatible part " + shape_str(p.shape()) + " vs " +
                       shape_str(parts[0].shape()));
    }
    total0 += p.shape()[0];
  }
  Shape shape = parts[0].shape();
  shape[0] = total0;
  std::vector<T> out;
  out.reserve(numel(shape));
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    out.insert(out.end(), p.values().begin(), p.values().end());
    sizes.push_back(p.size());
  }
  return detail::make_op<T>(std::move(shape), std::move(out), "concat0", parts,
                            [sizes](detail::TensorNode<T>& self) {
                              std::size_t base = 0;
                              for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                auto& p = *self.parents[k];
                                if (p.requires_grad) {
                                  for (std::size_t i = 0; i < sizes[k]; ++i)
                                    p.grad[i] += self.grad[base + i];
                                }
                                base += sizes[k];
                              }
                            });
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  if (a.rank() != 2) throw ShapeError("transpose2d: expected rank 2, got " + shape_str(a.shape()));
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<T> out(r * c);
  const auto& av = a.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return detail::make_op<T>({c, r}, std::move(out), "transpose2d", {a},
                            [r, c](detail::TensorNode<T>& self) {
                              auto& p = *self.parents[0];
                              if (!p.requires_grad) return;
                              for (std::size_t i = 0; i < r; ++i)
                                for (std::size_t j = 0; j < c; ++j)
                                  p.grad[i * c + j] += self.grad[j * r + i];
                            });
}

/// Standard 2D matrix product [M,K] x [K,N] -> [M,N].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(m * n, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = av[i * k + p];
      const T* brow = bv.data() + p * n;
      T* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return detail::make_op<T>(
      {m, n}, std::move(out), "matmul", {a, b}, [m, k, n](detail::TensorNode<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const std::vector<T>& g = self.grad;
        if (pa.requires_grad) {
          // dA[i,p] = sum_j g[i,j] * B[p,j]
          for (std::size_t i = 0; i < m; ++i) {
            const T* grow = g.data() + i * n;
            for (std::size_t p = 0; p < k; ++p) {
              const T* brow = pb.data.data() + p * n;
              T acc = T(0);
              for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
              pa.grad[i * k + p] += acc;
            }
          }
        }
        if (pb.requires_grad) {
          // dB = A^T . g
          for (std::size_t p = 0; p < k; ++p)
            for (std::size_t i = 0; i < m; ++i) {
              const T aip = pa.data[i * k + p];
              const T* grow = g.data() + i * n;
              T* brow = pb.grad.data() + p * n;
              for (std::size_t j = 0; j < n; ++j) brow[j] += aip * grow[j];
            }
        }
      });
}

namespace detail {

struct AxisSpan {
  std::size_t outer, n, inner;
};

inline AxisSpan axis_span(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for " + shape_str(shape));
  }
  AxisSpan s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace detail

/// Numerically stabilized softmax along the given axis.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
  const auto span = detail::axis_span(a.shape(), axis, "softmax");
  const auto& av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t o = 0; o < span.outer; ++o) {
    for (std::size_t in = 0; in < span.inner; ++in) {
      const std::size_t base = o * span.n * span.inner + in;
      T mx = av[base];
      for (std::size_t j = 1; j < span.n; ++j)
        mx = std::max(mx, av[base + j * span.inner]);
      T denom = T(0);
      for (std::size_t j = 0; j < span.n; ++j) {
        const T e = std::exp(av[base + j * span.inner] - mx);
        out[base + j * span.inner] = e;
        denom += e;
      }
      for (std::size_t j = 0; j < span.n; ++j) out[base + j * span.inner] /= denom;
    }
  }
  return detail::make_op<T>(
      a.shape(), std::move(out), "softmax", {a}, [span](detail::TensorNode<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t o = 0; o < span.outer; ++o) {
          for (std::size_t in = 0; in < span.inner; ++in) {
            const std::size_t base = o * span.n * span.inner + in;
            T dot = T(0);
            for (std::size_t j = 0; j < span.n; ++j) {
              const std::size_t idx = base + j * span.inner;
              dot += self.grad[idx] * self.data[idx];
            }
            for (std::size_t j = 0; j < span.n; ++j) {
              const std::size_t idx = base + j * span.inner;
              p.grad[idx] += self.data[idx] * (self.grad[idx] - dot);
            }
          }
        }
      });
}

/// log(softmax(a)) computed stably.
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& a, std::size_t axis) {
  const auto span = detail::axis_span(a.shape(), axis, "log_softmax");
  const auto& av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t o = 0; o < span.outer; ++o) {
    for (std::size_t in = 0; in < span.inner; ++in) {
      const std::size_t base = o * span.n * span.inner + in;
      T mx = av[base];
      for (std::size_t j = 1; j < span.n; ++j)
        mx = std::max(mx, av[base + j * span.inner]);
      T denom = T(0);
      for (std::size_t j = 0; j < span.n; ++j)
        denom += std::exp(av[base + j * span.inner] - mx);
      const T log_denom = std::log(denom) + mx;
      for (std::size_t j = 0; j < span.n; ++j) {
        const std::size_t idx = base + j * span.inner;
        out[idx] = av[idx] - log_denom;
      }
    }
  }
  return detail::make_op<T>(
      a.shape(), std::move(out), "log_softmax", {a}, [span](detail::TensorNode<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t o = 0; o < span.outer; ++o) {
          for (std::size_t in = 0; in < span.inner; ++in) {
            const std::size_t base = o * span.n * span.inner + in;
            T gsum = T(0);
            for (std::size_t j = 0; j < span.n; ++j) gsum += self.grad[base + j * span.inner];
            for (std::size_t j = 0; j < span.n; ++j) {
              const std::size_t idx = base + j * span.inner;
              p.grad[idx] += self.grad[idx] - std::exp(self.data[idx]) * gsum;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Spatial resampling on [C,H,W] tensors
// ---------------------------------------------------------------------------

/// Keep every stride-th pixel in both spatial directions.
template <typename T>
Tensor<T> subsample(const Tensor<T>& x, std::size_t stride) {
  if (x.rank() != 3) throw ShapeError("subsample: expected [C,H,W], got " + shape_str(x.shape()));
  if (stride == 0) throw ValueError("subsample: stride must be positive");
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t oh = (h + stride - 1) / stride, ow = (w + stride - 1) / stride;
  std::vector<T> out(c * oh * ow);
  const auto& xv = x.values();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        out[(ch * oh + i) * ow + j] = xv[(ch * h + i * stride) * w + j * stride];
  return detail::make_op<T>(
      {c, oh, ow}, std::move(out), "subsample", {x},
      [c, h, w, oh, ow, stride](detail::TensorNode<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j)
              p.grad[(ch * h + i * stride) * w + j * stride] +=
                  self.grad[(ch * oh + i) * ow + j];
      });
}

/// Nearest-neighbor upsampling by an integer factor.
template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t factor) {
  if (x.rank() != 3)
    throw ShapeError("upsample_nearest: expected [C,H,W], got " + shape_str(x.shape()));
  if (factor == 0) throw ValueError("upsample_nearest: factor must be positive");
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t oh = h * factor, ow = w * factor;
  std::vector<T> out(c * oh * ow);
  const auto& xv = x.values();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        out[(ch * oh + i) * ow + j] = xv[(ch * h + i / factor) * w + j / factor];
  return detail::make_op<T>(
      {c, oh, ow}, std::move(out), "upsample_nearest", {x},
      [c, h, w, oh, ow, factor](detail::TensorNode<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j)
              p.grad[(ch * h + i / factor) * w + j / factor] +=
                  self.grad[(ch * oh + i) * ow + j];
      });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean binary cross-entropy on raw logits; numerically stable log(1+e^-|z|)
/// formulation. targets carries no gradient.
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& targets) {
  if (logits.shape() != targets.shape()) {
    throw ShapeError("bce_with_logits: logits " + shape_str(logits.shape()) + " vs targets " +
                     shape_str(targets.shape()));
  }
  const auto& z = logits.values();
  const auto& y = targets.values();
  const std::size_t n = z.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double zi = static_cast<double>(z[i]);
    const double yi = static_cast<double>(y[i]);
    total += std::max(zi, 0.0) - zi * yi + std::log1p(std::exp(-std::abs(zi)));
  }
  const T loss = static_cast<T>(total / static_cast<double>(n));
  std::vector<T> ycopy(y);
  return detail::make_op<T>(
      {1}, {loss}, "bce_with_logits", {logits},
      [ycopy = std::move(ycopy), n](detail::TensorNode<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        const T g = self.grad[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) {
          const double zi = static_cast<double>(p.data[i]);
          const double s = zi >= 0.0 ? 1.0 / (1.0 + std::exp(-zi))
                                     : std::exp(zi) / (1.0 + std::exp(zi));
          p.grad[i] += g * static_cast<T>(s - static_cast<double>(ycopy[i]));
        }
      });
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

struct ParamGradCheck {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
};

struct GradReport {
  std::vector<ParamGradCheck> params;
  double max_rel_err = 0.0;
  double tol = 0.0;
  bool pass = false;

  const ParamGradCheck* worst() const {
    const ParamGradCheck* w = nullptr;
    for (const auto& p : params)
      if (!w || p.max_rel_err > w->max_rel_err) w = &p;
    return w;
  }
};

/// Central finite differences of a deterministic scalar-valued function with
/// respect to p, evaluated element by element at step h.
template <typename T>
Tensor<T> finite_diff_grad(const std::function<Tensor<T>()>& f, Tensor<T>& p, T h) {
  if (h <= T(0)) throw ValueError("finite_diff_grad: step must be positive");
  auto eval = [&]() -> T {
    Tensor<T> out = f();
    const T v = out.item();
    if (!std::isfinite(static_cast<double>(v)))
      throw NumericError("finite_diff_grad: function produced a non-finite value");
    return v;
  };
  std::vector<T> result(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const T saved = p.values()[i];
    p.values()[i] = saved + h;
    const T fp = eval();
    p.values()[i] = saved - h;
    const T fm = eval();
    p.values()[i] = saved;
    result[i] = (fp - fm) / (T(2) * h);
  }
  return Tensor<T>::from_data(p.shape(), std::move(result));
}

/// Compare reverse-mode gradients of f against central finite differences for
/// every listed parameter. Failures are reported, not thrown.
template <typename T>
GradReport gradcheck(const std::function<Tensor<T>()>& f,
                     std::vector<std::pair<std::string, Tensor<T>>> params, double tol,
                     T h = static_cast<T>(1e-5)) {
  GradReport report;
  report.tol = tol;

  for (auto& [name, p] : params) p.zero_grad();
  Tensor<T> loss = f();
  loss.backward();

  for (auto& [name, p] : params) {
    std::vector<T> analytic = p.grad();
    if (analytic.empty()) analytic.assign(p.size(), T(0));
    Tensor<T> numeric = finite_diff_grad<T>(f, p, h);
    ParamGradCheck pc;
    pc.name = name;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double a = static_cast<double>(analytic[i]);
      const double d = static_cast<double>(numeric.values()[i]);
      const double rel = std::abs(a - d) / std::max(1e-8, std::abs(a) + std::abs(d));
      if (rel > pc.max_rel_err) {
        pc.max_rel_err = rel;
        pc.worst_index = i;
      }
    }
    report.max_rel_err = std::max(report.max_rel_err, pc.max_rel_err);
    report.params.push_back(std::move(pc));
  }
  report.pass = report.max_rel_err < tol;
  return report;
}

// ---------------------------------------------------------------------------
// Conversions and binary serialization
// ---------------------------------------------------------------------------

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& a) {
  std::vector<To> data(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) data[i] = static_cast<To>(a.values()[i]);
  return Tensor<To>::from_data(a.shape(), std::move(data));
}

/// Tensor binary format used repo-wide: magic "FOAMTNSR", u32 rank, rank x
/// u32 extents, row-major little-endian f32 payload.
void save_tensor_f32(const std::string& path, const Shape& shape, const std::vector<float>& data);
void load_tensor_f32(const std::string& path, Shape& shape, std::vector<float>& data);

template <typename T>
void save_tensor(const std::string& path, const Tensor<T>& t) {
  std::vector<float> payload(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) payload[i] = static_cast<float>(t.values()[i]);
  save_tensor_f32(path, t.shape(), payload);
}

template <typename T>
Tensor<T> load_tensor(const std::string& path) {
  Shape shape;
  std::vector<float> payload;
  load_tensor_f32(path, shape, payload);
  std::vector<T> data(payload.size());
  for (std::size_t i = 0; i < payload.size(); ++i) data[i] = static_cast<T>(payload[i]);
  return Tensor<T>::from_data(std::move(shape), std::move(data));
}

}  // namespace foam
