// Copyright (c) the imlkit project
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "imlkit/rng.hpp"

namespace imlkit {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

inline std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

namespace detail {
// Graph recording can be suspended for pure inference passes.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Row-major n-dimensional array participating in a reverse-mode graph.
// A Tensor is a handle; copies share the underlying node, so graphs stay
// cheap to build. The tape is the implicit DAG of parent links; backward()
// materializes a topological order over it and replays it in reverse.
template <typename T>
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated lazily, same extent as value
    bool requires_grad = false;
    bool needs_grad = false;  // this node or an ancestor requires grad
    std::vector<std::shared_ptr<Node>> parents;
    // Reads self.grad / self.value and accumulates into parents' grads.
    std::function<void(Node&)> backprop;

    void ensure_grad() {
      if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
  };

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return from_data(std::move(shape), {}, requires_grad, T(0));
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    return from_data(std::move(shape), {}, requires_grad, v);
  }

  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false,
                          T fill = T(0)) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    const std::size_t count = shape_numel(n->shape);
    if (data.empty()) {
      n->value.assign(count, fill);
    } else {
      if (data.size() != count) {
        throw std::invalid_argument("tensor data size " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(n->shape));
      }
      n->value = std::move(data);
    }
    n->requires_grad = requires_grad;
    n->needs_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from_data(Shape{1}, {v}, requires_grad);
  }

  static Tensor uniform(Shape shape, Rng& rng, T lo, T hi, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.value()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  static Tensor normal(Shape shape, Rng& rng, T mean, T stddev, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.value()) v = static_cast<T>(rng.normal(mean, stddev));
    return t;
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  std::size_t rank() const { return n_->shape.size(); }
  std::size_t dim(std::size_t i) const { return n_->shape[i]; }
  std::size_t size() const { return n_->value.size(); }

  std::vector<T>& value() { return n_->value; }
  const std::vector<T>& value() const { return n_->value; }

  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool b) {
    n_->requires_grad = b;
    // A leaf participates in backward iff it requires grad; derived nodes
    // keep whatever their parents imply.
    if (n_->parents.empty()) {
      n_->needs_grad = b;
    } else if (b) {
      n_->needs_grad = true;
    }
  }

  bool has_grad() const { return n_->grad.size() == n_->value.size(); }
  std::vector<T>& grad() {
    n_->ensure_grad();
    return n_->grad;
  }
  const std::vector<T>& grad() const {
    n_->ensure_grad();
    return n_->grad;
  }
  void zero_grad() { n_->grad.assign(n_->value.size(), T(0)); }

  T item() const {
    if (size() != 1) {
      throw std::invalid_argument("item() requires a scalar tensor, got shape " +
                                  shape_str(shape()));
    }
    return n_->value[0];
  }

  T at(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != rank()) throw std::invalid_argument("at(): index rank mismatch");
    const auto st = row_major_strides(shape());
    std::size_t flat = 0, k = 0;
    for (auto i : idx) {
      if (i >= shape()[k]) throw std::invalid_argument("at(): index out of bounds");
      flat += i * st[k++];
    }
    return n_->value[flat];
  }

  // Value copy detached from the graph.
  Tensor detach() const { return from_data(shape(), value(), false); }

  std::shared_ptr<Node> node() const { return n_; }

  static Tensor make_op(Shape shape, std::vector<std::shared_ptr<Node>> parents,
                        std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value.assign(shape_numel(n->shape), T(0));
    bool needs = false;
    if (detail::grad_mode()) {
      for (const auto& p : parents) needs = needs || p->needs_grad;
    }
    n->needs_grad = needs;
    if (needs) {
      n->parents = std::move(parents);
      n->backprop = std::move(backprop);
    }
    return Tensor(std::move(n));
  }

 private:
  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}
  std::shared_ptr<Node> n_;
};

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Reverse-mode sweep from a scalar root. Gradients accumulate additively
// across fan-out; the traversal order is a fixed post-order DFS, so repeated
// runs on identical graphs are bit-identical.
template <typename T>
inline void backward(const Tensor<T>& root) {
  if (root.size() != 1) {
    throw std::invalid_argument("backward() requires a scalar root, got shape " +
                                shape_str(root.shape()));
  }
  using Node = typename Tensor<T>::Node;
  auto root_node = root.node();
  if (!root_node->needs_grad) return;

  // Iterative post-order DFS over grad-requiring ancestors.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root_node.get(), 0);
  visited.insert(root_node.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->needs_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root_node->ensure_grad();
  root_node->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backprop && node->grad.size() == node->value.size()) node->backprop(*node);
  }
}

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
using NodePtr = std::shared_ptr<typename Tensor<T>::Node>;

// Broadcast shape of two operands under trailing-dimension alignment.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      throw std::invalid_argument("shapes " + shape_str(a) + " and " + shape_str(b) +
                                  " are not broadcast-compatible");
    }
    out[r - 1 - i] = std::max(da, db);
  }
  return out;
}

}  // namespace detail

// Broadcast a tensor to a larger shape (trailing alignment, size-1 dims
// replicate). Backward sums gradient over the broadcast positions.
template <typename T>
inline Tensor<T> expand(const Tensor<T>& x, const Shape& target) {
  const Shape& s = x.shape();
  if (s == target) return x;
  if (target.size() < s.size()) {
    throw std::invalid_argument("expand: target rank below source rank");
  }
  const std::size_t off = target.size() - s.size();
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != target[off + i] && s[i] != 1) {
      throw std::invalid_argument("expand: cannot broadcast " + shape_str(s) + " to " +
                                  shape_str(target));
    }
  }
  // Strides of x aligned to target, zero on broadcast dims.
  std::vector<std::size_t> xstr(target.size(), 0);
  const auto base = row_major_strides(s);
  for (std::size_t i = 0; i < s.size(); ++i) {
    xstr[off + i] = (s[i] == 1 && target[off + i] != 1) ? 0 : base[i];
  }
  const auto tstr = row_major_strides(target);
  const std::size_t n = shape_numel(target);
  const std::size_t r = target.size();

  auto xn = x.node();
  auto out = Tensor<T>::make_op(target, {xn}, [xn, xstr, tstr, target, r](auto& self) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      std::size_t rem = i, src = 0;
      for (std::size_t d = 0; d < r; ++d) {
        const std::size_t id = rem / tstr[d];
        rem -= id * tstr[d];
        src += id * xstr[d];
      }
      xn->grad[src] += self.grad[i];
    }
  });
  auto& ov = out.value();
  const auto& xv = x.value();
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t rem = i, src = 0;
    for (std::size_t d = 0; d < r; ++d) {
      const std::size_t id = rem / tstr[d];
      rem -= id * tstr[d];
      src += id * xstr[d];
    }
    ov[i] = xv[src];
  }
  return out;
}

namespace detail {

template <typename T, typename FwdFn, typename BwdFn>
inline Tensor<T> binary_same_shape(const Tensor<T>& a, const Tensor<T>& b, FwdFn fwd, BwdFn bwd) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("elementwise op shape mismatch: " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  auto an = a.node();
  auto bn = b.node();
  auto out = Tensor<T>::make_op(a.shape(), {an, bn}, [an, bn, bwd](auto& self) {
    if (an->needs_grad) an->ensure_grad();
    if (bn->needs_grad) bn->ensure_grad();
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      bwd(self.grad[i], an.get(), bn.get(), i);
    }
  });
  auto& ov = out.value();
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i], bv[i]);
  return out;
}

}  // namespace detail

template <typename T>
inline Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    const Shape bs = detail::broadcast_shape(a.shape(), b.shape());
    return add(expand(a, bs), expand(b, bs));
  }
  using Node = typename Tensor<T>::Node;
  return detail::binary_same_shape(
      a, b, [](T x, T y) { return x + y; },
      [](T g, Node* an, Node* bn, std::size_t i) {
        if (an->needs_grad) an->grad[i] += g;
        if (bn->needs_grad) bn->grad[i] += g;
      });
}

template <typename T>
inline Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    const Shape bs = detail::broadcast_shape(a.shape(), b.shape());
    return sub(expand(a, bs), expand(b, bs));
  }
  using Node = typename Tensor<T>::Node;
  return detail::binary_same_shape(
      a, b, [](T x, T y) { return x - y; },
      [](T g, Node* an, Node* bn, std::size_t i) {
        if (an->needs_grad) an->grad[i] += g;
        if (bn->needs_grad) bn->grad[i] -= g;
      });
}

template <typename T>
inline Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    const Shape bs = detail::broadcast_shape(a.shape(), b.shape());
    return mul(expand(a, bs), expand(b, bs));
  }
  auto an = a.node();
  auto bn = b.node();
  auto out = Tensor<T>::make_op(a.shape(), {an, bn}, [an, bn](auto& self) {
    if (an->needs_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < self.value.size(); ++i) an->grad[i] += self.grad[i] * bn->value[i];
    }
    if (bn->needs_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < self.value.size(); ++i) bn->grad[i] += self.grad[i] * an->value[i];
    }
  });
  auto& ov = out.value();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = a.value()[i] * b.value()[i];
  return out;
}

template <typename T>
inline Tensor<T> scale(const Tensor<T>& a, T c) {
  auto an = a.node();
  auto out = Tensor<T>::make_op(a.shape(), {an}, [an, c](auto& self) {
    an->ensure_grad();
    for (std::size_t i = 0; i < self.value.size(); ++i) an->grad[i] += c * self.grad[i];
  });
  for (std::size_t i = 0; i < out.size(); ++i) out.value()[i] = c * a.value()[i];
  return out;
}

template <typename T>
inline Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  auto an = a.node();
  auto out = Tensor<T>::make_op(a.shape(), {an}, [an](auto& self) {
    an->ensure_grad();
    for (std::size_t i = 0; i < self.value.size(); ++i) an->grad[i] += self.grad[i];
  });
  for (std::size_t i = 0; i < out.size(); ++i) out.value()[i] = a.value()[i] + c;
  return out;
}

template <typename T>
inline Tensor<T> neg(const Tensor<T>& a) {
  return scale(a, T(-1));
}

namespace detail {

template <typename T, typename FwdFn, typename GradFn>
inline Tensor<T> unary_op(const Tensor<T>& a, FwdFn fwd, GradFn dfd) {
  auto an = a.node();
  auto out = Tensor<T>::make_op(a.shape(), {an}, [an, dfd](auto& self) {
    an->ensure_grad();
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      an->grad[i] += self.grad[i] * dfd(an->value[i], self.value[i]);
    }
  });
  for (std::size_t i = 0; i < out.size(); ++i) out.value()[i] = fwd(a.value()[i]);
  return out;
}

}  // namespace detail

template <typename T>
inline Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T /*y*/) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
inline Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary_op(
      a,
      [](T x) {
        return x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                         : std::exp(x) / (T(1) + std::exp(x));
      },
      [](T /*x*/, T y) { return y * (T(1) - y); });
}

template <typename T>
inline Tensor<T> gelu(const Tensor<T>& a) {
  // Exact (erf) form; smooth everywhere, which keeps finite differences clean.
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return detail::unary_op(
      a,
      [](T x) { return static_cast<T>(0.5 * x * (1.0 + std::erf(x * inv_sqrt2))); },
      [](T x, T /*y*/) {
        const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * double(x) * double(x));
        return static_cast<T>(cdf + x * pdf);
      });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
inline Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                shape_str(shape));
  }
  auto xn = x.node();
  auto out = Tensor<T>::make_op(std::move(shape), {xn}, [xn](auto& self) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.value.size(); ++i) xn->grad[i] += self.grad[i];
  });
  out.value() = x.value();
  return out;
}

template <typename T>
inline Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) throw std::invalid_argument("permute: axes rank mismatch");
  std::vector<bool> seen(r, false);
  Shape oshape(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (axes[i] >= r || seen[axes[i]]) throw std::invalid_argument("permute: invalid axes");
    seen[axes[i]] = true;
    oshape[i] = x.shape()[axes[i]];
  }
  const auto xstr = row_major_strides(x.shape());
  const auto ostr = row_major_strides(oshape);
  // src stride per output axis
  std::vector<std::size_t> sstr(r);
  for (std::size_t i = 0; i < r; ++i) sstr[i] = xstr[axes[i]];

  auto xn = x.node();
  auto out = Tensor<T>::make_op(oshape, {xn}, [xn, ostr, sstr, r](auto& self) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      std::size_t rem = i, src = 0;
      for (std::size_t d = 0; d < r; ++d) {
        const std::size_t id = rem / ostr[d];
        rem -= id * ostr[d];
        src += id * sstr[d];
      }
      xn->grad[src] += self.grad[i];
    }
  });
  auto& ov = out.value();
  const auto& xv = x.value();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    std::size_t rem = i, src = 0;
    for (std::size_t d = 0; d < r; ++d) {
      const std::size_t id = rem / ostr[d];
      rem -= id * ostr[d];
      src += id * sstr[d];
    }
    ov[i] = xv[src];
  }
  return out;
}

template <typename T>
inline Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t len) {
  if (axis >= x.rank()) throw std::invalid_argument("slice: axis out of range");
  if (start + len > x.shape()[axis]) {
    throw std::invalid_argument("slice: window [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") exceeds extent " +
                                std::to_string(x.shape()[axis]));
  }
  Shape oshape = x.shape();
  oshape[axis] = len;
  // Treat as [outer, extent, inner].
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.shape()[i];
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape()[i];
  const std::size_t extent = x.shape()[axis];

  auto xn = x.node();
  auto out = Tensor<T>::make_op(oshape, {xn}, [xn, outer, inner, extent, start, len](auto& self) {
    xn->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < len; ++j) {
        const T* g = self.grad.data() + (o * len + j) * inner;
        T* dst = xn->grad.data() + (o * extent + start + j) * inner;
        for (std::size_t k = 0; k < inner; ++k) dst[k] += g[k];
      }
    }
  });
  auto& ov = out.value();
  const auto& xv = x.value();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < len; ++j) {
      const T* src = xv.data() + (o * extent + start + j) * inner;
      T* dst = ov.data() + (o * len + j) * inner;
      std::copy(src, src + inner, dst);
    }
  }
  return out;
}

template <typename T>
inline Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis) {
  if (xs.empty()) throw std::invalid_argument("concat: empty input list");
  const std::size_t r = xs[0].rank();
  if (axis >= r) throw std::invalid_argument("concat: axis out of range");
  Shape oshape = xs[0].shape();
  std::size_t total = 0;
  for (const auto& x : xs) {
    if (x.rank() != r) throw std::invalid_argument("concat: rank mismatch");
    for (std::size_t d = 0; d < r; ++d) {
      if (d != axis && x.shape()[d] != oshape[d]) {
        throw std::invalid_argument("concat: shape mismatch at axis " + std::to_string(d) +
                                    ": " + shape_str(x.shape()) + " vs " + shape_str(oshape));
      }
    }
    total += x.shape()[axis];
  }
  oshape[axis] = total;

  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= oshape[i];
  for (std::size_t i = axis + 1; i < r; ++i) inner *= oshape[i];

  std::vector<detail::NodePtr<T>> parents;
  std::vector<std::size_t> extents;
  parents.reserve(xs.size());
  for (const auto& x : xs) {
    parents.push_back(x.node());
    extents.push_back(x.shape()[axis]);
  }
  auto parents_copy = parents;
  auto out = Tensor<T>::make_op(
      oshape, std::move(parents),
      [ps = std::move(parents_copy), extents, outer, inner, total](auto& self) {
        std::size_t offset = 0;
        for (std::size_t pi = 0; pi < ps.size(); ++pi) {
          auto& p = ps[pi];
          const std::size_t ext = extents[pi];
          if (p->needs_grad) {
            p->ensure_grad();
            for (std::size_t o = 0; o < outer; ++o) {
              const T* g = self.grad.data() + (o * total + offset) * inner;
              T* dst = p->grad.data() + o * ext * inner;
              for (std::size_t k = 0; k < ext * inner; ++k) dst[k] += g[k];
            }
          }
          offset += ext;
        }
      });
  auto& ov = out.value();
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < xs.size(); ++pi) {
    const auto& xv = xs[pi].value();
    const std::size_t ext = extents[pi];
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(xv.data() + o * ext * inner, xv.data() + (o + 1) * ext * inner,
                ov.data() + (o * total + offset) * inner);
    }
    offset += ext;
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
inline Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis, bool keepdim = false) {
  if (axis >= x.rank()) throw std::invalid_argument("sum_axis: axis out of range");
  Shape oshape;
  for (std::size_t i = 0; i < x.rank(); ++i) {
    if (i == axis) {
      if (keepdim) oshape.push_back(1);
    } else {
      oshape.push_back(x.shape()[i]);
    }
  }
  if (oshape.empty()) oshape.push_back(1);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.shape()[i];
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape()[i];
  const std::size_t extent = x.shape()[axis];

  auto xn = x.node();
  auto out = Tensor<T>::make_op(oshape, {xn}, [xn, outer, inner, extent](auto& self) {
    xn->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t e = 0; e < extent; ++e) {
        T* dst = xn->grad.data() + (o * extent + e) * inner;
        const T* g = self.grad.data() + o * inner;
        for (std::size_t k = 0; k < inner; ++k) dst[k] += g[k];
      }
    }
  });
  auto& ov = out.value();
  const auto& xv = x.value();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t e = 0; e < extent; ++e) {
      const T* src = xv.data() + (o * extent + e) * inner;
      T* dst = ov.data() + o * inner;
      for (std::size_t k = 0; k < inner; ++k) dst[k] += src[k];
    }
  }
  return out;
}

template <typename T>
inline Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis, bool keepdim = false) {
  const T inv = T(1) / static_cast<T>(x.shape()[axis]);
  return scale(sum_axis(x, axis, keepdim), inv);
}

template <typename T>
inline Tensor<T> sum_all(const Tensor<T>& x) {
  auto xn = x.node();
  auto out = Tensor<T>::make_op(Shape{1}, {xn}, [xn](auto& self) {
    xn->ensure_grad();
    for (auto& g : xn->grad) g += self.grad[0];
  });
  T acc = T(0);
  for (auto v : x.value()) acc += v;
  out.value()[0] = acc;
  return out;
}

template <typename T>
inline Tensor<T> mean_all(const Tensor<T>& x) {
  return scale(sum_all(x), T(1) / static_cast<T>(x.size()));
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

// [..., m, k] x [..., k, n] with equal leading dims, or a rank-2 rhs applied
// to every leading slice of lhs.
template <typename T>
inline Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw std::invalid_argument("matmul: operands must have rank >= 2");
  }
  const std::size_t m = a.shape()[a.rank() - 2];
  const std::size_t k = a.shape()[a.rank() - 1];
  const std::size_t kb = b.shape()[b.rank() - 2];
  const std::size_t n = b.shape()[b.rank() - 1];
  if (k != kb) {
    throw std::invalid_argument("matmul: inner dims differ, " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  }
  std::size_t batch = 1;
  bool shared_rhs = false;
  Shape oshape;
  if (b.rank() == 2) {
    shared_rhs = true;
    oshape = a.shape();
    oshape[a.rank() - 1] = n;
    for (std::size_t i = 0; i + 2 < a.rank(); ++i) batch *= a.shape()[i];
  } else {
    if (a.rank() != b.rank()) {
      throw std::invalid_argument("matmul: batched operands must share rank");
    }
    for (std::size_t i = 0; i + 2 < a.rank(); ++i) {
      if (a.shape()[i] != b.shape()[i]) {
        throw std::invalid_argument("matmul: batch dims differ, " + shape_str(a.shape()) +
                                    " x " + shape_str(b.shape()));
      }
      batch *= a.shape()[i];
    }
    oshape = a.shape();
    oshape[a.rank() - 1] = n;
  }

  auto an = a.node();
  auto bn = b.node();
  auto out = Tensor<T>::make_op(oshape, {an, bn}, [an, bn, batch, m, k, n, shared_rhs](auto& self) {
    const std::size_t bstride = shared_rhs ? 0 : k * n;
    if (an->needs_grad) an->ensure_grad();
    if (bn->needs_grad) bn->ensure_grad();
    for (std::size_t t = 0; t < batch; ++t) {
      const T* A = an->value.data() + t * m * k;
      const T* B = bn->value.data() + t * bstride;
      const T* G = self.grad.data() + t * m * n;
      if (an->needs_grad) {
        T* dA = an->grad.data() + t * m * k;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            const T g = G[i * n + j];
            const T* Brow = B + j;  // column j
            T* dArow = dA + i * k;
            for (std::size_t kk = 0; kk < k; ++kk) dArow[kk] += g * Brow[kk * n];
          }
        }
      }
      if (bn->needs_grad) {
        T* dB = bn->grad.data() + t * bstride;
        for (std::size_t i = 0; i < m; ++i) {
          const T* Arow = A + i * k;
          const T* Grow = G + i * n;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const T av = Arow[kk];
            T* dBrow = dB + kk * n;
            for (std::size_t j = 0; j < n; ++j) dBrow[j] += av * Grow[j];
          }
        }
      }
    }
  });
  auto& ov = out.value();
  const auto& av = a.value();
  const auto& bv = b.value();
  const std::size_t bstride = shared_rhs ? 0 : k * n;
  for (std::size_t t = 0; t < batch; ++t) {
    const T* A = av.data() + t * m * k;
    const T* B = bv.data() + t * bstride;
    T* C = ov.data() + t * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      T* Crow = C + i * n;
      const T* Arow = A + i * k;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const T av_ik = Arow[kk];
        const T* Brow = B + kk * n;
        for (std::size_t j = 0; j < n; ++j) Crow[j] += av_ik * Brow[j];
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv2d and padding
// ---------------------------------------------------------------------------

enum class PadMode { kZero, kReplicate };

template <typename T>
inline Tensor<T> pad2d(const Tensor<T>& x, std::size_t top, std::size_t bottom, std::size_t left,
                       std::size_t right, PadMode mode = PadMode::kZero) {
  if (x.rank() != 4) throw std::invalid_argument("pad2d: expected [N,C,H,W]");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = H + top + bottom, Wo = W + left + right;
  auto clampi = [](std::ptrdiff_t v, std::ptrdiff_t lo, std::ptrdiff_t hi) {
    return v < lo ? lo : (v > hi ? hi : v);
  };
  auto xn = x.node();
  auto out = Tensor<T>::make_op(
      Shape{N, C, Ho, Wo}, {xn}, [xn, N, C, H, W, Ho, Wo, top, left, mode, clampi](auto& self) {
        xn->ensure_grad();
        for (std::size_t nc = 0; nc < N * C; ++nc) {
          const T* g = self.grad.data() + nc * Ho * Wo;
          T* dst = xn->grad.data() + nc * H * W;
          for (std::size_t oy = 0; oy < Ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) -
                                      static_cast<std::ptrdiff_t>(top);
            for (std::size_t ox = 0; ox < Wo; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) -
                                        static_cast<std::ptrdiff_t>(left);
              if (mode == PadMode::kZero) {
                if (iy < 0 || iy >= std::ptrdiff_t(H) || ix < 0 || ix >= std::ptrdiff_t(W)) continue;
                dst[iy * W + ix] += g[oy * Wo + ox];
              } else {
                const auto cy = clampi(iy, 0, std::ptrdiff_t(H) - 1);
                const auto cx = clampi(ix, 0, std::ptrdiff_t(W) - 1);
                dst[cy * W + cx] += g[oy * Wo + ox];
              }
            }
          }
        }
      });
  auto& ov = out.value();
  const auto& xv = x.value();
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* src = xv.data() + nc * H * W;
    T* dst = ov.data() + nc * Ho * Wo;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) - static_cast<std::ptrdiff_t>(top);
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) - static_cast<std::ptrdiff_t>(left);
        if (mode == PadMode::kZero) {
          dst[oy * Wo + ox] = (iy < 0 || iy >= std::ptrdiff_t(H) || ix < 0 || ix >= std::ptrdiff_t(W))
                                  ? T(0)
                                  : src[iy * W + ix];
        } else {
          const auto cy = clampi(iy, 0, std::ptrdiff_t(H) - 1);
          const auto cx = clampi(ix, 0, std::ptrdiff_t(W) - 1);
          dst[oy * Wo + ox] = src[cy * W + cx];
        }
      }
    }
  }
  return out;
}

// Cross-correlation of [N,C,H,W] with [K,C,kh,kw], zero padding.
template <typename T>
inline Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride = 1,
                        std::size_t padding = 0) {
  if (x.rank() != 4) throw std::invalid_argument("conv2d: input must be [N,C,H,W]");
  if (w.rank() != 4) throw std::invalid_argument("conv2d: kernel must be [K,C,kh,kw]");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t K = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != C) {
    throw std::invalid_argument("conv2d: kernel channels " + std::to_string(w.dim(1)) +
                                " do not match input channels " + std::to_string(C));
  }
  if (kh > H + 2 * padding || kw > W + 2 * padding) {
    throw std::invalid_argument("conv2d: kernel " + std::to_string(kh) + "x" +
                                std::to_string(kw) + " exceeds padded input " +
                                std::to_string(H + 2 * padding) + "x" +
                                std::to_string(W + 2 * padding));
  }
  const std::size_t Ho = (H + 2 * padding - kh) / stride + 1;
  const std::size_t Wo = (W + 2 * padding - kw) / stride + 1;

  auto xn = x.node();
  auto wn = w.node();
  auto out = Tensor<T>::make_op(
      Shape{N, K, Ho, Wo}, {xn, wn},
      [xn, wn, N, C, H, W, K, kh, kw, Ho, Wo, stride, padding](auto& self) {
        if (xn->needs_grad) xn->ensure_grad();
        if (wn->needs_grad) wn->ensure_grad();
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t k = 0; k < K; ++k) {
            const T* g = self.grad.data() + (n * K + k) * Ho * Wo;
            for (std::size_t oy = 0; oy < Ho; ++oy) {
              for (std::size_t ox = 0; ox < Wo; ++ox) {
                const T gv = g[oy * Wo + ox];
                if (gv == T(0)) continue;
                const std::ptrdiff_t y0 = std::ptrdiff_t(oy * stride) - std::ptrdiff_t(padding);
                const std::ptrdiff_t x0 = std::ptrdiff_t(ox * stride) - std::ptrdiff_t(padding);
                for (std::size_t c = 0; c < C; ++c) {
                  const T* xin = xn->value.data() + (n * C + c) * H * W;
                  const T* wk = wn->value.data() + (k * C + c) * kh * kw;
                  T* dx = xn->needs_grad ? xn->grad.data() + (n * C + c) * H * W : nullptr;
                  T* dw = wn->needs_grad ? wn->grad.data() + (k * C + c) * kh * kw : nullptr;
                  for (std::size_t fy = 0; fy < kh; ++fy) {
                    const std::ptrdiff_t iy = y0 + std::ptrdiff_t(fy);
                    if (iy < 0 || iy >= std::ptrdiff_t(H)) continue;
                    for (std::size_t fx = 0; fx < kw; ++fx) {
                      const std::ptrdiff_t ix = x0 + std::ptrdiff_t(fx);
                      if (ix < 0 || ix >= std::ptrdiff_t(W)) continue;
                      if (dx) dx[iy * W + ix] += gv * wk[fy * kw + fx];
                      if (dw) dw[fy * kw + fx] += gv * xin[iy * W + ix];
                    }
                  }
                }
              }
            }
          }
        }
      });
  auto& ov = out.value();
  const auto& xv = x.value();
  const auto& wv = w.value();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t k = 0; k < K; ++k) {
      T* o = ov.data() + (n * K + k) * Ho * Wo;
      for (std::size_t oy = 0; oy < Ho; ++oy) {
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          const std::ptrdiff_t y0 = std::ptrdiff_t(oy * stride) - std::ptrdiff_t(padding);
          const std::ptrdiff_t x0 = std::ptrdiff_t(ox * stride) - std::ptrdiff_t(padding);
          T acc = T(0);
          for (std::size_t c = 0; c < C; ++c) {
            const T* xin = xv.data() + (n * C + c) * H * W;
            const T* wk = wv.data() + (k * C + c) * kh * kw;
            for (std::size_t fy = 0; fy < kh; ++fy) {
              const std::ptrdiff_t iy = y0 + std::ptrdiff_t(fy);
              if (iy < 0 || iy >= std::ptrdiff_t(H)) continue;
              for (std::size_t fx = 0; fx < kw; ++fx) {
                const std::ptrdiff_t ix = x0 + std::ptrdiff_t(fx);
                if (ix < 0 || ix >= std::ptrdiff_t(W)) continue;
                acc += xin[iy * W + ix] * wk[fy * kw + fx];
              }
            }
          }
          o[oy * Wo + ox] = acc;
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax / layer norm
// ---------------------------------------------------------------------------

template <typename T>
inline Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  if (x.rank() < 1 || x.shape().back() < 1) {
    throw std::invalid_argument("softmax_lastdim: last dimension must be >= 1");
  }
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.size() / d;
  auto xn = x.node();
  auto out = Tensor<T>::make_op(x.shape(), {xn}, [xn, rows, d](auto& self) {
    xn->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* p = self.value.data() + r * d;
      const T* g = self.grad.data() + r * d;
      T dot = T(0);
      for (std::size_t i = 0; i < d; ++i) dot += p[i] * g[i];
      T* dst = xn->grad.data() + r * d;
      for (std::size_t i = 0; i < d; ++i) dst[i] += p[i] * (g[i] - dot);
    }
  });
  auto& ov = out.value();
  const auto& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = xv.data() + r * d;
    T* dst = ov.data() + r * d;
    T mx = src[0];
    for (std::size_t i = 1; i < d; ++i) mx = std::max(mx, src[i]);
    T sum = T(0);
    for (std::size_t i = 0; i < d; ++i) {
      dst[i] = std::exp(src[i] - mx);
      sum += dst[i];
    }
    const T inv = T(1) / sum;
    for (std::size_t i = 0; i < d; ++i) dst[i] *= inv;
  }
  return out;
}

// Normalization over the last dimension followed by a per-feature affine.
template <typename T>
inline Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                            T eps = T(1e-5)) {
  const std::size_t d = x.shape().back();
  if (gain.size() != d || bias.size() != d) {
    throw std::invalid_argument("layer_norm: gain/bias must match the normalized dimension " +
                                std::to_string(d));
  }
  const std::size_t rows = x.size() / d;
  auto xn = x.node();
  auto gn = gain.node();
  auto bn = bias.node();

  // Saved statistics for backward.
  auto stats = std::make_shared<std::vector<T>>(2 * rows);  // mean, rstd per row
  auto out = Tensor<T>::make_op(x.shape(), {xn, gn, bn}, [xn, gn, bn, stats, rows, d](auto& self) {
    if (xn->needs_grad) xn->ensure_grad();
    if (gn->needs_grad) gn->ensure_grad();
    if (bn->needs_grad) bn->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T mean = (*stats)[2 * r];
      const T rstd = (*stats)[2 * r + 1];
      const T* xrow = xn->value.data() + r * d;
      const T* grow = self.grad.data() + r * d;
      // dxhat and its row statistics
      T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
      for (std::size_t i = 0; i < d; ++i) {
        const T xhat = (xrow[i] - mean) * rstd;
        const T dxhat = grow[i] * gn->value[i];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
        if (gn->needs_grad) gn->grad[i] += grow[i] * xhat;
        if (bn->needs_grad) bn->grad[i] += grow[i];
      }
      if (xn->needs_grad) {
        T* dx = xn->grad.data() + r * d;
        const T invd = T(1) / static_cast<T>(d);
        for (std::size_t i = 0; i < d; ++i) {
          const T xhat = (xrow[i] - mean) * rstd;
          const T dxhat = grow[i] * gn->value[i];
          dx[i] += rstd * (dxhat - invd * sum_dxhat - xhat * invd * sum_dxhat_xhat);
        }
      }
    }
  });
  auto& ov = out.value();
  const auto& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = xv.data() + r * d;
    T mean = T(0);
    for (std::size_t i = 0; i < d; ++i) mean += src[i];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t i = 0; i < d; ++i) {
      const T c = src[i] - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T rstd = T(1) / std::sqrt(var + eps);
    (*stats)[2 * r] = mean;
    (*stats)[2 * r + 1] = rstd;
    T* dst = ov.data() + r * d;
    for (std::size_t i = 0; i < d; ++i) {
      dst[i] = (src[i] - mean) * rstd * gain.value()[i] + bias.value()[i];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// bilinear sampling
// ---------------------------------------------------------------------------

// Samples map [C,H,W] at continuous points [P,2] given as (x, y) in pixel
// units. Out-of-bounds neighbors read as zero. Differentiable in both the
// map and the point coordinates.
template <typename T>
inline Tensor<T> bilinear_sample(const Tensor<T>& map, const Tensor<T>& points) {
  if (map.rank() != 3) throw std::invalid_argument("bilinear_sample: map must be [C,H,W]");
  if (points.rank() != 2 || points.shape()[1] != 2) {
    throw std::invalid_argument("bilinear_sample: points must be [P,2]");
  }
  const std::size_t C = map.dim(0), H = map.dim(1), W = map.dim(2);
  const std::size_t P = points.dim(0);

  auto mn = map.node();
  auto pn = points.node();
  auto fetch = [H, W](const T* plane, std::ptrdiff_t y, std::ptrdiff_t x) -> T {
    if (y < 0 || y >= std::ptrdiff_t(H) || x < 0 || x >= std::ptrdiff_t(W)) return T(0);
    return plane[y * W + x];
  };
  auto out = Tensor<T>::make_op(
      Shape{P, C}, {mn, pn}, [mn, pn, C, H, W, P, fetch](auto& self) {
        if (mn->needs_grad) mn->ensure_grad();
        if (pn->needs_grad) pn->ensure_grad();
        for (std::size_t p = 0; p < P; ++p) {
          const T px = pn->value[2 * p];
          const T py = pn->value[2 * p + 1];
          const T fx = std::floor(px), fy = std::floor(py);
          const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(fx);
          const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(fy);
          const T wx = px - fx, wy = py - fy;
          T dpx = T(0), dpy = T(0);
          for (std::size_t c = 0; c < C; ++c) {
            const T g = self.grad[p * C + c];
            if (g == T(0) && !pn->needs_grad) continue;
            const T* plane = mn->value.data() + c * H * W;
            const T v00 = fetch(plane, y0, x0);
            const T v01 = fetch(plane, y0, x0 + 1);
            const T v10 = fetch(plane, y0 + 1, x0);
            const T v11 = fetch(plane, y0 + 1, x0 + 1);
            if (mn->needs_grad) {
              T* dplane = mn->grad.data() + c * H * W;
              auto scatter = [&](std::ptrdiff_t y, std::ptrdiff_t x, T wgt) {
                if (y < 0 || y >= std::ptrdiff_t(H) || x < 0 || x >= std::ptrdiff_t(W)) return;
                dplane[y * W + x] += g * wgt;
              };
              scatter(y0, x0, (T(1) - wy) * (T(1) - wx));
              scatter(y0, x0 + 1, (T(1) - wy) * wx);
              scatter(y0 + 1, x0, wy * (T(1) - wx));
              scatter(y0 + 1, x0 + 1, wy * wx);
            }
            dpx += g * ((T(1) - wy) * (v01 - v00) + wy * (v11 - v10));
            dpy += g * ((T(1) - wx) * (v10 - v00) + wx * (v11 - v01));
          }
          if (pn->needs_grad) {
            pn->grad[2 * p] += dpx;
            pn->grad[2 * p + 1] += dpy;
          }
        }
      });
  auto& ov = out.value();
  const auto& mv = map.value();
  const auto& pv = points.value();
  for (std::size_t p = 0; p < P; ++p) {
    const T px = pv[2 * p];
    const T py = pv[2 * p + 1];
    const T fx = std::floor(px), fy = std::floor(py);
    const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(fx);
    const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(fy);
    const T wx = px - fx, wy = py - fy;
    for (std::size_t c = 0; c < C; ++c) {
      const T* plane = mv.data() + c * H * W;
      const T v00 = fetch(plane, y0, x0);
      const T v01 = fetch(plane, y0, x0 + 1);
      const T v10 = fetch(plane, y0 + 1, x0);
      const T v11 = fetch(plane, y0 + 1, x0 + 1);
      ov[p * C + c] = (T(1) - wy) * ((T(1) - wx) * v00 + wx * v01) +
                      wy * ((T(1) - wx) * v10 + wx * v11);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

// Mean of -[w_pos*y*log sigma(l) + w_neg*(1-y)*log(1-sigma(l))], computed in
// logit space. `target` values are expected in [0,1] and carry no gradient.
template <typename T>
inline Tensor<T> weighted_bce_with_logits(const Tensor<T>& logits, const Tensor<T>& target,
                                          T w_pos, T w_neg) {
  if (logits.shape() != target.shape()) {
    throw std::invalid_argument("weighted_bce_with_logits: shape mismatch " +
                                shape_str(logits.shape()) + " vs " + shape_str(target.shape()));
  }
  if (!(w_pos > T(0)) || !(w_neg > T(0))) {
    throw std::invalid_argument("weighted_bce_with_logits: weights must be positive");
  }
  const std::size_t n = logits.size();
  auto ln = logits.node();
  auto tn = target.node();
  auto softplus = [](T z) {
    // log(1+exp(z)) without overflow
    return std::max(z, T(0)) + std::log1p(std::exp(-std::abs(z)));
  };
  auto out = Tensor<T>::make_op(Shape{1}, {ln, tn}, [ln, tn, w_pos, w_neg, n](auto& self) {
    if (!ln->needs_grad) return;
    ln->ensure_grad();
    const T g = self.grad[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T l = ln->value[i];
      const T y = tn->value[i];
      const T s = l >= T(0) ? T(1) / (T(1) + std::exp(-l)) : std::exp(l) / (T(1) + std::exp(l));
      ln->grad[i] += g * (w_pos * y * (s - T(1)) + w_neg * (T(1) - y) * s);
    }
  });
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T l = logits.value()[i];
    const T y = target.value()[i];
    acc += w_pos * y * softplus(-l) + w_neg * (T(1) - y) * softplus(l);
  }
  out.value()[0] = acc / static_cast<T>(n);
  return out;
}

// ---------------------------------------------------------------------------
// finite differences
// ---------------------------------------------------------------------------

// Central-difference verification of the analytic gradient of a scalar-valued
// function at x. Returns the worst relative error over all coordinates, with
// denominator max(|analytic|, |numeric|, 1e-8).
template <typename T>
inline T finite_diff_check(const std::function<Tensor<T>(const Tensor<T>&)>& fn, Tensor<T>& x,
                           T eps) {
  x.set_requires_grad(true);
  x.zero_grad();
  Tensor<T> y = fn(x);
  if (y.size() != 1) {
    throw std::invalid_argument("finite_diff_check: fn must return a scalar");
  }
  backward(y);
  const std::vector<T> analytic = x.grad();

  T worst = T(0);
  auto& xv = x.value();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const T saved = xv[i];
    xv[i] = saved + eps;
    const T fp = fn(x).item();
    xv[i] = saved - eps;
    const T fm = fn(x).item();
    xv[i] = saved;
    const T numeric = (fp - fm) / (T(2) * eps);
    const T denom = std::max({std::abs(numeric), std::abs(analytic[i]), T(1e-8)});
    worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
  }
  return worst;
}

}  // namespace imlkit
