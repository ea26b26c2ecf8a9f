#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "wordconf/error.hpp"
#include "wordconf/rng.hpp"

namespace wordconf {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(const Node&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

inline thread_local int no_grad_depth = 0;

}  // namespace detail

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// Dense row-major tensor of doubles with an optional gradient slot.
///
/// A Tensor is a handle: copies share the underlying buffer and graph node,
/// the way autograd tensors do in most frameworks. Use detach() for an
/// independent copy of the values.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
    for (auto d : shape) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    if (values.size() != shape_numel(shape)) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    }
    node_ = std::make_shared<detail::Node>();
    node_->shape = std::move(shape);
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

  bool defined() const noexcept { return node_ != nullptr; }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  // Writes bypass the graph; meant for initialization and optimizer updates.
  std::span<double> mutable_data() { return node_->data; }
  double operator[](std::size_t i) const { return node_->data[i]; }

  double item() const {
    if (numel() != 1) throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  /// Reverse pass from a single-element tensor. Gradients accumulate into
  /// every reachable tensor that requires them.
  void backward() const {
    if (numel() != 1) throw ShapeError("backward() requires a scalar, got " + shape_str(shape()));
    if (!node_->requires_grad) throw Error("backward() on a tensor that does not require grad");

    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        detail::Node* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    for (auto* n : order) n->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backward) (*it)->backward(**it);
    }
  }

  Tensor detach() const { return Tensor(shape(), node_->data); }

  const detail::NodePtr& node() const { return node_; }

 private:
  detail::NodePtr node_;
};

namespace detail {

template <class Fn>
Tensor make_op(Shape shape, std::vector<double> data, std::initializer_list<const Tensor*> inputs,
               Fn&& fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (grad_enabled()) {
    bool any = false;
    for (const auto* t : inputs) any = any || t->requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const auto* t : inputs) node->parents.push_back(t->node());
      node->backward = std::forward<Fn>(fn);
    }
  }
  return Tensor(std::move(node));
}

template <class Fn>
Tensor make_op_n(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs, Fn&& fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (grad_enabled()) {
    bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      for (const auto& t : inputs) node->parents.push_back(t.node());
      node->backward = std::forward<Fn>(fn);
    }
  }
  return Tensor(std::move(node));
}

// Gradient buffer of a parent, or nullptr when it does not take gradients.
inline double* grad_target(const NodePtr& p) {
  if (!p->requires_grad) return nullptr;
  p->ensure_grad();
  return p->grad.data();
}

inline void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

// c[m x n] += a[m x k] * b[k x n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m x k] += g[m x n] * b[k x n]^T
inline void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    double* ci = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += gi[j] * bp[j];
      ci[p] += acc;
    }
  }
}

// c[k x n] += a[m x k]^T * g[m x n]
inline void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * gi[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  detail::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  auto an = a.node(), bn = b.node();
  return detail::make_op({m, n}, std::move(out), {&a, &b}, [an, bn, m, k, n](const detail::Node& o) {
    if (double* ga = detail::grad_target(an)) detail::gemm_nt(o.grad.data(), bn->data.data(), ga, m, k, n);
    if (double* gb = detail::grad_target(bn)) detail::gemm_tn(an->data.data(), o.grad.data(), gb, m, k, n);
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank2(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  const auto x = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  auto an = a.node();
  return detail::make_op({n, m}, std::move(out), {&a}, [an, m, n](const detail::Node& o) {
    if (double* ga = detail::grad_target(an))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += o.grad[j * m + i];
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shapes differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto an = a.node(), bn = b.node();
  return detail::make_op(a.shape(), std::move(out), {&a, &b}, [an, bn](const detail::Node& o) {
    if (double* ga = detail::grad_target(an))
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
    if (double* gb = detail::grad_target(bn))
      for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i] += o.grad[i];
  });
}

/// x[..., n] + bias[n], broadcast over the leading dimensions.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t n = x.shape().back();
  if (bias.numel() != n) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not fit " + shape_str(x.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto b = bias.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % n];
  auto xn = x.node(), bn = bias.node();
  return detail::make_op(x.shape(), std::move(out), {&x, &bias}, [xn, bn, n](const detail::Node& o) {
    if (double* gx = detail::grad_target(xn))
      for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i];
    if (double* gb = detail::grad_target(bn))
      for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i % n] += o.grad[i];
  });
}

inline Tensor scale(const Tensor& x, double s) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
  auto xn = x.node();
  return detail::make_op(x.shape(), std::move(out), {&x}, [xn, s](const detail::Node& o) {
    if (double* gx = detail::grad_target(xn))
      for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i] * s;
  });
}

/// Adds a constant (non-differentiable) buffer, e.g. an additive attention mask.
inline Tensor add_constant(const Tensor& x, std::span<const double> constant) {
  if (constant.size() != x.numel()) {
    throw ShapeError("add_constant: buffer of " + std::to_string(constant.size()) + " values for " +
                     shape_str(x.shape()));
  }
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + constant[i];
  auto xn = x.node();
  return detail::make_op(x.shape(), std::move(out), {&x}, [xn](const detail::Node& o) {
    if (double* gx = detail::grad_target(xn))
      for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i];
  });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  auto xn = x.node();
  return detail::make_op(std::move(shape), std::move(out), {&x}, [xn](const detail::Node& o) {
    if (double* gx = detail::grad_target(xn))
      for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i];
  });
}

inline Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t width) {
  detail::require_rank2(x, "slice_cols");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (width == 0 || start + width > n) {
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + width) +
                     ") out of range for " + shape_str(x.shape()));
  }
  std::vector<double> out(m * width);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < width; ++j) out[i * width + j] = x[i * n + start + j];
  auto xn = x.node();
  return detail::make_op({m, width}, std::move(out), {&x}, [xn, m, n, start, width](const detail::Node& o) {
    if (double* gx = detail::grad_target(xn))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < width; ++j) gx[i * n + start + j] += o.grad[i * width + j];
  });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts.front().dim(0);
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    detail::require_rank2(p, "concat_cols");
    if (p.dim(0) != m) throw ShapeError("concat_cols: row counts differ, " + shape_str(p.shape()));
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<double> out(m * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto x = parts[k].data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out[i * total + off + j] = x[i * widths[k] + j];
    off += widths[k];
  }
  std::vector<detail::NodePtr> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return detail::make_op_n({m, total}, std::move(out), parts, [nodes, widths, m, total](const detail::Node& o) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (double* g = detail::grad_target(nodes[k]))
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += o.grad[i * total + off + j];
      off += widths[k];
    }
  });
}

/// Concatenation along the first axis; trailing dimensions must agree.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Shape tail(parts.front().shape().begin() + 1, parts.front().shape().end());
  std::size_t rows = 0;
  std::vector<double> out;
  for (const auto& p : parts) {
    if (Shape(p.shape().begin() + 1, p.shape().end()) != tail) {
      throw ShapeError("concat_rows: trailing shapes differ, " + shape_str(p.shape()));
    }
    rows += p.dim(0);
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  Shape shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  std::vector<detail::NodePtr> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return detail::make_op_n(std::move(shape), std::move(out), parts, [nodes](const detail::Node& o) {
    std::size_t off = 0;
    for (const auto& n : nodes) {
      const std::size_t len = n->data.size();
      if (double* g = detail::grad_target(n))
        for (std::size_t i = 0; i < len; ++i) g[i] += o.grad[off + i];
      off += len;
    }
  });
}

/// Gathers rows of a [rows x d] table.
inline Tensor embedding(const Tensor& table, std::span<const int> ids) {
  detail::require_rank2(table, "embedding");
  const std::size_t rows = table.dim(0), d = table.dim(1);
  if (ids.empty()) throw ShapeError("embedding: empty index list");
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      throw ShapeError("embedding: index " + std::to_string(ids[i]) + " outside table " + shape_str(table.shape()));
    }
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  auto tn = table.node();
  std::vector<int> idx(ids.begin(), ids.end());
  return detail::make_op({ids.size(), d}, std::move(out), {&table}, [tn, idx, d](const detail::Node& o) {
    if (double* g = detail::grad_target(tn))
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) g[static_cast<std::size_t>(idx[i]) * d + j] += o.grad[i * d + j];
  });
}

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  auto xn = x.node();
  return detail::make_op({1}, {s}, {&x}, [xn](const detail::Node& o) {
    if (double* gx = detail::grad_target(xn))
      for (std::size_t i = 0; i < xn->data.size(); ++i) gx[i] += o.grad[0];
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

// ---------------------------------------------------------------------------
// Nonlinearities

/// Softmax along `axis` with max subtraction. -inf entries receive exactly
/// zero probability.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
  std::size_t outer = 1, inner = 1;
  const std::size_t n = x.dim(axis);
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const auto in = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t c = 0; c < inner; ++c) {
      const std::size_t base = o * n * inner + c;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, in[base + k * inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double e = std::exp(in[base + k * inner] - mx);
        out[base + k * inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= total;
    }
  }
  auto xn = x.node();
  return detail::make_op(x.shape(), std::move(out), {&x}, [xn, outer, inner, n](const detail::Node& o) {
    double* gx = detail::grad_target(xn);
    if (!gx) return;
    for (std::size_t a = 0; a < outer; ++a) {
      for (std::size_t c = 0; c < inner; ++c) {
        const std::size_t base = a * n * inner + c;
        double dot = 0.0;
        for (std::size_t k = 0; k < n; ++k) dot += o.grad[base + k * inner] * o.data[base + k * inner];
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t idx = base + k * inner;
          gx[idx] += o.data[idx] * (o.grad[idx] - dot);
        }
      }
    }
  });
}

inline constexpr double kLayerNormEps = 1e-5;

/// Normalizes each slice along the last axis, then applies gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw ShapeError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                     " do not fit " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel()), xhat(x.numel()), inv_std(rows);
  const auto in = x.data();
  const auto g = gain.data();
  const auto b = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xr[j] - mu) * inv_std[r];
      out[r * d + j] = xhat[r * d + j] * g[j] + b[j];
    }
  }
  auto xn = x.node(), gn = gain.node(), bn = bias.node();
  return detail::make_op(x.shape(), std::move(out), {&x, &gain, &bias},
                         [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d](const detail::Node& o) {
                           double* gx = detail::grad_target(xn);
                           double* gg = detail::grad_target(gn);
                           double* gb = detail::grad_target(bn);
                           const double* gain_v = gn->data.data();
                           std::vector<double> dxhat(d);
                           for (std::size_t r = 0; r < rows; ++r) {
                             const double* dy = o.grad.data() + r * d;
                             const double* xh = xhat.data() + r * d;
                             if (gg)
                               for (std::size_t j = 0; j < d; ++j) gg[j] += dy[j] * xh[j];
                             if (gb)
                               for (std::size_t j = 0; j < d; ++j) gb[j] += dy[j];
                             if (!gx) continue;
                             double m1 = 0.0, m2 = 0.0;
                             for (std::size_t j = 0; j < d; ++j) {
                               dxhat[j] = dy[j] * gain_v[j];
                               m1 += dxhat[j];
                               m2 += dxhat[j] * xh[j];
                             }
                             m1 /= static_cast<double>(d);
                             m2 /= static_cast<double>(d);
                             for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += inv_std[r] * (dxhat[j] - m1 - xh[j] * m2);
                           }
                         });
}

/// Exact GELU, x * Phi(x).
inline Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] / std::numbers::sqrt2));
  auto xn = x.node();
  return detail::make_op(x.shape(), std::move(out), {&x}, [xn](const detail::Node& o) {
    double* gx = detail::grad_target(xn);
    if (!gx) return;
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const double v = xn->data[i];
      const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      gx[i] += o.grad[i] * (cdf + v * pdf);
    }
  });
}

inline double sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid(x[i]);
  auto xn = x.node();
  return detail::make_op(x.shape(), std::move(out), {&x}, [xn](const detail::Node& o) {
    if (double* gx = detail::grad_target(xn))
      for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i] * o.data[i] * (1.0 - o.data[i]);
  });
}

/// Inverted dropout: survivors are scaled by 1/(1-rate) during training and
/// the op is the identity otherwise.
inline Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    out[i] = x[i] * mask[i];
  }
  auto xn = x.node();
  return detail::make_op(x.shape(), std::move(out), {&x}, [xn, mask = std::move(mask)](const detail::Node& o) {
    if (double* gx = detail::grad_target(xn))
      for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i] * mask[i];
  });
}

// ---------------------------------------------------------------------------
// Losses

inline constexpr double kProbClamp = 1e-7;

/// Mean binary cross-entropy over positions where mask == 1. Predictions are
/// clamped to [1e-7, 1 - 1e-7]; target and mask carry no gradient.
inline Tensor bce_loss(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  if (pred.shape() != target.shape() || pred.shape() != mask.shape()) {
    throw ShapeError("bce_loss: pred " + shape_str(pred.shape()) + ", target " + shape_str(target.shape()) +
                     " and mask " + shape_str(mask.shape()) + " must match");
  }
  double total = 0.0;
  std::size_t support = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    if (mask[i] == 0.0) continue;
    const double p = std::clamp(pred[i], kProbClamp, 1.0 - kProbClamp);
    const double t = target[i];
    total += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
    ++support;
  }
  if (support == 0) throw Error("bce_loss: empty loss support");
  const double denom = static_cast<double>(support);
  auto pn = pred.node(), tn = target.node(), mn = mask.node();
  return detail::make_op({1}, {total / denom}, {&pred}, [pn, tn, mn, denom](const detail::Node& o) {
    double* gp = detail::grad_target(pn);
    if (!gp) return;
    for (std::size_t i = 0; i < pn->data.size(); ++i) {
      if (mn->data[i] == 0.0) continue;
      const double raw = pn->data[i];
      if (raw < kProbClamp || raw > 1.0 - kProbClamp) continue;
      const double t = tn->data[i];
      gp[i] += o.grad[0] * (-(t / raw) + (1.0 - t) / (1.0 - raw)) / denom;
    }
  });
}

/// Mean token cross-entropy of row-wise logits [n x V] against class ids.
inline Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  detail::require_rank2(logits, "cross_entropy");
  const std::size_t n = logits.dim(0), v = logits.dim(1);
  if (targets.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " + shape_str(logits.shape()));
  }
  std::vector<double> probs(n * v);
  double total = 0.0;
  const auto x = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v) {
      throw ShapeError("cross_entropy: target " + std::to_string(targets[i]) + " outside vocabulary of " + std::to_string(v));
    }
    const double* row = x.data() + i * v;
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    const double log_z = std::log(z) + mx;
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] = std::exp(row[j] - log_z);
    total += log_z - row[static_cast<std::size_t>(targets[i])];
  }
  auto ln = logits.node();
  std::vector<int> tgt(targets.begin(), targets.end());
  return detail::make_op({1}, {total / static_cast<double>(n)}, {&logits},
                         [ln, probs = std::move(probs), tgt = std::move(tgt), n, v](const detail::Node& o) {
                           double* g = detail::grad_target(ln);
                           if (!g) return;
                           const double s = o.grad[0] / static_cast<double>(n);
                           for (std::size_t i = 0; i < n; ++i) {
                             for (std::size_t j = 0; j < v; ++j) g[i * v + j] += s * probs[i * v + j];
                             g[i * v + static_cast<std::size_t>(tgt[i])] -= s;
                           }
                         });
}

}  // namespace wordconf
