// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major arrays (rank <= 3) with define-by-run reverse-mode
// differentiation. Every op computes its result eagerly and, when any input
// requires a gradient, records a closure that pushes the output gradient back
// to its parents.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace ltn {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Shape {
  std::array<std::size_t, 3> dims{0, 0, 0};
  std::size_t rank = 0;

  Shape() = default;
  Shape(std::initializer_list<std::size_t> d) {
    if (d.size() > 3) throw ShapeError("Shape: rank > 3 is not supported");
    rank = d.size();
    std::copy(d.begin(), d.end(), dims.begin());
  }

  std::size_t numel() const {
    std::size_t n = 1;
    for (std::size_t i = 0; i < rank; ++i) n *= dims[i];
    return n;
  }
  std::size_t operator[](std::size_t i) const { return dims[i]; }
  std::size_t last() const { return rank == 0 ? 1 : dims[rank - 1]; }

  friend bool operator==(const Shape& a, const Shape& b) {
    if (a.rank != b.rank) return false;
    for (std::size_t i = 0; i < a.rank; ++i)
      if (a.dims[i] != b.dims[i]) return false;
    return true;
  }

  std::string str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < rank; ++i) os << (i ? "," : "") << dims[i];
    os << ']';
    return os.str();
  }
};

namespace detail {

struct Node {
  std::vector<double> data;
  std::vector<double> grad;
  Shape shape;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  const char* op = "leaf";
  std::string name;
  bool requires_grad = false;

  std::vector<double>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Handle to a node in the computation graph. Copies share the node.
class Value {
 public:
  Value() = default;
  explicit Value(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  static Value constant(Shape shape, std::vector<double> data) {
    if (data.size() != shape.numel())
      throw ShapeError("constant: shape " + shape.str() + " needs " + std::to_string(shape.numel()) +
                       " values, got " + std::to_string(data.size()));
    auto n = std::make_shared<detail::Node>();
    n->shape = shape;
    n->data = std::move(data);
    return Value(std::move(n));
  }
  static Value zeros(Shape shape) { return constant(shape, std::vector<double>(shape.numel(), 0.0)); }
  static Value scalar(double v) { return constant(Shape{}, {v}); }
  static Value vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return constant(Shape{n}, std::move(v));
  }

  /// Trainable leaf; its gradient buffer is allocated up front.
  static Value parameter(Shape shape, std::vector<double> data, std::string name) {
    Value v = constant(shape, std::move(data));
    v.node_->requires_grad = true;
    v.node_->name = std::move(name);
    v.node_->grad_buffer();
    return v;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->data.size(); }
  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& name() const { return node_->name; }
  const char* op() const { return node_->op; }
  double item() const {
    if (numel() != 1) throw ShapeError(std::string("item: non-scalar shape ") + shape().str());
    return node_->data[0];
  }
  double operator[](std::size_t i) const { return node_->data[i]; }
  void zero_grad() {
    if (node_->requires_grad) std::fill(node_->grad_buffer().begin(), node_->grad_buffer().end(), 0.0);
  }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& shared() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Builds a result node. The backward closure is dropped when no parent needs
/// a gradient or recording is disabled. This is also the extension point for
/// ops defined outside this header.
inline Value make_op(const char* op, Shape shape, std::vector<double> data, std::initializer_list<Value> parents,
                     std::function<void(detail::Node&)> backward) {
  auto n = std::make_shared<detail::Node>();
  n->op = op;
  n->shape = shape;
  n->data = std::move(data);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      n->requires_grad = true;
      n->parents.reserve(parents.size());
      for (const auto& p : parents) n->parents.push_back(p.shared());
      n->backward = std::move(backward);
    }
  }
  return Value(std::move(n));
}

inline Value make_op(const char* op, Shape shape, std::vector<double> data, const std::vector<Value>& parents,
                     std::function<void(detail::Node&)> backward) {
  auto n = std::make_shared<detail::Node>();
  n->op = op;
  n->shape = shape;
  n->data = std::move(data);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      n->requires_grad = true;
      n->parents.reserve(parents.size());
      for (const auto& p : parents) n->parents.push_back(p.shared());
      n->backward = std::move(backward);
    }
  }
  return Value(std::move(n));
}

namespace detail {

[[noreturn]] inline void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

inline bool needs(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }
inline std::vector<double>& pgrad(Node& self, std::size_t i) { return self.parents[i]->grad_buffer(); }
inline const std::vector<double>& pdata(const Node& self, std::size_t i) { return self.parents[i]->data; }

template <class F, class D>
Value unary(const char* op, const Value& a, F f, D dfdx_from_xy) {
  const auto& x = a.data();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return make_op(op, a.shape(), std::move(y), {a}, [dfdx_from_xy](Node& self) {
    auto& g = pgrad(self, 0);
    const auto& x = pdata(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx_from_xy(x[i], self.data[i]);
  });
}

// Same shape, or rank-2 [R,C] with rank-1 [C] broadcast over rows.
inline bool bias_broadcast(const Shape& a, const Shape& b) {
  return a.rank == 2 && b.rank == 1 && a[1] == b[0];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Value add(const Value& a, const Value& b) {
  if (a.shape() == b.shape()) {
    std::vector<double> y(a.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] + b[i];
    return make_op("add", a.shape(), std::move(y), {a, b}, [](detail::Node& self) {
      for (std::size_t k = 0; k < 2; ++k)
        if (detail::needs(self, k)) {
          auto& g = detail::pgrad(self, k);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
  }
  if (detail::bias_broadcast(a.shape(), b.shape())) {
    const std::size_t rows = a.shape()[0], cols = a.shape()[1];
    std::vector<double> y(a.numel());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = a[r * cols + c] + b[c];
    return make_op("add", a.shape(), std::move(y), {a, b}, [rows, cols](detail::Node& self) {
      if (detail::needs(self, 0)) {
        auto& g = detail::pgrad(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (detail::needs(self, 1)) {
        auto& g = detail::pgrad(self, 1);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) g[c] += self.grad[r * cols + c];
      }
    });
  }
  detail::shape_mismatch("add", a.shape(), b.shape());
}

inline Value neg(const Value& a) {
  return detail::unary("neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

inline Value sub(const Value& a, const Value& b) {
  if (a.shape() == b.shape()) {
    std::vector<double> y(a.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] - b[i];
    return make_op("sub", a.shape(), std::move(y), {a, b}, [](detail::Node& self) {
      if (detail::needs(self, 0)) {
        auto& g = detail::pgrad(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (detail::needs(self, 1)) {
        auto& g = detail::pgrad(self, 1);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
      }
    });
  }
  if (detail::bias_broadcast(a.shape(), b.shape())) return add(a, neg(b));
  detail::shape_mismatch("sub", a.shape(), b.shape());
}

inline Value mul(const Value& a, const Value& b) {
  if (!(a.shape() == b.shape())) detail::shape_mismatch("mul", a.shape(), b.shape());
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * b[i];
  return make_op("mul", a.shape(), std::move(y), {a, b}, [](detail::Node& self) {
    const auto& x0 = detail::pdata(self, 0);
    const auto& x1 = detail::pdata(self, 1);
    if (detail::needs(self, 0)) {
      auto& g = detail::pgrad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x1[i];
    }
    if (detail::needs(self, 1)) {
      auto& g = detail::pgrad(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x0[i];
    }
  });
}

/// Multiplies every entry of `a` by the single entry of `s`.
inline Value scale_by(const Value& a, const Value& s) {
  if (s.numel() != 1) detail::shape_mismatch("scale_by", a.shape(), s.shape());
  const double k = s[0];
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * k;
  return make_op("scale_by", a.shape(), std::move(y), {a, s}, [](detail::Node& self) {
    const auto& x = detail::pdata(self, 0);
    const double k = detail::pdata(self, 1)[0];
    if (detail::needs(self, 0)) {
      auto& g = detail::pgrad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * k;
    }
    if (detail::needs(self, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) acc += self.grad[i] * x[i];
      detail::pgrad(self, 1)[0] += acc;
    }
  });
}

inline Value scale(const Value& a, double k) {
  return detail::unary("scale", a, [k](double x) { return k * x; }, [k](double, double) { return k; });
}

inline Value add_scalar(const Value& a, double c) {
  return detail::unary("add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Value operator+(const Value& a, const Value& b) { return add(a, b); }
inline Value operator-(const Value& a, const Value& b) { return sub(a, b); }
inline Value operator*(const Value& a, const Value& b) { return mul(a, b); }
inline Value operator-(const Value& a) { return neg(a); }
inline Value operator*(double k, const Value& a) { return scale(a, k); }

// ---------------------------------------------------------------------------
// Nonlinearities

inline double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Value tanh(const Value& a) {
  return detail::unary("tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}
inline Value sigmoid(const Value& a) {
  return detail::unary("sigmoid", a, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}
inline Value relu(const Value& a) {
  return detail::unary("relu", a, [](double x) { return x > 0 ? x : 0.0; },
                       [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}
inline Value exp(const Value& a) {
  return detail::unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}
inline Value log(const Value& a) {
  return detail::unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}
inline Value square(const Value& a) {
  return detail::unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}
inline Value sqrt(const Value& a) {
  return detail::unary("sqrt", a, [](double x) { return std::sqrt(x); },
                       [](double, double y) { return 0.5 / y; });
}

/// Clamps into [lo, hi]; the gradient is zero where the clamp is active.
inline Value clamp(const Value& a, double lo, double hi) {
  return detail::unary("clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
                       [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

/// Same data, no gradient path.
inline Value detach(const Value& a) {
  return Value::constant(a.shape(), std::vector<double>(a.data().begin(), a.data().end()));
}

// ---------------------------------------------------------------------------
// Linear algebra

/// Supports [m,k]x[k,n], [m,k]x[k] and [k]x[k,n].
inline Value matmul(const Value& a, const Value& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.rank == 2 && sb.rank == 2 && sa[1] == sb[0]) {
    const std::size_t m = sa[0], k = sa[1], n = sb[1];
    std::vector<double> y(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = a[i * k + p];
        for (std::size_t j = 0; j < n; ++j) y[i * n + j] += aip * b[p * n + j];
      }
    return make_op("matmul", Shape{m, n}, std::move(y), {a, b}, [m, k, n](detail::Node& self) {
      const auto& A = detail::pdata(self, 0);
      const auto& B = detail::pdata(self, 1);
      const auto& G = self.grad;
      if (detail::needs(self, 0)) {
        auto& gA = detail::pgrad(self, 0);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[p * n + j];
            gA[i * k + p] += acc;
          }
      }
      if (detail::needs(self, 1)) {
        auto& gB = detail::pgrad(self, 1);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = A[i * k + p];
            for (std::size_t j = 0; j < n; ++j) gB[p * n + j] += aip * G[i * n + j];
          }
      }
    });
  }
  if (sa.rank == 2 && sb.rank == 1 && sa[1] == sb[0]) {
    const std::size_t m = sa[0], k = sa[1];
    std::vector<double> y(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p];
      y[i] = acc;
    }
    return make_op("matmul", Shape{m}, std::move(y), {a, b}, [m, k](detail::Node& self) {
      const auto& A = detail::pdata(self, 0);
      const auto& x = detail::pdata(self, 1);
      if (detail::needs(self, 0)) {
        auto& gA = detail::pgrad(self, 0);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) gA[i * k + p] += self.grad[i] * x[p];
      }
      if (detail::needs(self, 1)) {
        auto& gx = detail::pgrad(self, 1);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) gx[p] += self.grad[i] * A[i * k + p];
      }
    });
  }
  if (sa.rank == 1 && sb.rank == 2 && sa[0] == sb[0]) {
    const std::size_t k = sb[0], n = sb[1];
    std::vector<double> y(n, 0.0);
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t j = 0; j < n; ++j) y[j] += a[p] * b[p * n + j];
    return make_op("matmul", Shape{n}, std::move(y), {a, b}, [k, n](detail::Node& self) {
      const auto& x = detail::pdata(self, 0);
      const auto& B = detail::pdata(self, 1);
      if (detail::needs(self, 0)) {
        auto& gx = detail::pgrad(self, 0);
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += self.grad[j] * B[p * n + j];
          gx[p] += acc;
        }
      }
      if (detail::needs(self, 1)) {
        auto& gB = detail::pgrad(self, 1);
        for (std::size_t p = 0; p < k; ++p)
          for (std::size_t j = 0; j < n; ++j) gB[p * n + j] += x[p] * self.grad[j];
      }
    });
  }
  detail::shape_mismatch("matmul", sa, sb);
}

inline Value transpose(const Value& a) {
  if (a.shape().rank != 2) throw ShapeError("transpose: expected rank 2, got " + a.shape().str());
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y[j * r + i] = a[i * c + j];
  return make_op("transpose", Shape{c, r}, std::move(y), {a}, [r, c](detail::Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

/// Affine map with weight [out,in]: x [in] -> W x + b, x [B,in] -> x W^T + b.
/// `b` may be left undefined.
inline Value linear(const Value& x, const Value& w, const Value& b = Value()) {
  const Shape& sw = w.shape();
  const Shape& sx = x.shape();
  if (sw.rank != 2 || sx.rank < 1 || sx.rank > 2 || sx.last() != sw[1]) detail::shape_mismatch("linear", sx, sw);
  if (b.defined() && !(b.shape().rank == 1 && b.shape()[0] == sw[0]))
    detail::shape_mismatch("linear(bias)", sw, b.shape());
  const std::size_t out = sw[0], in = sw[1];
  const std::size_t rows = sx.rank == 2 ? sx[0] : 1;
  std::vector<double> y(rows * out);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < out; ++o) {
      double acc = b.defined() ? b[o] : 0.0;
      const double* wr = w.data().data() + o * in;
      const double* xr = x.data().data() + r * in;
      for (std::size_t p = 0; p < in; ++p) acc += wr[p] * xr[p];
      y[r * out + o] = acc;
    }
  const Shape ys = sx.rank == 2 ? Shape{rows, out} : Shape{out};
  const bool has_bias = b.defined();
  auto bw = [rows, out, in, has_bias](detail::Node& self) {
    const auto& X = detail::pdata(self, 0);
    const auto& W = detail::pdata(self, 1);
    const auto& G = self.grad;
    if (detail::needs(self, 0)) {
      auto& gx = detail::pgrad(self, 0);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < out; ++o) {
          const double go = G[r * out + o];
          if (go == 0.0) continue;
          for (std::size_t p = 0; p < in; ++p) gx[r * in + p] += go * W[o * in + p];
        }
    }
    if (detail::needs(self, 1)) {
      auto& gw = detail::pgrad(self, 1);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < out; ++o) {
          const double go = G[r * out + o];
          if (go == 0.0) continue;
          for (std::size_t p = 0; p < in; ++p) gw[o * in + p] += go * X[r * in + p];
        }
    }
    if (has_bias && detail::needs(self, 2)) {
      auto& gb = detail::pgrad(self, 2);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < out; ++o) gb[o] += G[r * out + o];
    }
  };
  if (has_bias) return make_op("linear", ys, std::move(y), {x, w, b}, bw);
  return make_op("linear", ys, std::move(y), {x, w}, bw);
}

// ---------------------------------------------------------------------------
// Reductions and normalization

inline Value sum(const Value& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return make_op("sum", Shape{}, {acc}, {a}, [](detail::Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (auto& gi : g) gi += self.grad[0];
  });
}

inline Value mean(const Value& a) {
  const double n = static_cast<double>(a.numel());
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return make_op("mean", Shape{}, {acc / n}, {a}, [n](detail::Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (auto& gi : g) gi += self.grad[0] / n;
  });
}

/// Sums the last axis: [R,C] -> [R], [C] -> scalar.
inline Value sum_last(const Value& a) {
  if (a.shape().rank == 1) return sum(a);
  if (a.shape().rank != 2) throw ShapeError("sum_last: expected rank 1 or 2, got " + a.shape().str());
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> y(r, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y[i] += a[i * c + j];
  return make_op("sum_last", Shape{r}, std::move(y), {a}, [r, c](detail::Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i];
  });
}

/// Averages over rows: [R,C] -> [C].
inline Value mean_rows(const Value& a) {
  if (a.shape().rank != 2) throw ShapeError("mean_rows: expected rank 2, got " + a.shape().str());
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> y(c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y[j] += a[i * c + j];
  for (auto& v : y) v /= static_cast<double>(r);
  return make_op("mean_rows", Shape{c}, std::move(y), {a}, [r, c](detail::Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j] / static_cast<double>(r);
  });
}

namespace detail {
inline void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows, std::size_t cols,
                         bool take_log) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    double* yr = y.data() + r * cols;
    double mx = xr[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) z += std::exp(xr[j] - mx);
    if (take_log) {
      const double lz = mx + std::log(z);
      for (std::size_t j = 0; j < cols; ++j) yr[j] = xr[j] - lz;
    } else {
      for (std::size_t j = 0; j < cols; ++j) yr[j] = std::exp(xr[j] - mx) / z;
    }
  }
}
}  // namespace detail

/// Softmax over the last axis.
inline Value softmax(const Value& a) {
  const std::size_t cols = a.shape().last();
  const std::size_t rows = a.numel() / cols;
  std::vector<double> y(a.numel());
  detail::softmax_rows(a.data(), y, rows, cols, false);
  return make_op("softmax", a.shape(), std::move(y), {a}, [rows, cols](detail::Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* s = self.data.data() + r * cols;
      const double* go = self.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += go[j] * s[j];
      for (std::size_t j = 0; j < cols; ++j) g[r * cols + j] += s[j] * (go[j] - dot);
    }
  });
}

/// Log-softmax over the last axis.
inline Value log_softmax(const Value& a) {
  const std::size_t cols = a.shape().last();
  const std::size_t rows = a.numel() / cols;
  std::vector<double> y(a.numel());
  detail::softmax_rows(a.data(), y, rows, cols, true);
  return make_op("log_softmax", a.shape(), std::move(y), {a}, [rows, cols](detail::Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* ly = self.data.data() + r * cols;
      const double* go = self.grad.data() + r * cols;
      double gs = 0.0;
      for (std::size_t j = 0; j < cols; ++j) gs += go[j];
      for (std::size_t j = 0; j < cols; ++j) g[r * cols + j] += go[j] - std::exp(ly[j]) * gs;
    }
  });
}

// ---------------------------------------------------------------------------
// Structural ops

/// Concatenates along the last axis. Inputs share rank (1 or 2) and row count.
inline Value concat(const std::vector<Value>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (s0.rank != 1 && s0.rank != 2) throw ShapeError("concat: expected rank 1 or 2, got " + s0.str());
  const std::size_t rows = s0.rank == 2 ? s0[0] : 1;
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.rank != s0.rank || (s.rank == 2 && s[0] != rows)) detail::shape_mismatch("concat", s0, s);
    widths.push_back(s.last());
    total += s.last();
  }
  std::vector<double> y(rows * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < widths[k]; ++j) y[r * total + off + j] = parts[k][r * widths[k] + j];
    off += widths[k];
  }
  const Shape ys = s0.rank == 2 ? Shape{rows, total} : Shape{total};
  return make_op("concat", ys, std::move(y), parts, [rows, total, widths](detail::Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (detail::needs(self, k)) {
        auto& g = detail::pgrad(self, k);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < widths[k]; ++j) g[r * widths[k] + j] += self.grad[r * total + off + j];
      }
      off += widths[k];
    }
  });
}

/// Columns [begin, end) of the last axis.
inline Value slice(const Value& a, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if ((s.rank != 1 && s.rank != 2) || begin >= end || end > s.last())
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " + s.str());
  const std::size_t rows = s.rank == 2 ? s[0] : 1, cols = s.last(), w = end - begin;
  std::vector<double> y(rows * w);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < w; ++j) y[r * w + j] = a[r * cols + begin + j];
  const Shape ys = s.rank == 2 ? Shape{rows, w} : Shape{w};
  return make_op("slice", ys, std::move(y), {a}, [rows, cols, w, begin](detail::Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) g[r * cols + begin + j] += self.grad[r * w + j];
  });
}

/// Row `i` of a rank-2 array.
inline Value row(const Value& a, std::size_t i) {
  const Shape& s = a.shape();
  if (s.rank != 2 || i >= s[0]) throw ShapeError("row: index " + std::to_string(i) + " invalid for " + s.str());
  const std::size_t c = s[1];
  std::vector<double> y(a.data().begin() + static_cast<std::ptrdiff_t>(i * c),
                        a.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
  return make_op("row", Shape{c}, std::move(y), {a}, [i, c](detail::Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j];
  });
}

/// Stacks equal-length vectors into a [n, C] array.
inline Value stack(const std::vector<Value>& rows) {
  if (rows.empty()) throw ShapeError("stack: no inputs");
  const Shape& s0 = rows[0].shape();
  if (s0.rank != 1) throw ShapeError("stack: expected rank-1 inputs, got " + s0.str());
  const std::size_t c = s0[0], n = rows.size();
  std::vector<double> y(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(rows[i].shape() == s0)) detail::shape_mismatch("stack", s0, rows[i].shape());
    std::copy(rows[i].data().begin(), rows[i].data().end(), y.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  return make_op("stack", Shape{n, c}, std::move(y), rows, [n, c](detail::Node& self) {
    for (std::size_t i = 0; i < n; ++i)
      if (detail::needs(self, i)) {
        auto& g = detail::pgrad(self, i);
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
      }
  });
}

/// Repeats a vector as `n` identical rows.
inline Value repeat_rows(const Value& v, std::size_t n) {
  if (v.shape().rank != 1) throw ShapeError("repeat_rows: expected rank 1, got " + v.shape().str());
  const std::size_t c = v.shape()[0];
  std::vector<double> y(n * c);
  for (std::size_t i = 0; i < n; ++i) std::copy(v.data().begin(), v.data().end(), y.begin() + static_cast<std::ptrdiff_t>(i * c));
  return make_op("repeat_rows", Shape{n, c}, std::move(y), {v}, [n, c](detail::Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
  });
}

/// Single-image 2D convolution. x: [C,H,W]; w: [O, C*k*k]; b: [O].
/// Zero padding of `pad` cells on every border.
inline Value conv2d(const Value& x, const Value& w, const Value& b, std::size_t k, std::size_t stride,
                    std::size_t pad) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.rank != 3 || sw.rank != 2 || sw[1] != sx[0] * k * k) detail::shape_mismatch("conv2d", sx, sw);
  if (b.shape().rank != 1 || b.shape()[0] != sw[0]) detail::shape_mismatch("conv2d(bias)", sw, b.shape());
  const std::size_t C = sx[0], H = sx[1], W = sx[2], O = sw[0];
  if (H + 2 * pad < k || W + 2 * pad < k) throw ShapeError("conv2d: kernel larger than padded input " + sx.str());
  const std::size_t Ho = (H + 2 * pad - k) / stride + 1, Wo = (W + 2 * pad - k) / stride + 1;
  auto at = [=](std::size_t c, long i, long j) -> long {
    if (i < 0 || j < 0 || i >= static_cast<long>(H) || j >= static_cast<long>(W)) return -1;
    return static_cast<long>((c * H + static_cast<std::size_t>(i)) * W + static_cast<std::size_t>(j));
  };
  std::vector<double> y(O * Ho * Wo);
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t oi = 0; oi < Ho; ++oi)
      for (std::size_t oj = 0; oj < Wo; ++oj) {
        double acc = b[o];
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t ki = 0; ki < k; ++ki)
            for (std::size_t kj = 0; kj < k; ++kj) {
              const long idx = at(c, static_cast<long>(oi * stride + ki) - static_cast<long>(pad),
                                  static_cast<long>(oj * stride + kj) - static_cast<long>(pad));
              if (idx >= 0) acc += w[o * C * k * k + (c * k + ki) * k + kj] * x[static_cast<std::size_t>(idx)];
            }
        y[(o * Ho + oi) * Wo + oj] = acc;
      }
  return make_op("conv2d", Shape{O, Ho, Wo}, std::move(y), {x, w, b},
                 [=](detail::Node& self) {
                   const auto& X = detail::pdata(self, 0);
                   const auto& Wt = detail::pdata(self, 1);
                   const bool gx_on = detail::needs(self, 0), gw_on = detail::needs(self, 1),
                              gb_on = detail::needs(self, 2);
                   std::vector<double>* gx = gx_on ? &detail::pgrad(self, 0) : nullptr;
                   std::vector<double>* gw = gw_on ? &detail::pgrad(self, 1) : nullptr;
                   std::vector<double>* gb = gb_on ? &detail::pgrad(self, 2) : nullptr;
                   for (std::size_t o = 0; o < O; ++o)
                     for (std::size_t oi = 0; oi < Ho; ++oi)
                       for (std::size_t oj = 0; oj < Wo; ++oj) {
                         const double go = self.grad[(o * Ho + oi) * Wo + oj];
                         if (gb) (*gb)[o] += go;
                         for (std::size_t c = 0; c < C; ++c)
                           for (std::size_t ki = 0; ki < k; ++ki)
                             for (std::size_t kj = 0; kj < k; ++kj) {
                               const long idx = at(c, static_cast<long>(oi * stride + ki) - static_cast<long>(pad),
                                                   static_cast<long>(oj * stride + kj) - static_cast<long>(pad));
                               if (idx < 0) continue;
                               const std::size_t wi = o * C * k * k + (c * k + ki) * k + kj;
                               if (gw) (*gw)[wi] += go * X[static_cast<std::size_t>(idx)];
                               if (gx) (*gx)[static_cast<std::size_t>(idx)] += go * Wt[wi];
                             }
                       }
                 });
}

/// Reinterprets the data under a new shape with the same element count.
inline Value reshape(const Value& a, Shape s) {
  if (s.numel() != a.numel()) detail::shape_mismatch("reshape", a.shape(), s);
  std::vector<double> y(a.data().begin(), a.data().end());
  return make_op("reshape", s, std::move(y), {a}, [](detail::Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Backward pass

/// Nodes reachable from `root` through gradient-carrying edges, parents
/// before children.
inline std::vector<detail::Node*> topological_order(const Value& root) {
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

/// Accumulates d(root)/d(leaf) into every reachable leaf's gradient.
inline void backward(const Value& root) {
  if (root.numel() != 1) throw ShapeError("backward: root must be scalar, got shape " + root.shape().str());
  if (!root.requires_grad()) return;
  const auto order = topological_order(root);
  for (detail::Node* n : order)
    if (n->backward) n->grad.assign(n->data.size(), 0.0);
  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward) n->backward(*n);
  }
}

}  // namespace ltn
