// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#include "vertenet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace vertenet {

#if defined(__GNUC__) || defined(__clang__)
#define VN_RESTRICT __restrict__
#else
#define VN_RESTRICT
#endif

using detail::TapeNode;
using NodePtr = std::shared_ptr<TapeNode>;

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << b << ", " << c << ", " << h << ", " << w << ")";
  return os.str();
}

namespace {

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void check_shape_valid(const Shape& s) {
  check(s.b > 0 && s.c > 0 && s.h > 0 && s.w > 0,
        "tensor shape has a non-positive dim: " + s.str());
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  check(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                    a.shape().str() + " vs " + b.shape().str());
}

NodePtr make_leaf_node(const Shape& s, std::vector<double> data,
                       bool requires_grad) {
  check_shape_valid(s);
  check(data.size() == s.numel(), "tensor data size " +
                                      std::to_string(data.size()) +
                                      " does not match shape " + s.str());
  auto n = std::make_shared<TapeNode>();
  n->shape = s;
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  n->leaf = true;
  return n;
}

Tensor wrap(NodePtr n);

thread_local bool g_grad_recording = true;

// Records one primitive application on the tape. When no input carries
// gradients (or recording is suspended) the result is a plain constant and
// the graph edge is dropped.
Tensor make_op(const Shape& shape, std::vector<double> data,
               std::vector<Tensor> inputs,
               std::function<void(TapeNode&)> bwd) {
  auto n = std::make_shared<TapeNode>();
  n->shape = shape;
  n->data = std::move(data);
  bool grad = false;
  if (g_grad_recording) {
    for (const auto& in : inputs) grad = grad || in.requires_grad();
  }
  n->requires_grad = grad;
  n->leaf = false;
  if (grad) {
    n->parents.reserve(inputs.size());
    for (const auto& in : inputs) n->parents.push_back(in.node());
    n->backward_fn = std::move(bwd);
  }
  return wrap(n);
}

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_recording) {
  g_grad_recording = false;
}

NoGradGuard::~NoGradGuard() { g_grad_recording = previous_; }

bool grad_recording_enabled() { return g_grad_recording; }

Tensor wrap_node(NodePtr n) {
  Tensor t;
  t.node_ = std::move(n);
  return t;
}

namespace {
Tensor wrap(NodePtr n) { return wrap_node(std::move(n)); }
}  // namespace

Tensor Tensor::zeros(const Shape& s, bool requires_grad) {
  check_shape_valid(s);
  return wrap_node(make_leaf_node(s, std::vector<double>(s.numel(), 0.0),
                                  requires_grad));
}

Tensor Tensor::full(const Shape& s, double value, bool requires_grad) {
  check_shape_valid(s);
  return wrap_node(
      make_leaf_node(s, std::vector<double>(s.numel(), value), requires_grad));
}

Tensor Tensor::from_vector(const Shape& s, std::vector<double> values,
                           bool requires_grad) {
  return wrap_node(make_leaf_node(s, std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_vector({1, 1, 1, 1}, {value}, requires_grad);
}

Tensor Tensor::randn(const Shape& s, Rng& rng, double stdev,
                     bool requires_grad) {
  check_shape_valid(s);
  std::vector<double> v(s.numel());
  for (auto& x : v) x = rng.normal(0.0, stdev);
  return wrap_node(make_leaf_node(s, std::move(v), requires_grad));
}

const Shape& Tensor::shape() const {
  check(defined(), "use of an undefined tensor");
  return node_->shape;
}

bool Tensor::requires_grad() const { return defined() && node_->requires_grad; }

void Tensor::set_requires_grad(bool v) {
  check(defined(), "use of an undefined tensor");
  check(node_->leaf, "requires_grad can only be toggled on leaf tensors");
  node_->requires_grad = v;
}

std::span<const double> Tensor::data() const {
  check(defined(), "use of an undefined tensor");
  return node_->data;
}

std::span<double> Tensor::data_mut() {
  check(defined(), "use of an undefined tensor");
  check(node_->leaf, "in-place mutation is reserved for leaf tensors");
  return node_->data;
}

double Tensor::value() const {
  check(numel() == 1, "value() called on non-scalar tensor " + shape().str());
  return node_->data[0];
}

double Tensor::at(int b, int c, int y, int x) const {
  const Shape& s = shape();
  check(b >= 0 && b < s.b && c >= 0 && c < s.c && y >= 0 && y < s.h && x >= 0 &&
            x < s.w,
        "at(): index out of range for " + s.str());
  return node_->data[((static_cast<std::size_t>(b) * s.c + c) * s.h + y) * s.w +
                     x];
}

bool Tensor::has_grad() const {
  return defined() && node_->grad.size() == node_->data.size();
}

std::span<const double> Tensor::grad() const {
  check(has_grad(), "tensor has no accumulated gradient");
  return node_->grad;
}

void Tensor::zero_grad() {
  check(defined(), "use of an undefined tensor");
  node_->grad.assign(node_->data.size(), 0.0);
}

Tensor Tensor::detach() const {
  check(defined(), "use of an undefined tensor");
  return wrap_node(make_leaf_node(node_->shape, node_->data, false));
}

Tensor Tensor::clone() const {
  check(defined(), "use of an undefined tensor");
  return wrap_node(make_leaf_node(node_->shape, node_->data, node_->requires_grad));
}

void backward(const Tensor& root) {
  check(root.defined(), "backward() on an undefined tensor");
  check(root.numel() == 1, "backward() expects a scalar root, got " +
                               root.shape().str());
  if (!root.requires_grad()) return;

  // Reverse topological order over grad-carrying nodes: every consumer is
  // replayed before its inputs.
  std::vector<TapeNode*> order;
  std::unordered_set<TapeNode*> seen;
  struct Frame {
    TapeNode* node;
    std::size_t next = 0;
  };
  std::vector<Frame> stack;
  stack.push_back({root.node().get()});
  seen.insert(root.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->parents.size()) {
      TapeNode* p = f.node->parents[f.next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad();
  root.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TapeNode* n = *it;
    if (!n->backward_fn) continue;
    for (auto& p : n->parents) {
      if (p->requires_grad) p->ensure_grad();
    }
    n->backward_fn(*n);
  }
}

bool all_finite(const Tensor& t) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

namespace {

template <class F, class DF>
Tensor unary_op(const Tensor& x, F f, DF df) {
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = f(xs[i]);
  return make_op(x.shape(), std::move(out), {x}, [x, df](TapeNode& self) {
    auto xn = x.node();
    if (!xn->requires_grad) return;
    const auto xs = xn->data;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      xn->grad[i] += self.grad[i] * df(xs[i], self.data[i]);
    }
  });
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  const auto as = a.data();
  const auto bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < as.size(); ++i) out[i] = as[i] + bs[i];
  return make_op(a.shape(), std::move(out), {a, b}, [a, b](TapeNode& self) {
    if (a.node()->requires_grad) {
      auto& g = a.node()->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (b.node()->requires_grad) {
      auto& g = b.node()->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  const auto as = a.data();
  const auto bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < as.size(); ++i) out[i] = as[i] - bs[i];
  return make_op(a.shape(), std::move(out), {a, b}, [a, b](TapeNode& self) {
    if (a.node()->requires_grad) {
      auto& g = a.node()->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (b.node()->requires_grad) {
      auto& g = b.node()->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  const auto as = a.data();
  const auto bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < as.size(); ++i) out[i] = as[i] * bs[i];
  return make_op(a.shape(), std::move(out), {a, b}, [a, b](TapeNode& self) {
    const auto& av = a.node()->data;
    const auto& bv = b.node()->data;
    if (a.node()->requires_grad) {
      auto& g = a.node()->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (b.node()->requires_grad) {
      auto& g = b.node()->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& x, double s) {
  return unary_op(
      x, [s](double v) { return v * s; },
      [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary_op(
      x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  return unary_op(
      x,
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        return cdf + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x, [](double v) { return stable_sigmoid(v); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& x) {
  return unary_op(
      x,
      [](double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); },
      [](double v, double) { return stable_sigmoid(v); });
}

Tensor elem_log(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Tensor elem_abs(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor pow_const(const Tensor& x, double exponent) {
  return unary_op(
      x, [exponent](double v) { return std::pow(v, exponent); },
      [exponent](double v, double) {
        return exponent * std::pow(v, exponent - 1.0);
      });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  check(lo <= hi, "clamp: lo > hi");
  return unary_op(
      x,
      [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](double v, double) {
        return (v >= lo && v <= hi) ? 1.0 : 0.0;
      });
}

// ---------------------------------------------------------------------------
// broadcasts
// ---------------------------------------------------------------------------

namespace {

void check_channel_vector(const Tensor& x, const Tensor& p, const char* op) {
  const Shape& ps = p.shape();
  check(ps.b == 1 && ps.h == 1 && ps.w == 1 && ps.c == x.shape().c,
        std::string(op) + ": expected channel vector (1, " +
            std::to_string(x.shape().c) + ", 1, 1), got " + ps.str());
}

void check_plane(const Tensor& x, const Tensor& p, const char* op) {
  const Shape& xs = x.shape();
  const Shape& ps = p.shape();
  check(ps.b == xs.b && ps.c == 1 && ps.h == xs.h && ps.w == xs.w,
        std::string(op) + ": expected plane (" + std::to_string(xs.b) +
            ", 1, " + std::to_string(xs.h) + ", " + std::to_string(xs.w) +
            "), got " + ps.str());
}

}  // namespace

Tensor add_bcast_c(const Tensor& x, const Tensor& p) {
  check_channel_vector(x, p, "add_bcast_c");
  const Shape& s = x.shape();
  const auto xs = x.data();
  const auto ps = p.data();
  std::vector<double> out(xs.size());
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  for (int b = 0; b < s.b; ++b) {
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(b) * s.c + c) * plane;
      const double v = ps[c];
      for (std::size_t i = 0; i < plane; ++i) out[base + i] = xs[base + i] + v;
    }
  }
  return make_op(s, std::move(out), {x, p}, [x, p](TapeNode& self) {
    const Shape& s = self.shape;
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    if (x.node()->requires_grad) {
      auto& g = x.node()->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (p.node()->requires_grad) {
      auto& g = p.node()->grad;
      for (int b = 0; b < s.b; ++b) {
        for (int c = 0; c < s.c; ++c) {
          const std::size_t base =
              (static_cast<std::size_t>(b) * s.c + c) * plane;
          double acc = 0.0;
          for (std::size_t i = 0; i < plane; ++i) acc += self.grad[base + i];
          g[c] += acc;
        }
      }
    }
  });
}

Tensor mul_bcast_c(const Tensor& x, const Tensor& p) {
  check_channel_vector(x, p, "mul_bcast_c");
  const Shape& s = x.shape();
  const auto xs = x.data();
  const auto ps = p.data();
  std::vector<double> out(xs.size());
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  for (int b = 0; b < s.b; ++b) {
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(b) * s.c + c) * plane;
      const double v = ps[c];
      for (std::size_t i = 0; i < plane; ++i) out[base + i] = xs[base + i] * v;
    }
  }
  return make_op(s, std::move(out), {x, p}, [x, p](TapeNode& self) {
    const Shape& s = self.shape;
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    const auto& xv = x.node()->data;
    const auto& pv = p.node()->data;
    for (int b = 0; b < s.b; ++b) {
      for (int c = 0; c < s.c; ++c) {
        const std::size_t base = (static_cast<std::size_t>(b) * s.c + c) * plane;
        if (x.node()->requires_grad) {
          auto& g = x.node()->grad;
          const double v = pv[c];
          for (std::size_t i = 0; i < plane; ++i)
            g[base + i] += self.grad[base + i] * v;
        }
        if (p.node()->requires_grad) {
          double acc = 0.0;
          for (std::size_t i = 0; i < plane; ++i)
            acc += self.grad[base + i] * xv[base + i];
          p.node()->grad[c] += acc;
        }
      }
    }
  });
}

Tensor div_bcast_c(const Tensor& x, const Tensor& p) {
  check_channel_vector(x, p, "div_bcast_c");
  for (double v : p.data()) {
    check(std::isfinite(v) && v != 0.0, "div_bcast_c: zero or non-finite divisor");
  }
  const Shape& s = x.shape();
  const auto xs = x.data();
  const auto ps = p.data();
  std::vector<double> out(xs.size());
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  for (int b = 0; b < s.b; ++b) {
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(b) * s.c + c) * plane;
      const double inv = 1.0 / ps[c];
      for (std::size_t i = 0; i < plane; ++i) out[base + i] = xs[base + i] * inv;
    }
  }
  return make_op(s, std::move(out), {x, p}, [x, p](TapeNode& self) {
    const Shape& s = self.shape;
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    const auto& xv = x.node()->data;
    const auto& pv = p.node()->data;
    for (int b = 0; b < s.b; ++b) {
      for (int c = 0; c < s.c; ++c) {
        const std::size_t base = (static_cast<std::size_t>(b) * s.c + c) * plane;
        const double inv = 1.0 / pv[c];
        if (x.node()->requires_grad) {
          auto& g = x.node()->grad;
          for (std::size_t i = 0; i < plane; ++i)
            g[base + i] += self.grad[base + i] * inv;
        }
        if (p.node()->requires_grad) {
          double acc = 0.0;
          for (std::size_t i = 0; i < plane; ++i)
            acc += self.grad[base + i] * xv[base + i];
          p.node()->grad[c] -= acc * inv * inv;
        }
      }
    }
  });
}

Tensor add_bcast_plane(const Tensor& x, const Tensor& p) {
  check_plane(x, p, "add_bcast_plane");
  const Shape& s = x.shape();
  const auto xs = x.data();
  const auto ps = p.data();
  std::vector<double> out(xs.size());
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  for (int b = 0; b < s.b; ++b) {
    const std::size_t pbase = static_cast<std::size_t>(b) * plane;
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(b) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i)
        out[base + i] = xs[base + i] + ps[pbase + i];
    }
  }
  return make_op(s, std::move(out), {x, p}, [x, p](TapeNode& self) {
    const Shape& s = self.shape;
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    if (x.node()->requires_grad) {
      auto& g = x.node()->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (p.node()->requires_grad) {
      auto& g = p.node()->grad;
      for (int b = 0; b < s.b; ++b) {
        const std::size_t pbase = static_cast<std::size_t>(b) * plane;
        for (int c = 0; c < s.c; ++c) {
          const std::size_t base =
              (static_cast<std::size_t>(b) * s.c + c) * plane;
          for (std::size_t i = 0; i < plane; ++i)
            g[pbase + i] += self.grad[base + i];
        }
      }
    }
  });
}

Tensor mul_bcast_plane(const Tensor& x, const Tensor& p) {
  check_plane(x, p, "mul_bcast_plane");
  const Shape& s = x.shape();
  const auto xs = x.data();
  const auto ps = p.data();
  std::vector<double> out(xs.size());
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  for (int b = 0; b < s.b; ++b) {
    const std::size_t pbase = static_cast<std::size_t>(b) * plane;
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(b) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i)
        out[base + i] = xs[base + i] * ps[pbase + i];
    }
  }
  return make_op(s, std::move(out), {x, p}, [x, p](TapeNode& self) {
    const Shape& s = self.shape;
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    const auto& xv = x.node()->data;
    const auto& pv = p.node()->data;
    for (int b = 0; b < s.b; ++b) {
      const std::size_t pbase = static_cast<std::size_t>(b) * plane;
      for (int c = 0; c < s.c; ++c) {
        const std::size_t base = (static_cast<std::size_t>(b) * s.c + c) * plane;
        if (x.node()->requires_grad) {
          auto& g = x.node()->grad;
          for (std::size_t i = 0; i < plane; ++i)
            g[base + i] += self.grad[base + i] * pv[pbase + i];
        }
        if (p.node()->requires_grad) {
          auto& g = p.node()->grad;
          for (std::size_t i = 0; i < plane; ++i)
            g[pbase + i] += self.grad[base + i] * xv[base + i];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return make_op({1, 1, 1, 1}, {acc}, {x}, [x](TapeNode& self) {
    if (!x.node()->requires_grad) return;
    auto& g = x.node()->grad;
    const double gv = self.grad[0];
    for (auto& v : g) v += gv;
  });
}

Tensor mean_all(const Tensor& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mean_bhw(const Tensor& x) {
  const Shape& s = x.shape();
  const auto xs = x.data();
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  const double inv = 1.0 / (static_cast<double>(s.b) * plane);
  std::vector<double> out(s.c, 0.0);
  for (int b = 0; b < s.b; ++b) {
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(b) * s.c + c) * plane;
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) acc += xs[base + i];
      out[c] += acc;
    }
  }
  for (auto& v : out) v *= inv;
  return make_op({1, s.c, 1, 1}, std::move(out), {x}, [x, inv](TapeNode& self) {
    if (!x.node()->requires_grad) return;
    const Shape& s = x.node()->shape;
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    auto& g = x.node()->grad;
    for (int b = 0; b < s.b; ++b) {
      for (int c = 0; c < s.c; ++c) {
        const std::size_t base = (static_cast<std::size_t>(b) * s.c + c) * plane;
        const double gv = self.grad[c] * inv;
        for (std::size_t i = 0; i < plane; ++i) g[base + i] += gv;
      }
    }
  });
}

Tensor mean_c(const Tensor& x) {
  const Shape& s = x.shape();
  const auto xs = x.data();
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  const double inv = 1.0 / s.c;
  std::vector<double> out(static_cast<std::size_t>(s.b) * plane, 0.0);
  for (int b = 0; b < s.b; ++b) {
    const std::size_t obase = static_cast<std::size_t>(b) * plane;
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(b) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[obase + i] += xs[base + i];
    }
  }
  for (auto& v : out) v *= inv;
  return make_op({s.b, 1, s.h, s.w}, std::move(out), {x},
                 [x, inv](TapeNode& self) {
                   if (!x.node()->requires_grad) return;
                   const Shape& s = x.node()->shape;
                   const std::size_t plane =
                       static_cast<std::size_t>(s.h) * s.w;
                   auto& g = x.node()->grad;
                   for (int b = 0; b < s.b; ++b) {
                     const std::size_t obase = static_cast<std::size_t>(b) * plane;
                     for (int c = 0; c < s.c; ++c) {
                       const std::size_t base =
                           (static_cast<std::size_t>(b) * s.c + c) * plane;
                       for (std::size_t i = 0; i < plane; ++i)
                         g[base + i] += self.grad[obase + i] * inv;
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// structure
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, const Shape& s) {
  check_shape_valid(s);
  check(s.numel() == x.numel(), "reshape: numel mismatch " + x.shape().str() +
                                    " -> " + s.str());
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_op(s, std::move(out), {x}, [x](TapeNode& self) {
    if (!x.node()->requires_grad) return;
    auto& g = x.node()->grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor transpose_hw(const Tensor& x) {
  const Shape& s = x.shape();
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  for (int bc = 0; bc < s.b * s.c; ++bc) {
    const std::size_t base = static_cast<std::size_t>(bc) * plane;
    for (int i = 0; i < s.h; ++i) {
      for (int j = 0; j < s.w; ++j) {
        out[base + static_cast<std::size_t>(j) * s.h + i] =
            xs[base + static_cast<std::size_t>(i) * s.w + j];
      }
    }
  }
  return make_op({s.b, s.c, s.w, s.h}, std::move(out), {x},
                 [x](TapeNode& self) {
                   if (!x.node()->requires_grad) return;
                   const Shape& s = x.node()->shape;
                   const std::size_t plane =
                       static_cast<std::size_t>(s.h) * s.w;
                   auto& g = x.node()->grad;
                   for (int bc = 0; bc < s.b * s.c; ++bc) {
                     const std::size_t base = static_cast<std::size_t>(bc) * plane;
                     for (int i = 0; i < s.h; ++i) {
                       for (int j = 0; j < s.w; ++j) {
                         g[base + static_cast<std::size_t>(i) * s.w + j] +=
                             self.grad[base + static_cast<std::size_t>(j) * s.h + i];
                       }
                     }
                   }
                 });
}

Tensor concat_c(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  check(as.b == bs.b && as.h == bs.h && as.w == bs.w,
        "concat_c: shape mismatch " + as.str() + " vs " + bs.str());
  const Shape os{as.b, as.c + bs.c, as.h, as.w};
  const std::size_t plane = static_cast<std::size_t>(as.h) * as.w;
  std::vector<double> out(os.numel());
  const auto av = a.data();
  const auto bv = b.data();
  for (int n = 0; n < as.b; ++n) {
    const std::size_t abase = static_cast<std::size_t>(n) * as.c * plane;
    const std::size_t bbase = static_cast<std::size_t>(n) * bs.c * plane;
    const std::size_t obase = static_cast<std::size_t>(n) * os.c * plane;
    std::copy(av.begin() + abase, av.begin() + abase + as.c * plane,
              out.begin() + obase);
    std::copy(bv.begin() + bbase, bv.begin() + bbase + bs.c * plane,
              out.begin() + obase + as.c * plane);
  }
  return make_op(os, std::move(out), {a, b}, [a, b](TapeNode& self) {
    const Shape& as = a.node()->shape;
    const Shape& bs = b.node()->shape;
    const std::size_t plane = static_cast<std::size_t>(as.h) * as.w;
    const int oc = as.c + bs.c;
    for (int n = 0; n < as.b; ++n) {
      const std::size_t obase = static_cast<std::size_t>(n) * oc * plane;
      if (a.node()->requires_grad) {
        auto& g = a.node()->grad;
        const std::size_t abase = static_cast<std::size_t>(n) * as.c * plane;
        for (std::size_t i = 0; i < as.c * plane; ++i)
          g[abase + i] += self.grad[obase + i];
      }
      if (b.node()->requires_grad) {
        auto& g = b.node()->grad;
        const std::size_t bbase = static_cast<std::size_t>(n) * bs.c * plane;
        for (std::size_t i = 0; i < bs.c * plane; ++i)
          g[bbase + i] += self.grad[obase + as.c * plane + i];
      }
    }
  });
}

Tensor slice_c(const Tensor& x, int c0, int c1) {
  const Shape& s = x.shape();
  check(0 <= c0 && c0 < c1 && c1 <= s.c,
        "slice_c: bad channel range [" + std::to_string(c0) + ", " +
            std::to_string(c1) + ") for " + s.str());
  const Shape os{s.b, c1 - c0, s.h, s.w};
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  const auto xs = x.data();
  std::vector<double> out(os.numel());
  for (int n = 0; n < s.b; ++n) {
    const std::size_t ibase =
        (static_cast<std::size_t>(n) * s.c + c0) * plane;
    const std::size_t obase = static_cast<std::size_t>(n) * os.c * plane;
    std::copy(xs.begin() + ibase, xs.begin() + ibase + os.c * plane,
              out.begin() + obase);
  }
  return make_op(os, std::move(out), {x}, [x, c0](TapeNode& self) {
    if (!x.node()->requires_grad) return;
    const Shape& s = x.node()->shape;
    const Shape& os = self.shape;
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    auto& g = x.node()->grad;
    for (int n = 0; n < s.b; ++n) {
      const std::size_t ibase = (static_cast<std::size_t>(n) * s.c + c0) * plane;
      const std::size_t obase = static_cast<std::size_t>(n) * os.c * plane;
      for (std::size_t i = 0; i < os.c * plane; ++i)
        g[ibase + i] += self.grad[obase + i];
    }
  });
}

Tensor replicate_pad(const Tensor& x, int top, int bottom, int left,
                     int right) {
  check(top >= 0 && bottom >= 0 && left >= 0 && right >= 0,
        "replicate_pad: negative padding");
  if (top == 0 && bottom == 0 && left == 0 && right == 0) return x;
  const Shape& s = x.shape();
  const Shape os{s.b, s.c, s.h + top + bottom, s.w + left + right};
  const auto xs = x.data();
  std::vector<double> out(os.numel());
  for (int bc = 0; bc < s.b * s.c; ++bc) {
    const std::size_t ibase =
        static_cast<std::size_t>(bc) * s.h * s.w;
    const std::size_t obase =
        static_cast<std::size_t>(bc) * os.h * os.w;
    for (int oy = 0; oy < os.h; ++oy) {
      const int iy = std::clamp(oy - top, 0, s.h - 1);
      for (int ox = 0; ox < os.w; ++ox) {
        const int ix = std::clamp(ox - left, 0, s.w - 1);
        out[obase + static_cast<std::size_t>(oy) * os.w + ox] =
            xs[ibase + static_cast<std::size_t>(iy) * s.w + ix];
      }
    }
  }
  return make_op(os, std::move(out), {x}, [x, top, left](TapeNode& self) {
    if (!x.node()->requires_grad) return;
    const Shape& s = x.node()->shape;
    const Shape& os = self.shape;
    auto& g = x.node()->grad;
    for (int bc = 0; bc < s.b * s.c; ++bc) {
      const std::size_t ibase = static_cast<std::size_t>(bc) * s.h * s.w;
      const std::size_t obase = static_cast<std::size_t>(bc) * os.h * os.w;
      for (int oy = 0; oy < os.h; ++oy) {
        const int iy = std::clamp(oy - top, 0, s.h - 1);
        for (int ox = 0; ox < os.w; ++ox) {
          const int ix = std::clamp(ox - left, 0, s.w - 1);
          g[ibase + static_cast<std::size_t>(iy) * s.w + ix] +=
              self.grad[obase + static_cast<std::size_t>(oy) * os.w + ox];
        }
      }
    }
  });
}

Tensor crop_spatial(const Tensor& x, int top, int left, int h, int w) {
  const Shape& s = x.shape();
  check(h > 0 && w > 0 && top >= 0 && left >= 0 && top + h <= s.h &&
            left + w <= s.w,
        "crop_spatial: window out of range for " + s.str());
  if (top == 0 && left == 0 && h == s.h && w == s.w) return x;
  const Shape os{s.b, s.c, h, w};
  const auto xs = x.data();
  std::vector<double> out(os.numel());
  for (int bc = 0; bc < s.b * s.c; ++bc) {
    const std::size_t ibase = static_cast<std::size_t>(bc) * s.h * s.w;
    const std::size_t obase = static_cast<std::size_t>(bc) * h * w;
    for (int oy = 0; oy < h; ++oy) {
      const double* src =
          xs.data() + ibase + static_cast<std::size_t>(top + oy) * s.w + left;
      std::copy(src, src + w, out.begin() + obase +
                                   static_cast<std::size_t>(oy) * w);
    }
  }
  return make_op(os, std::move(out), {x}, [x, top, left](TapeNode& self) {
    if (!x.node()->requires_grad) return;
    const Shape& s = x.node()->shape;
    const Shape& os = self.shape;
    auto& g = x.node()->grad;
    for (int bc = 0; bc < s.b * s.c; ++bc) {
      const std::size_t ibase = static_cast<std::size_t>(bc) * s.h * s.w;
      const std::size_t obase = static_cast<std::size_t>(bc) * os.h * os.w;
      for (int oy = 0; oy < os.h; ++oy) {
        for (int ox = 0; ox < os.w; ++ox) {
          g[ibase + static_cast<std::size_t>(top + oy) * s.w + left + ox] +=
              self.grad[obase + static_cast<std::size_t>(oy) * os.w + ox];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// linear algebra / convolution
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  check(as.b == bs.b && as.c == bs.c && as.w == bs.h,
        "matmul: incompatible shapes " + as.str() + " x " + bs.str());
  const int m = as.h, k = as.w, n = bs.w;
  const Shape os{as.b, as.c, m, n};
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(os.numel(), 0.0);
  for (int bc = 0; bc < as.b * as.c; ++bc) {
    const double* A = av.data() + static_cast<std::size_t>(bc) * m * k;
    const double* B = bv.data() + static_cast<std::size_t>(bc) * k * n;
    double* C = out.data() + static_cast<std::size_t>(bc) * m * n;
    for (int i = 0; i < m; ++i) {
      for (int kk = 0; kk < k; ++kk) {
        const double aik = A[static_cast<std::size_t>(i) * k + kk];
        const double* VN_RESTRICT Brow = B + static_cast<std::size_t>(kk) * n;
        double* VN_RESTRICT Crow = C + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) Crow[j] += aik * Brow[j];
      }
    }
  }
  return make_op(os, std::move(out), {a, b}, [a, b](TapeNode& self) {
    const Shape& as = a.node()->shape;
    const Shape& bs = b.node()->shape;
    const int m = as.h, k = as.w, n = bs.w;
    const auto& av = a.node()->data;
    const auto& bv = b.node()->data;
    for (int bc = 0; bc < as.b * as.c; ++bc) {
      const double* A = av.data() + static_cast<std::size_t>(bc) * m * k;
      const double* B = bv.data() + static_cast<std::size_t>(bc) * k * n;
      const double* G = self.grad.data() + static_cast<std::size_t>(bc) * m * n;
      if (a.node()->requires_grad) {
        double* GA = a.node()->grad.data() + static_cast<std::size_t>(bc) * m * k;
        for (int i = 0; i < m; ++i) {
          for (int kk = 0; kk < k; ++kk) {
            const double* VN_RESTRICT Brow = B + static_cast<std::size_t>(kk) * n;
            const double* VN_RESTRICT Grow = G + static_cast<std::size_t>(i) * n;
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += Grow[j] * Brow[j];
            GA[static_cast<std::size_t>(i) * k + kk] += acc;
          }
        }
      }
      if (b.node()->requires_grad) {
        double* GB = b.node()->grad.data() + static_cast<std::size_t>(bc) * k * n;
        for (int i = 0; i < m; ++i) {
          const double* VN_RESTRICT Grow = G + static_cast<std::size_t>(i) * n;
          for (int kk = 0; kk < k; ++kk) {
            const double aik = A[static_cast<std::size_t>(i) * k + kk];
            double* VN_RESTRICT GBrow = GB + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) GBrow[j] += aik * Grow[j];
          }
        }
      }
    }
  });
}

namespace {

// Valid output range [lo, hi) along one axis for a given kernel tap: input
// index o*stride + k - pad must land in [0, extent).
struct TapRange {
  int lo, hi;
};

TapRange tap_range(int out_extent, int in_extent, int stride, int k, int pad) {
  int lo = 0;
  const int shift = k - pad;
  if (shift < 0) lo = (-shift + stride - 1) / stride;
  // last o with o*stride + shift <= in_extent - 1
  const int numerator = in_extent - 1 - shift;
  const int last = numerator < 0 ? -1 : numerator / stride;
  const int hi = std::max(std::min(last + 1, out_extent), 0);
  return {std::min(lo, out_extent), hi};
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  check(stride >= 1, "conv2d: stride must be >= 1");
  check(pad >= 0, "conv2d: negative padding");
  check(ws.c == xs.c, "conv2d: weight expects " + std::to_string(ws.c) +
                          " input channels, input has " +
                          std::to_string(xs.c));
  check(ws.h <= xs.h + 2 * pad && ws.w <= xs.w + 2 * pad,
        "conv2d: kernel " + ws.str() + " larger than padded input " +
            xs.str());
  const int ho = (xs.h + 2 * pad - ws.h) / stride + 1;
  const int wo = (xs.w + 2 * pad - ws.w) / stride + 1;
  const Shape os{xs.b, ws.b, ho, wo};
  const auto xv = x.data();
  const auto wv = w.data();
  std::vector<double> out(os.numel(), 0.0);
  for (int n = 0; n < xs.b; ++n) {
    for (int co = 0; co < ws.b; ++co) {
      double* O = out.data() +
                  (static_cast<std::size_t>(n) * ws.b + co) * ho * wo;
      for (int ci = 0; ci < xs.c; ++ci) {
        const double* X =
            xv.data() + (static_cast<std::size_t>(n) * xs.c + ci) * xs.h * xs.w;
        const double* W =
            wv.data() + (static_cast<std::size_t>(co) * ws.c + ci) * ws.h * ws.w;
        for (int ky = 0; ky < ws.h; ++ky) {
          const TapRange ry = tap_range(ho, xs.h, stride, ky, pad);
          for (int kx = 0; kx < ws.w; ++kx) {
            const double wval = W[static_cast<std::size_t>(ky) * ws.w + kx];
            if (wval == 0.0) continue;
            const TapRange rx = tap_range(wo, xs.w, stride, kx, pad);
            if (rx.lo >= rx.hi) continue;
            for (int oy = ry.lo; oy < ry.hi; ++oy) {
              const int iy = oy * stride + ky - pad;
              const double* Xrow = X + static_cast<std::size_t>(iy) * xs.w +
                                   static_cast<std::size_t>(rx.lo) * stride +
                                   kx - pad;
              double* Orow = O + static_cast<std::size_t>(oy) * wo;
              if (stride == 1) {
                for (int ox = rx.lo; ox < rx.hi; ++ox) {
                  Orow[ox] += wval * Xrow[ox - rx.lo];
                }
              } else {
                for (int ox = rx.lo; ox < rx.hi; ++ox) {
                  Orow[ox] += wval * Xrow[static_cast<std::size_t>(ox - rx.lo) *
                                          stride];
                }
              }
            }
          }
        }
      }
    }
  }
  return make_op(os, std::move(out), {x, w},
                 [x, w, stride, pad](TapeNode& self) {
    const Shape& xs = x.node()->shape;
    const Shape& ws = w.node()->shape;
    const Shape& os = self.shape;
    const auto& xv = x.node()->data;
    const auto& wv = w.node()->data;
    const bool need_gx = x.node()->requires_grad;
    const bool need_gw = w.node()->requires_grad;
    for (int n = 0; n < xs.b; ++n) {
      for (int co = 0; co < ws.b; ++co) {
        const double* G = self.grad.data() +
                          (static_cast<std::size_t>(n) * ws.b + co) * os.h * os.w;
        for (int ci = 0; ci < xs.c; ++ci) {
          const double* X = xv.data() +
                            (static_cast<std::size_t>(n) * xs.c + ci) * xs.h * xs.w;
          const double* W = wv.data() +
                            (static_cast<std::size_t>(co) * ws.c + ci) * ws.h * ws.w;
          double* GX = need_gx ? x.node()->grad.data() +
                                     (static_cast<std::size_t>(n) * xs.c + ci) *
                                         xs.h * xs.w
                               : nullptr;
          double* GW = need_gw ? w.node()->grad.data() +
                                     (static_cast<std::size_t>(co) * ws.c + ci) *
                                         ws.h * ws.w
                               : nullptr;
          for (int ky = 0; ky < ws.h; ++ky) {
            const TapRange ry = tap_range(os.h, xs.h, stride, ky, pad);
            for (int kx = 0; kx < ws.w; ++kx) {
              const double wval = W[static_cast<std::size_t>(ky) * ws.w + kx];
              const TapRange rx = tap_range(os.w, xs.w, stride, kx, pad);
              if (rx.lo >= rx.hi) continue;
              double wacc = 0.0;
              for (int oy = ry.lo; oy < ry.hi; ++oy) {
                const int iy = oy * stride + ky - pad;
                const double* Grow = G + static_cast<std::size_t>(oy) * os.w;
                const std::size_t in_base =
                    static_cast<std::size_t>(iy) * xs.w +
                    static_cast<std::size_t>(rx.lo) * stride + kx - pad;
                if (GX && wval != 0.0) {
                  double* GXrow = GX + in_base;
                  if (stride == 1) {
                    for (int ox = rx.lo; ox < rx.hi; ++ox) {
                      GXrow[ox - rx.lo] += wval * Grow[ox];
                    }
                  } else {
                    for (int ox = rx.lo; ox < rx.hi; ++ox) {
                      GXrow[static_cast<std::size_t>(ox - rx.lo) * stride] +=
                          wval * Grow[ox];
                    }
                  }
                }
                if (GW) {
                  const double* Xrow = X + in_base;
                  if (stride == 1) {
                    for (int ox = rx.lo; ox < rx.hi; ++ox) {
                      wacc += Xrow[ox - rx.lo] * Grow[ox];
                    }
                  } else {
                    for (int ox = rx.lo; ox < rx.hi; ++ox) {
                      wacc += Xrow[static_cast<std::size_t>(ox - rx.lo) *
                                   stride] *
                              Grow[ox];
                    }
                  }
                }
              }
              if (GW) GW[static_cast<std::size_t>(ky) * ws.w + kx] += wacc;
            }
          }
        }
      }
    }
  });
}

Tensor pointwise_conv(const Tensor& x, const Tensor& w) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  check(ws.h == 1 && ws.w == 1 && ws.c == xs.c,
        "pointwise_conv: expected weights (c_out, " + std::to_string(xs.c) +
            ", 1, 1), got " + ws.str());
  const Shape os{xs.b, ws.b, xs.h, xs.w};
  const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
  const auto xv = x.data();
  const auto wv = w.data();
  std::vector<double> out(os.numel(), 0.0);
  for (int n = 0; n < xs.b; ++n) {
    for (int co = 0; co < ws.b; ++co) {
      double* O = out.data() + (static_cast<std::size_t>(n) * ws.b + co) * plane;
      for (int ci = 0; ci < xs.c; ++ci) {
        const double wval = wv[static_cast<std::size_t>(co) * xs.c + ci];
        if (wval == 0.0) continue;
        const double* VN_RESTRICT X =
            xv.data() + (static_cast<std::size_t>(n) * xs.c + ci) * plane;
        double* VN_RESTRICT Od = O;
        for (std::size_t i = 0; i < plane; ++i) Od[i] += wval * X[i];
      }
    }
  }
  return make_op(os, std::move(out), {x, w}, [x, w](TapeNode& self) {
    const Shape& xs = x.node()->shape;
    const Shape& ws = w.node()->shape;
    const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
    const auto& xv = x.node()->data;
    const auto& wv = w.node()->data;
    for (int n = 0; n < xs.b; ++n) {
      for (int co = 0; co < ws.b; ++co) {
        const double* G = self.grad.data() +
                          (static_cast<std::size_t>(n) * ws.b + co) * plane;
        for (int ci = 0; ci < xs.c; ++ci) {
          const double* X =
              xv.data() + (static_cast<std::size_t>(n) * xs.c + ci) * plane;
          if (x.node()->requires_grad) {
            const double wval = wv[static_cast<std::size_t>(co) * xs.c + ci];
            double* VN_RESTRICT GX = x.node()->grad.data() +
                         (static_cast<std::size_t>(n) * xs.c + ci) * plane;
            const double* VN_RESTRICT Gd = G;
            for (std::size_t i = 0; i < plane; ++i) GX[i] += wval * Gd[i];
          }
          if (w.node()->requires_grad) {
            const double* VN_RESTRICT Xd = X;
            const double* VN_RESTRICT Gd = G;
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += Xd[i] * Gd[i];
            w.node()->grad[static_cast<std::size_t>(co) * xs.c + ci] += acc;
          }
        }
      }
    }
  });
}

Tensor depthwise_conv3x3(const Tensor& x, const Tensor& w) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  check(ws.b == xs.c && ws.c == 1 && ws.h == 3 && ws.w == 3,
        "depthwise_conv3x3: expected weights (" + std::to_string(xs.c) +
            ", 1, 3, 3), got " + ws.str());
  const auto xv = x.data();
  const auto wv = w.data();
  std::vector<double> out(xs.numel(), 0.0);
  for (int n = 0; n < xs.b; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      const double* X =
          xv.data() + (static_cast<std::size_t>(n) * xs.c + c) * xs.h * xs.w;
      const double* W = wv.data() + static_cast<std::size_t>(c) * 9;
      double* O =
          out.data() + (static_cast<std::size_t>(n) * xs.c + c) * xs.h * xs.w;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const double wval = W[ky * 3 + kx];
          if (wval == 0.0) continue;
          const int oy_lo = std::max(0, 1 - ky);
          const int oy_hi = std::min(xs.h, xs.h + 1 - ky);
          const int ox_lo = std::max(0, 1 - kx);
          const int ox_hi = std::min(xs.w, xs.w + 1 - kx);
          const int dx = kx - 1;
          for (int oy = oy_lo; oy < oy_hi; ++oy) {
            const double* Xrow =
                X + static_cast<std::size_t>(oy + ky - 1) * xs.w;
            double* Orow = O + static_cast<std::size_t>(oy) * xs.w;
            for (int ox = ox_lo; ox < ox_hi; ++ox) {
              Orow[ox] += wval * Xrow[ox + dx];
            }
          }
        }
      }
    }
  }
  return make_op(xs, std::move(out), {x, w}, [x, w](TapeNode& self) {
    const Shape& xs = x.node()->shape;
    const auto& xv = x.node()->data;
    const auto& wv = w.node()->data;
    const bool need_gx = x.node()->requires_grad;
    const bool need_gw = w.node()->requires_grad;
    for (int n = 0; n < xs.b; ++n) {
      for (int c = 0; c < xs.c; ++c) {
        const double* X =
            xv.data() + (static_cast<std::size_t>(n) * xs.c + c) * xs.h * xs.w;
        const double* W = wv.data() + static_cast<std::size_t>(c) * 9;
        const double* G = self.grad.data() +
                          (static_cast<std::size_t>(n) * xs.c + c) * xs.h * xs.w;
        double* GX = need_gx ? x.node()->grad.data() +
                                   (static_cast<std::size_t>(n) * xs.c + c) *
                                       xs.h * xs.w
                             : nullptr;
        double* GW = need_gw ? w.node()->grad.data() +
                                   static_cast<std::size_t>(c) * 9
                             : nullptr;
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            const double wval = W[ky * 3 + kx];
            const int oy_lo = std::max(0, 1 - ky);
            const int oy_hi = std::min(xs.h, xs.h + 1 - ky);
            const int ox_lo = std::max(0, 1 - kx);
            const int ox_hi = std::min(xs.w, xs.w + 1 - kx);
            const int dx = kx - 1;
            double wacc = 0.0;
            for (int oy = oy_lo; oy < oy_hi; ++oy) {
              const std::size_t in_row =
                  static_cast<std::size_t>(oy + ky - 1) * xs.w;
              const double* Grow = G + static_cast<std::size_t>(oy) * xs.w;
              if (GX && wval != 0.0) {
                double* GXrow = GX + in_row;
                for (int ox = ox_lo; ox < ox_hi; ++ox) {
                  GXrow[ox + dx] += wval * Grow[ox];
                }
              }
              if (GW) {
                const double* Xrow = X + in_row;
                for (int ox = ox_lo; ox < ox_hi; ++ox) {
                  wacc += Xrow[ox + dx] * Grow[ox];
                }
              }
            }
            if (GW) GW[ky * 3 + kx] += wacc;
          }
        }
      }
    }
  });
}

Tensor transposed_conv_upsample(const Tensor& x, int r, const Tensor& w,
                                int groups) {
  check(r >= 1, "transposed_conv_upsample: factor must be >= 1, got " +
                    std::to_string(r));
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  check(ws.h == r && ws.w == r,
        "transposed_conv_upsample: kernel " + ws.str() + " must be " +
            std::to_string(r) + "x" + std::to_string(r));
  const bool depthwise = groups == xs.c;
  if (depthwise) {
    check(ws.b == xs.c && ws.c == 1,
          "transposed_conv_upsample: per-channel weights must be (" +
              std::to_string(xs.c) + ", 1, r, r), got " + ws.str());
  } else {
    check(groups == 1, "transposed_conv_upsample: groups must be 1 or c_in");
    check(ws.b == xs.c, "transposed_conv_upsample: weights " + ws.str() +
                            " expect c_in " + std::to_string(xs.c));
  }
  const int co = depthwise ? xs.c : ws.c;
  const Shape os{xs.b, co, xs.h * r, xs.w * r};
  const auto xv = x.data();
  const auto wv = w.data();
  std::vector<double> out(os.numel(), 0.0);
  for (int n = 0; n < xs.b; ++n) {
    for (int oc = 0; oc < co; ++oc) {
      double* O = out.data() +
                  (static_cast<std::size_t>(n) * co + oc) * os.h * os.w;
      const int ci_lo = depthwise ? oc : 0;
      const int ci_hi = depthwise ? oc + 1 : xs.c;
      for (int ci = ci_lo; ci < ci_hi; ++ci) {
        const double* X =
            xv.data() + (static_cast<std::size_t>(n) * xs.c + ci) * xs.h * xs.w;
        const double* W =
            depthwise
                ? wv.data() + static_cast<std::size_t>(oc) * r * r
                : wv.data() + (static_cast<std::size_t>(ci) * co + oc) * r * r;
        for (int y = 0; y < xs.h; ++y) {
          for (int xcol = 0; xcol < xs.w; ++xcol) {
            const double v = X[static_cast<std::size_t>(y) * xs.w + xcol];
            for (int i = 0; i < r; ++i) {
              double* Orow =
                  O + static_cast<std::size_t>(y * r + i) * os.w + xcol * r;
              const double* Wrow = W + static_cast<std::size_t>(i) * r;
              for (int j = 0; j < r; ++j) Orow[j] += v * Wrow[j];
            }
          }
        }
      }
    }
  }
  return make_op(os, std::move(out), {x, w},
                 [x, w, r, depthwise, co](TapeNode& self) {
    const Shape& xs = x.node()->shape;
    const Shape& os = self.shape;
    const auto& xv = x.node()->data;
    const auto& wv = w.node()->data;
    for (int n = 0; n < xs.b; ++n) {
      for (int oc = 0; oc < co; ++oc) {
        const double* G = self.grad.data() +
                          (static_cast<std::size_t>(n) * co + oc) * os.h * os.w;
        const int ci_lo = depthwise ? oc : 0;
        const int ci_hi = depthwise ? oc + 1 : xs.c;
        for (int ci = ci_lo; ci < ci_hi; ++ci) {
          const double* X = xv.data() +
                            (static_cast<std::size_t>(n) * xs.c + ci) * xs.h * xs.w;
          const double* W =
              depthwise
                  ? wv.data() + static_cast<std::size_t>(oc) * r * r
                  : wv.data() + (static_cast<std::size_t>(ci) * co + oc) * r * r;
          double* GX = x.node()->requires_grad
                           ? x.node()->grad.data() +
                                 (static_cast<std::size_t>(n) * xs.c + ci) *
                                     xs.h * xs.w
                           : nullptr;
          double* GW =
              w.node()->requires_grad
                  ? (depthwise ? w.node()->grad.data() +
                                     static_cast<std::size_t>(oc) * r * r
                               : w.node()->grad.data() +
                                     (static_cast<std::size_t>(ci) * co + oc) *
                                         r * r)
                  : nullptr;
          for (int y = 0; y < xs.h; ++y) {
            for (int xcol = 0; xcol < xs.w; ++xcol) {
              const double v = X[static_cast<std::size_t>(y) * xs.w + xcol];
              double gx_acc = 0.0;
              for (int i = 0; i < r; ++i) {
                const double* Grow =
                    G + static_cast<std::size_t>(y * r + i) * os.w + xcol * r;
                const double* Wrow = W + static_cast<std::size_t>(i) * r;
                double* GWrow =
                    GW ? GW + static_cast<std::size_t>(i) * r : nullptr;
                for (int j = 0; j < r; ++j) {
                  gx_acc += Wrow[j] * Grow[j];
                  if (GWrow) GWrow[j] += v * Grow[j];
                }
              }
              if (GX) GX[static_cast<std::size_t>(y) * xs.w + xcol] += gx_acc;
            }
          }
        }
      }
    }
  });
}

Tensor bilinear_upsample(const Tensor& x, int factor) {
  check(factor >= 1, "bilinear_upsample: factor must be >= 1");
  if (factor == 1) return x;
  const Shape& s = x.shape();
  const Shape os{s.b, s.c, s.h * factor, s.w * factor};

  // Half-pixel-center source coordinates, clamped at the borders.
  auto mapping = [factor](int out_dim, int in_dim) {
    std::vector<int> lo(out_dim), hi(out_dim);
    std::vector<double> t(out_dim);
    for (int d = 0; d < out_dim; ++d) {
      double src = (d + 0.5) / factor - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in_dim - 1));
      const int l = static_cast<int>(std::floor(src));
      lo[d] = l;
      hi[d] = std::min(l + 1, in_dim - 1);
      t[d] = src - l;
    }
    return std::tuple{lo, hi, t};
  };
  const auto [ylo, yhi, ty] = mapping(os.h, s.h);
  const auto [xlo, xhi, tx] = mapping(os.w, s.w);

  const auto xv = x.data();
  std::vector<double> out(os.numel());
  for (int bc = 0; bc < s.b * s.c; ++bc) {
    const double* X = xv.data() + static_cast<std::size_t>(bc) * s.h * s.w;
    double* O = out.data() + static_cast<std::size_t>(bc) * os.h * os.w;
    for (int oy = 0; oy < os.h; ++oy) {
      const double wy1 = ty[oy], wy0 = 1.0 - wy1;
      const double* R0 = X + static_cast<std::size_t>(ylo[oy]) * s.w;
      const double* R1 = X + static_cast<std::size_t>(yhi[oy]) * s.w;
      for (int ox = 0; ox < os.w; ++ox) {
        const double wx1 = tx[ox], wx0 = 1.0 - wx1;
        O[static_cast<std::size_t>(oy) * os.w + ox] =
            wy0 * (wx0 * R0[xlo[ox]] + wx1 * R0[xhi[ox]]) +
            wy1 * (wx0 * R1[xlo[ox]] + wx1 * R1[xhi[ox]]);
      }
    }
  }
  return make_op(os, std::move(out), {x},
                 [x, ylo = ylo, yhi = yhi, ty = ty, xlo = xlo, xhi = xhi,
                  tx = tx](TapeNode& self) {
    if (!x.node()->requires_grad) return;
    const Shape& s = x.node()->shape;
    const Shape& os = self.shape;
    auto& g = x.node()->grad;
    for (int bc = 0; bc < s.b * s.c; ++bc) {
      double* GX = g.data() + static_cast<std::size_t>(bc) * s.h * s.w;
      const double* G =
          self.grad.data() + static_cast<std::size_t>(bc) * os.h * os.w;
      for (int oy = 0; oy < os.h; ++oy) {
        const double wy1 = ty[oy], wy0 = 1.0 - wy1;
        for (int ox = 0; ox < os.w; ++ox) {
          const double wx1 = tx[ox], wx0 = 1.0 - wx1;
          const double gv = G[static_cast<std::size_t>(oy) * os.w + ox];
          GX[static_cast<std::size_t>(ylo[oy]) * s.w + xlo[ox]] += wy0 * wx0 * gv;
          GX[static_cast<std::size_t>(ylo[oy]) * s.w + xhi[ox]] += wy0 * wx1 * gv;
          GX[static_cast<std::size_t>(yhi[oy]) * s.w + xlo[ox]] += wy1 * wx0 * gv;
          GX[static_cast<std::size_t>(yhi[oy]) * s.w + xhi[ox]] += wy1 * wx1 * gv;
        }
      }
    }
  });
}

namespace {

// Pooling on exact multiples; avg_pool2d pads first.
Tensor avg_pool_exact(const Tensor& x, int r) {
  const Shape& s = x.shape();
  const Shape os{s.b, s.c, s.h / r, s.w / r};
  const auto xv = x.data();
  const double inv = 1.0 / (static_cast<double>(r) * r);
  std::vector<double> out(os.numel());
  for (int bc = 0; bc < s.b * s.c; ++bc) {
    const double* X = xv.data() + static_cast<std::size_t>(bc) * s.h * s.w;
    double* O = out.data() + static_cast<std::size_t>(bc) * os.h * os.w;
    for (int oy = 0; oy < os.h; ++oy) {
      for (int ox = 0; ox < os.w; ++ox) {
        double acc = 0.0;
        for (int i = 0; i < r; ++i) {
          const double* Row = X + static_cast<std::size_t>(oy * r + i) * s.w +
                              static_cast<std::size_t>(ox) * r;
          for (int j = 0; j < r; ++j) acc += Row[j];
        }
        O[static_cast<std::size_t>(oy) * os.w + ox] = acc * inv;
      }
    }
  }
  return make_op(os, std::move(out), {x}, [x, r, inv](TapeNode& self) {
    if (!x.node()->requires_grad) return;
    const Shape& s = x.node()->shape;
    const Shape& os = self.shape;
    auto& g = x.node()->grad;
    for (int bc = 0; bc < s.b * s.c; ++bc) {
      double* GX = g.data() + static_cast<std::size_t>(bc) * s.h * s.w;
      const double* G =
          self.grad.data() + static_cast<std::size_t>(bc) * os.h * os.w;
      for (int oy = 0; oy < os.h; ++oy) {
        for (int ox = 0; ox < os.w; ++ox) {
          const double gv = G[static_cast<std::size_t>(oy) * os.w + ox] * inv;
          for (int i = 0; i < r; ++i) {
            double* Row = GX + static_cast<std::size_t>(oy * r + i) * s.w +
                          static_cast<std::size_t>(ox) * r;
            for (int j = 0; j < r; ++j) Row[j] += gv;
          }
        }
      }
    }
  });
}

}  // namespace

Tensor avg_pool2d(const Tensor& x, int r) {
  check(r >= 1, "avg_pool2d: reduction factor must be >= 1, got " +
                    std::to_string(r));
  if (r == 1) return x;
  const Shape& s = x.shape();
  const int pad_h = (r - s.h % r) % r;
  const int pad_w = (r - s.w % r) % r;
  return avg_pool_exact(replicate_pad(x, 0, pad_h, 0, pad_w), r);
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

Tensor softmax_rows(const Tensor& m) {
  const Shape& s = m.shape();
  const auto xv = m.data();
  std::vector<double> out(xv.size());
  const std::size_t rows = s.numel() / s.w;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* X = xv.data() + r * s.w;
    double* O = out.data() + r * s.w;
    double mx = X[0];
    for (int j = 1; j < s.w; ++j) mx = std::max(mx, X[j]);
    double denom = 0.0;
    for (int j = 0; j < s.w; ++j) {
      O[j] = std::exp(X[j] - mx);
      denom += O[j];
    }
    const double inv = 1.0 / denom;
    for (int j = 0; j < s.w; ++j) O[j] *= inv;
  }
  return make_op(s, std::move(out), {m}, [m](TapeNode& self) {
    if (!m.node()->requires_grad) return;
    const Shape& s = self.shape;
    const std::size_t rows = s.numel() / s.w;
    auto& g = m.node()->grad;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* Y = self.data.data() + r * s.w;
      const double* G = self.grad.data() + r * s.w;
      double dot = 0.0;
      for (int j = 0; j < s.w; ++j) dot += G[j] * Y[j];
      double* GX = g.data() + r * s.w;
      for (int j = 0; j < s.w; ++j) GX[j] += Y[j] * (G[j] - dot);
    }
  });
}

Tensor softmax_rows(const Tensor& m, double beta) {
  check(std::isfinite(beta) && beta > 0.0,
        "softmax_rows: beta must be positive and finite, got " +
            std::to_string(beta));
  return softmax_rows(scale(m, 1.0 / beta));
}

Tensor softmax_rows(const Tensor& m, const Tensor& beta) {
  for (double v : beta.data()) {
    check(std::isfinite(v) && v > 0.0,
          "softmax_rows: beta entries must be positive and finite");
  }
  return softmax_rows(div_bcast_c(m, beta));
}

// ---------------------------------------------------------------------------
// windowing
// ---------------------------------------------------------------------------

std::pair<Tensor, WindowGrid> window_partition(const Tensor& x, int p) {
  check(p >= 1, "window_partition: window size must be >= 1, got " +
                    std::to_string(p));
  const Shape& s = x.shape();
  const int pad_h = (p - s.h % p) % p;
  const int pad_w = (p - s.w % p) % p;
  Tensor xp = replicate_pad(x, 0, pad_h, 0, pad_w);
  const Shape& ps = xp.shape();
  WindowGrid grid{s.b, ps.h / p, ps.w / p, p, s.h, s.w};

  const Shape os{grid.windows(), s.c, p, p};
  const auto xv = xp.data();
  std::vector<double> out(os.numel());
  for (int b = 0; b < s.b; ++b) {
    for (int wy = 0; wy < grid.grid_h; ++wy) {
      for (int wx = 0; wx < grid.grid_w; ++wx) {
        const int n = (b * grid.grid_h + wy) * grid.grid_w + wx;
        for (int c = 0; c < s.c; ++c) {
          const double* X = xv.data() +
                            (static_cast<std::size_t>(b) * s.c + c) * ps.h * ps.w;
          double* O = out.data() +
                      (static_cast<std::size_t>(n) * s.c + c) * p * p;
          for (int i = 0; i < p; ++i) {
            const double* src =
                X + static_cast<std::size_t>(wy * p + i) * ps.w + wx * p;
            std::copy(src, src + p, O + static_cast<std::size_t>(i) * p);
          }
        }
      }
    }
  }
  Tensor windows = make_op(os, std::move(out), {xp}, [xp, grid](TapeNode& self) {
    if (!xp.node()->requires_grad) return;
    const Shape& ps = xp.node()->shape;
    const int p = grid.p;
    auto& g = xp.node()->grad;
    for (int b = 0; b < grid.batch; ++b) {
      for (int wy = 0; wy < grid.grid_h; ++wy) {
        for (int wx = 0; wx < grid.grid_w; ++wx) {
          const int n = (b * grid.grid_h + wy) * grid.grid_w + wx;
          for (int c = 0; c < ps.c; ++c) {
            double* GX = g.data() +
                         (static_cast<std::size_t>(b) * ps.c + c) * ps.h * ps.w;
            const double* GO = self.grad.data() +
                               (static_cast<std::size_t>(n) * ps.c + c) * p * p;
            for (int i = 0; i < p; ++i) {
              double* dst =
                  GX + static_cast<std::size_t>(wy * p + i) * ps.w + wx * p;
              const double* src = GO + static_cast<std::size_t>(i) * p;
              for (int j = 0; j < p; ++j) dst[j] += src[j];
            }
          }
        }
      }
    }
  });
  return {windows, grid};
}

Tensor window_merge(const Tensor& windows, const WindowGrid& grid) {
  const Shape& s = windows.shape();
  check(s.b == grid.windows() && s.h == grid.p && s.w == grid.p,
        "window_merge: windows " + s.str() + " do not match the grid");
  const int p = grid.p;
  const Shape padded{grid.batch, s.c, grid.grid_h * p, grid.grid_w * p};
  const auto wv = windows.data();
  std::vector<double> out(padded.numel());
  for (int b = 0; b < grid.batch; ++b) {
    for (int wy = 0; wy < grid.grid_h; ++wy) {
      for (int wx = 0; wx < grid.grid_w; ++wx) {
        const int n = (b * grid.grid_h + wy) * grid.grid_w + wx;
        for (int c = 0; c < s.c; ++c) {
          const double* W = wv.data() +
                            (static_cast<std::size_t>(n) * s.c + c) * p * p;
          double* O = out.data() +
                      (static_cast<std::size_t>(b) * s.c + c) * padded.h * padded.w;
          for (int i = 0; i < p; ++i) {
            const double* src = W + static_cast<std::size_t>(i) * p;
            double* dst =
                O + static_cast<std::size_t>(wy * p + i) * padded.w + wx * p;
            std::copy(src, src + p, dst);
          }
        }
      }
    }
  }
  Tensor merged = make_op(padded, std::move(out), {windows},
                          [windows, grid](TapeNode& self) {
    if (!windows.node()->requires_grad) return;
    const Shape& s = windows.node()->shape;
    const int p = grid.p;
    const Shape& padded = self.shape;
    auto& g = windows.node()->grad;
    for (int b = 0; b < grid.batch; ++b) {
      for (int wy = 0; wy < grid.grid_h; ++wy) {
        for (int wx = 0; wx < grid.grid_w; ++wx) {
          const int n = (b * grid.grid_h + wy) * grid.grid_w + wx;
          for (int c = 0; c < s.c; ++c) {
            double* GW = g.data() +
                         (static_cast<std::size_t>(n) * s.c + c) * p * p;
            const double* GO = self.grad.data() +
                               (static_cast<std::size_t>(b) * s.c + c) *
                                   padded.h * padded.w;
            for (int i = 0; i < p; ++i) {
              const double* src =
                  GO + static_cast<std::size_t>(wy * p + i) * padded.w + wx * p;
              double* dst = GW + static_cast<std::size_t>(i) * p;
              for (int j = 0; j < p; ++j) dst[j] += src[j];
            }
          }
        }
      }
    }
  });
  return crop_spatial(merged, 0, 0, grid.orig_h, grid.orig_w);
}

Tensor tokens_from_windows(const Tensor& xw, int heads) {
  const Shape& s = xw.shape();
  check(heads >= 1 && s.c % heads == 0,
        "tokens_from_windows: channels " + std::to_string(s.c) +
            " not divisible by heads " + std::to_string(heads));
  const int d = s.c / heads;
  const int tokens = s.h * s.w;
  const Shape os{s.b, heads, tokens, d};
  const auto xv = xw.data();
  std::vector<double> out(os.numel());
  for (int n = 0; n < s.b; ++n) {
    for (int hd = 0; hd < heads; ++hd) {
      for (int e = 0; e < d; ++e) {
        const double* X = xv.data() +
                          (static_cast<std::size_t>(n) * s.c + hd * d + e) *
                              tokens;
        double* O = out.data() +
                    ((static_cast<std::size_t>(n) * heads + hd) * tokens) * d + e;
        for (int t = 0; t < tokens; ++t) O[static_cast<std::size_t>(t) * d] = X[t];
      }
    }
  }
  return make_op(os, std::move(out), {xw}, [xw, heads](TapeNode& self) {
    if (!xw.node()->requires_grad) return;
    const Shape& s = xw.node()->shape;
    const int d = s.c / heads;
    const int tokens = s.h * s.w;
    auto& g = xw.node()->grad;
    for (int n = 0; n < s.b; ++n) {
      for (int hd = 0; hd < heads; ++hd) {
        for (int e = 0; e < d; ++e) {
          double* GX = g.data() +
                       (static_cast<std::size_t>(n) * s.c + hd * d + e) * tokens;
          const double* GO =
              self.grad.data() +
              ((static_cast<std::size_t>(n) * heads + hd) * tokens) * d + e;
          for (int t = 0; t < tokens; ++t)
            GX[t] += GO[static_cast<std::size_t>(t) * d];
        }
      }
    }
  });
}

Tensor windows_from_tokens(const Tensor& t, int p) {
  const Shape& s = t.shape();  // (N, heads, tokens, d)
  check(p >= 1 && s.h % p == 0,
        "windows_from_tokens: token count " + std::to_string(s.h) +
            " not divisible by window side " + std::to_string(p));
  const int q = s.h / p;
  const int d = s.w;
  const Shape os{s.b, s.c * d, p, q};
  const auto xv = t.data();
  std::vector<double> out(os.numel());
  for (int n = 0; n < s.b; ++n) {
    for (int hd = 0; hd < s.c; ++hd) {
      for (int e = 0; e < d; ++e) {
        const double* X =
            xv.data() + ((static_cast<std::size_t>(n) * s.c + hd) * s.h) * d + e;
        double* O = out.data() +
                    (static_cast<std::size_t>(n) * os.c + hd * d + e) * p * q;
        for (int tk = 0; tk < s.h; ++tk)
          O[tk] = X[static_cast<std::size_t>(tk) * d];
      }
    }
  }
  return make_op(os, std::move(out), {t}, [t](TapeNode& self) {
    if (!t.node()->requires_grad) return;
    const Shape& s = t.node()->shape;
    const int d = s.w;
    const Shape& os = self.shape;
    auto& g = t.node()->grad;
    for (int n = 0; n < s.b; ++n) {
      for (int hd = 0; hd < s.c; ++hd) {
        for (int e = 0; e < d; ++e) {
          double* GX = g.data() +
                       ((static_cast<std::size_t>(n) * s.c + hd) * s.h) * d + e;
          const double* GO =
              self.grad.data() +
              (static_cast<std::size_t>(n) * os.c + hd * d + e) *
                  (static_cast<std::size_t>(os.h) * os.w);
          for (int tk = 0; tk < s.h; ++tk)
            GX[static_cast<std::size_t>(tk) * d] += GO[tk];
        }
      }
    }
  });
}

}  // namespace vertenet
