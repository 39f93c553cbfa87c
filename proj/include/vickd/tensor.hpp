#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "vickd/rng.hpp"

namespace vickd {

using Shape = std::vector<std::int64_t>;

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

[[noreturn]] inline void shape_fail(const std::string& op, const std::string& detail) {
  throw ShapeError(op + ": " + detail);
}

// Dense n-d tensor participating in a dynamically built reverse-mode graph.
// A Tensor is a cheap handle onto a shared node; ops allocate fresh nodes
// whose backward closures pull the output gradient into their parents.
template <typename Real>
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<Real> value;
    std::vector<Real> grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }
    void ensure_grad() {
      if (grad.empty()) grad.assign(value.size(), Real(0));
    }
  };

  Tensor() = default;

  static Tensor zeros(Shape shape) { return filled(std::move(shape), Real(0)); }

  static Tensor filled(Shape shape, Real v) {
    for (auto d : shape)
      if (d <= 0) shape_fail("filled", "non-positive extent in " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->value.assign(static_cast<std::size_t>(shape_numel(shape)), v);
    n->shape = std::move(shape);
    return Tensor(std::move(n));
  }

  static Tensor scalar(Real v) { return filled({}, v); }

  static Tensor from(std::vector<Real> data, Shape shape) {
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
      shape_fail("from", "data size " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    return Tensor(std::move(n));
  }

  static Tensor uniform(Rng& rng, Shape shape, Real lo, Real hi) {
    auto t = zeros(std::move(shape));
    for (auto& v : t.node_->value) v = static_cast<Real>(rng.uniform(lo, hi));
    return t;
  }

  static Tensor normal(Rng& rng, Shape shape, Real mean, Real std) {
    auto t = zeros(std::move(shape));
    for (auto& v : t.node_->value) v = static_cast<Real>(rng.normal(mean, std));
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::int64_t numel() const { return node_->numel(); }
  std::int64_t dim(std::size_t i) const { return node_->shape[i]; }
  std::size_t rank() const { return node_->shape.size(); }

  const std::vector<Real>& value() const { return node_->value; }
  std::vector<Real>& value() { return node_->value; }
  const std::vector<Real>& grad() const { return node_->grad; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    node_->requires_grad = b;
    return *this;
  }

  Real item() const {
    if (numel() != 1) shape_fail("item", "tensor has " + std::to_string(numel()) + " elements");
    return node_->value[0];
  }

  void zero_grad() { node_->grad.clear(); }

  // Detached copy of the value (fresh leaf, no graph).
  Tensor detach() const {
    auto n = std::make_shared<Node>();
    n->shape = node_->shape;
    n->value = node_->value;
    return Tensor(std::move(n));
  }

  // Reverse sweep from a scalar loss. Parameter gradients accumulate (+=)
  // across calls until zero_grad.
  void backward() const {
    if (numel() != 1) shape_fail("backward", "loss must be scalar, got " + shape_str(shape()));
    if (!node_->requires_grad) return;  // constant loss: nothing reachable

    std::vector<Node*> order = topo_order();
    node_->ensure_grad();
    node_->grad[0] += Real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backward && !n->grad.empty()) n->backward(*n);
    }
  }

  std::shared_ptr<Node> node() const { return node_; }

  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

 private:
  std::vector<Node*> topo_order() const {
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    // iterative DFS; graphs can chain long through training loops
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    return order;
  }

  std::shared_ptr<Node> node_;
};

namespace detail {

template <typename Real>
void check_finite(const char* op, const std::vector<Real>& v) {
  for (Real x : v) {
    if (!std::isfinite(x))
      throw NumericError(std::string(op) + ": non-finite value in output");
  }
}

template <typename Real>
std::shared_ptr<typename Tensor<Real>::Node> make_node(
    const char* op, Shape shape, std::vector<Real> value,
    std::vector<std::shared_ptr<typename Tensor<Real>::Node>> parents) {
  check_finite(op, value);
  auto n = std::make_shared<typename Tensor<Real>::Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  for (auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->parents = std::move(parents);
  return n;
}

// true if `small` equals the trailing suffix of `big`
inline bool is_trailing_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  for (std::size_t i = 0; i < small.size(); ++i)
    if (small[small.size() - 1 - i] != big[big.size() - 1 - i]) return false;
  return true;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary ops with broadcasting over leading axes
// ---------------------------------------------------------------------------

enum class BinKind { Add, Sub, Mul };

template <typename Real>
Tensor<Real> binary_op(const char* name, BinKind kind, const Tensor<Real>& a,
                       const Tensor<Real>& b) {
  const bool same = a.shape() == b.shape();
  const bool b_small = !same && detail::is_trailing_suffix(b.shape(), a.shape());
  const bool a_small = !same && !b_small && detail::is_trailing_suffix(a.shape(), b.shape());
  if (!same && !b_small && !a_small)
    shape_fail(name, "incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));

  const Tensor<Real>& big = a_small ? b : a;
  const Tensor<Real>& small = a_small ? a : b;
  const std::int64_t n = big.numel();
  const std::int64_t m = same ? n : small.numel();
  const Real* pa = a.value().data();
  const Real* pb = b.value().data();

  std::vector<Real> out(static_cast<std::size_t>(n));
  Real* po = out.data();
  if (same) {
    switch (kind) {
      case BinKind::Add: for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i]; break;
      case BinKind::Sub: for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i]; break;
      case BinKind::Mul: for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i]; break;
    }
  } else {
    const Real* pbig = big.value().data();
    const Real* psml = small.value().data();
    for (std::int64_t i = 0; i < n; ++i) {
      const Real x = pbig[i];
      const Real y = psml[i % m];
      switch (kind) {
        case BinKind::Add: po[i] = x + y; break;
        case BinKind::Sub: po[i] = a_small ? y - x : x - y; break;
        default: po[i] = x * y; break;
      }
    }
  }

  auto an = a.node();
  auto bn = b.node();
  auto node = detail::make_node<Real>(name, big.shape(), std::move(out), {an, bn});
  if (node->requires_grad) {
    node->backward = [an, bn, kind, a_small, b_small, n, m](typename Tensor<Real>::Node& self) {
      const Real* g = self.grad.data();
      auto& A = *an;
      auto& B = *bn;
      if (A.requires_grad) {
        A.ensure_grad();
        Real* ga = A.grad.data();
        if (kind == BinKind::Mul) {
          const Real* vb = B.value.data();
          if (a_small)
            for (std::int64_t i = 0; i < n; ++i) ga[i % m] += g[i] * vb[i % (b_small ? m : n)];
          else
            for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] * vb[b_small ? i % m : i];
        } else {
          if (a_small)
            for (std::int64_t i = 0; i < n; ++i) ga[i % m] += g[i];
          else
            for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i];
        }
      }
      if (B.requires_grad) {
        B.ensure_grad();
        Real* gb = B.grad.data();
        const Real sign = (kind == BinKind::Sub) ? Real(-1) : Real(1);
        if (kind == BinKind::Mul) {
          const Real* va = A.value.data();
          if (b_small)
            for (std::int64_t i = 0; i < n; ++i) gb[i % m] += g[i] * va[i];
          else if (a_small)
            for (std::int64_t i = 0; i < n; ++i) gb[i] += g[i] * va[i % m];
          else
            for (std::int64_t i = 0; i < n; ++i) gb[i] += g[i] * va[i];
        } else {
          if (b_small)
            for (std::int64_t i = 0; i < n; ++i) gb[i % m] += sign * g[i];
          else
            for (std::int64_t i = 0; i < n; ++i) gb[i] += sign * g[i];
        }
      }
    };
  }
  return Tensor<Real>(std::move(node));
}

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  return binary_op("add", BinKind::Add, a, b);
}
template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  return binary_op("sub", BinKind::Sub, a, b);
}
template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  return binary_op("mul", BinKind::Mul, a, b);
}

// y = x * gain + shift with scalar coefficients (the affine building block;
// per-channel affine comes from broadcasting add/mul).
template <typename Real>
Tensor<Real> affine(const Tensor<Real>& x, Real gain, Real shift) {
  const std::int64_t n = x.numel();
  std::vector<Real> out(static_cast<std::size_t>(n));
  const Real* px = x.value().data();
  for (std::int64_t i = 0; i < n; ++i) out[i] = px[i] * gain + shift;
  auto xn = x.node();
  auto node = detail::make_node<Real>("affine", x.shape(), std::move(out), {xn});
  if (node->requires_grad) {
    node->backward = [xn, gain, n](typename Tensor<Real>::Node& self) {
      xn->ensure_grad();
      Real* gx = xn->grad.data();
      const Real* g = self.grad.data();
      for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i] * gain;
    };
  }
  return Tensor<Real>(std::move(node));
}

// per-index scale+shift along `axis`: y[..,c,..] = x[..,c,..]*gain[c] + shift[c]
template <typename Real>
Tensor<Real> scale_shift(const Tensor<Real>& x, const Tensor<Real>& gain,
                         const Tensor<Real>& shift, std::size_t axis) {
  if (axis >= x.rank()) shape_fail("scale_shift", "axis out of range");
  const std::int64_t c = x.dim(axis);
  if (gain.numel() != c || shift.numel() != c)
    shape_fail("scale_shift", "gain/shift length must equal axis extent " + std::to_string(c));
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);

  std::vector<Real> out(static_cast<std::size_t>(x.numel()));
  const Real* px = x.value().data();
  const Real* pg = gain.value().data();
  const Real* ps = shift.value().data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t k = 0; k < c; ++k) {
      const Real g = pg[k], s = ps[k];
      const std::int64_t base = (o * c + k) * inner;
      for (std::int64_t i = 0; i < inner; ++i) out[base + i] = px[base + i] * g + s;
    }

  auto xn = x.node();
  auto gn = gain.node();
  auto sn = shift.node();
  auto node = detail::make_node<Real>("scale_shift", x.shape(), std::move(out), {xn, gn, sn});
  if (node->requires_grad) {
    node->backward = [xn, gn, sn, outer, c, inner](typename Tensor<Real>::Node& self) {
      const Real* g = self.grad.data();
      if (xn->requires_grad) {
        xn->ensure_grad();
        Real* gx = xn->grad.data();
        const Real* pg = gn->value.data();
        for (std::int64_t o = 0; o < outer; ++o)
          for (std::int64_t k = 0; k < c; ++k) {
            const std::int64_t base = (o * c + k) * inner;
            for (std::int64_t i = 0; i < inner; ++i) gx[base + i] += g[base + i] * pg[k];
          }
      }
      if (gn->requires_grad) {
        gn->ensure_grad();
        Real* gg = gn->grad.data();
        const Real* px = xn->value.data();
        for (std::int64_t o = 0; o < outer; ++o)
          for (std::int64_t k = 0; k < c; ++k) {
            const std::int64_t base = (o * c + k) * inner;
            Real acc = 0;
            for (std::int64_t i = 0; i < inner; ++i) acc += g[base + i] * px[base + i];
            gg[k] += acc;
          }
      }
      if (sn->requires_grad) {
        sn->ensure_grad();
        Real* gs = sn->grad.data();
        for (std::int64_t o = 0; o < outer; ++o)
          for (std::int64_t k = 0; k < c; ++k) {
            const std::int64_t base = (o * c + k) * inner;
            Real acc = 0;
            for (std::int64_t i = 0; i < inner; ++i) acc += g[base + i];
            gs[k] += acc;
          }
      }
    };
  }
  return Tensor<Real>(std::move(node));
}

// ---------------------------------------------------------------------------
// elementwise unary ops
// ---------------------------------------------------------------------------

template <typename Real, typename Fwd, typename Bwd>
Tensor<Real> unary_op(const char* name, const Tensor<Real>& x, Fwd fwd, Bwd dfdx) {
  const std::int64_t n = x.numel();
  std::vector<Real> out(static_cast<std::size_t>(n));
  const Real* px = x.value().data();
  for (std::int64_t i = 0; i < n; ++i) out[i] = fwd(px[i]);
  auto xn = x.node();
  auto node = detail::make_node<Real>(name, x.shape(), std::move(out), {xn});
  if (node->requires_grad) {
    node->backward = [xn, dfdx, n](typename Tensor<Real>::Node& self) {
      xn->ensure_grad();
      Real* gx = xn->grad.data();
      const Real* g = self.grad.data();
      const Real* px = xn->value.data();
      const Real* py = self.value.data();
      for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i] * dfdx(px[i], py[i]);
    };
  }
  return Tensor<Real>(std::move(node));
}

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& x) {
  return unary_op(
      "relu", x, [](Real v) { return v > Real(0) ? v : Real(0); },
      [](Real v, Real) { return v > Real(0) ? Real(1) : Real(0); });
}

template <typename Real>
Tensor<Real> square(const Tensor<Real>& x) {
  return unary_op(
      "square", x, [](Real v) { return v * v; },
      [](Real v, Real) { return Real(2) * v; });
}

template <typename Real>
Tensor<Real> sqrt(const Tensor<Real>& x) {
  return unary_op(
      "sqrt", x, [](Real v) { return std::sqrt(v); },
      [](Real, Real y) { return Real(0.5) / y; });
}

template <typename Real>
Tensor<Real> abs(const Tensor<Real>& x) {
  return unary_op(
      "abs", x, [](Real v) { return std::abs(v); },
      [](Real v, Real) { return v > Real(0) ? Real(1) : (v < Real(0) ? Real(-1) : Real(0)); });
}

template <typename Real>
Tensor<Real> clamp(const Tensor<Real>& x, Real lo, Real hi) {
  return unary_op(
      "clamp", x,
      [lo, hi](Real v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](Real v, Real) { return (v > lo && v < hi) ? Real(1) : Real(0); });
}

// ---------------------------------------------------------------------------
// matmul (n,k) x (k,m) -> (n,m)
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    shape_fail("matmul", "requires (n,k)x(k,m), got " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
  const std::int64_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  std::vector<Real> out(static_cast<std::size_t>(n * m), Real(0));
  const Real* pa = a.value().data();
  const Real* pb = b.value().data();
  for (std::int64_t i = 0; i < n; ++i) {
    Real* orow = out.data() + i * m;
    const Real* arow = pa + i * k;
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const Real av = arow[kk];
      const Real* brow = pb + kk * m;
      for (std::int64_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  auto an = a.node();
  auto bn = b.node();
  auto node = detail::make_node<Real>("matmul", {n, m}, std::move(out), {an, bn});
  if (node->requires_grad) {
    node->backward = [an, bn, n, k, m](typename Tensor<Real>::Node& self) {
      const Real* g = self.grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        Real* ga = an->grad.data();
        const Real* pb = bn->value.data();
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t kk = 0; kk < k; ++kk) {
            const Real* brow = pb + kk * m;
            const Real* grow = g + i * m;
            Real acc = 0;
            for (std::int64_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
            ga[i * k + kk] += acc;
          }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        Real* gb = bn->grad.data();
        const Real* pa = an->value.data();
        for (std::int64_t kk = 0; kk < k; ++kk)
          for (std::int64_t i = 0; i < n; ++i) {
            const Real av = pa[i * k + kk];
            const Real* grow = g + i * m;
            Real* brow = gb + kk * m;
            for (std::int64_t j = 0; j < m; ++j) brow[j] += av * grow[j];
          }
      }
    };
  }
  return Tensor<Real>(std::move(node));
}

// ---------------------------------------------------------------------------
// conv1d: x (B,Ci,T), w (Co,Ci,K), optional bias (Co); zero padding
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> conv1d(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& bias,
                    std::int64_t stride, std::int64_t pad) {
  if (x.rank() != 3 || w.rank() != 3)
    shape_fail("conv1d", "expects x(B,Ci,T) and w(Co,Ci,K), got " + shape_str(x.shape()) +
                             " and " + shape_str(w.shape()));
  const std::int64_t B = x.dim(0), Ci = x.dim(1), T = x.dim(2);
  const std::int64_t Co = w.dim(0), K = w.dim(2);
  if (w.dim(1) != Ci)
    shape_fail("conv1d", "input channels " + std::to_string(Ci) + " vs kernel " +
                             std::to_string(w.dim(1)));
  if (stride < 1) shape_fail("conv1d", "stride must be >= 1");
  const std::int64_t To = (T + 2 * pad - K) / stride + 1;
  if (T + 2 * pad < K || To < 1)
    shape_fail("conv1d", "kernel " + std::to_string(K) + " too large for input length " +
                             std::to_string(T) + " with pad " + std::to_string(pad));
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != Co) shape_fail("conv1d", "bias length must equal Co");

  std::vector<Real> out(static_cast<std::size_t>(B * Co * To), Real(0));
  const Real* px = x.value().data();
  const Real* pw = w.value().data();
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t co = 0; co < Co; ++co) {
      Real* orow = out.data() + (b * Co + co) * To;
      if (has_bias) {
        const Real bv = bias.value()[co];
        for (std::int64_t t = 0; t < To; ++t) orow[t] = bv;
      }
      for (std::int64_t ci = 0; ci < Ci; ++ci) {
        const Real* irow = px + (b * Ci + ci) * T;
        const Real* wrow = pw + (co * Ci + ci) * K;
        for (std::int64_t k = 0; k < K; ++k) {
          const Real wv = wrow[k];
          // valid t: 0 <= t*stride + k - pad < T
          std::int64_t t0 = (pad - k + stride - 1) / stride;
          if (t0 < 0) t0 = 0;
          std::int64_t t1 = (T - 1 - k + pad) / stride;
          if (t1 > To - 1) t1 = To - 1;
          if (stride == 1) {
            const Real* src = irow + k - pad;
            for (std::int64_t t = t0; t <= t1; ++t) orow[t] += wv * src[t];
          } else {
            for (std::int64_t t = t0; t <= t1; ++t) orow[t] += wv * irow[t * stride + k - pad];
          }
        }
      }
    }
  }

  auto xn = x.node();
  auto wn = w.node();
  std::vector<std::shared_ptr<typename Tensor<Real>::Node>> parents{xn, wn};
  std::shared_ptr<typename Tensor<Real>::Node> bn;
  if (has_bias) {
    bn = bias.node();
    parents.push_back(bn);
  }
  auto node = detail::make_node<Real>("conv1d", {B, Co, To}, std::move(out), std::move(parents));
  if (node->requires_grad) {
    node->backward = [xn, wn, bn, B, Ci, T, Co, K, To, stride, pad](
                         typename Tensor<Real>::Node& self) {
      const Real* g = self.grad.data();
      const Real* px = xn->value.data();
      const Real* pw = wn->value.data();
      if (xn->requires_grad) {
        xn->ensure_grad();
        Real* gx = xn->grad.data();
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t co = 0; co < Co; ++co) {
            const Real* grow = g + (b * Co + co) * To;
            for (std::int64_t ci = 0; ci < Ci; ++ci) {
              Real* girow = gx + (b * Ci + ci) * T;
              const Real* wrow = pw + (co * Ci + ci) * K;
              for (std::int64_t k = 0; k < K; ++k) {
                const Real wv = wrow[k];
                std::int64_t t0 = (pad - k + stride - 1) / stride;
                if (t0 < 0) t0 = 0;
                std::int64_t t1 = (T - 1 - k + pad) / stride;
                if (t1 > To - 1) t1 = To - 1;
                if (stride == 1) {
                  Real* dst = girow + k - pad;
                  for (std::int64_t t = t0; t <= t1; ++t) dst[t] += wv * grow[t];
                } else {
                  for (std::int64_t t = t0; t <= t1; ++t)
                    girow[t * stride + k - pad] += wv * grow[t];
                }
              }
            }
          }
      }
      if (wn->requires_grad) {
        wn->ensure_grad();
        Real* gw = wn->grad.data();
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t co = 0; co < Co; ++co) {
            const Real* grow = g + (b * Co + co) * To;
            for (std::int64_t ci = 0; ci < Ci; ++ci) {
              const Real* irow = px + (b * Ci + ci) * T;
              Real* gwrow = gw + (co * Ci + ci) * K;
              for (std::int64_t k = 0; k < K; ++k) {
                std::int64_t t0 = (pad - k + stride - 1) / stride;
                if (t0 < 0) t0 = 0;
                std::int64_t t1 = (T - 1 - k + pad) / stride;
                if (t1 > To - 1) t1 = To - 1;
                Real acc = 0;
                if (stride == 1) {
                  const Real* src = irow + k - pad;
                  for (std::int64_t t = t0; t <= t1; ++t) acc += grow[t] * src[t];
                } else {
                  for (std::int64_t t = t0; t <= t1; ++t)
                    acc += grow[t] * irow[t * stride + k - pad];
                }
                gwrow[k] += acc;
              }
            }
          }
      }
      if (bn && bn->requires_grad) {
        bn->ensure_grad();
        Real* gb = bn->grad.data();
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t co = 0; co < Co; ++co) {
            const Real* grow = g + (b * Co + co) * To;
            Real acc = 0;
            for (std::int64_t t = 0; t < To; ++t) acc += grow[t];
            gb[co] += acc;
          }
      }
    };
  }
  return Tensor<Real>(std::move(node));
}

template <typename Real>
Tensor<Real> conv1d(const Tensor<Real>& x, const Tensor<Real>& w, std::int64_t stride,
                    std::int64_t pad) {
  return conv1d(x, w, Tensor<Real>(), stride, pad);
}

// ---------------------------------------------------------------------------
// softmax / log_softmax over the last axis (max-subtracted)
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& x) {
  if (x.rank() < 1) shape_fail("softmax", "needs rank >= 1");
  const std::int64_t m = x.dim(x.rank() - 1);
  const std::int64_t rows = x.numel() / m;
  std::vector<Real> out(static_cast<std::size_t>(x.numel()));
  const Real* px = x.value().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const Real* in = px + r * m;
    Real* o = out.data() + r * m;
    Real mx = in[0];
    for (std::int64_t j = 1; j < m; ++j) mx = std::max(mx, in[j]);
    Real sum = 0;
    for (std::int64_t j = 0; j < m; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    const Real inv = Real(1) / sum;
    for (std::int64_t j = 0; j < m; ++j) o[j] *= inv;
  }
  auto xn = x.node();
  auto node = detail::make_node<Real>("softmax", x.shape(), std::move(out), {xn});
  if (node->requires_grad) {
    node->backward = [xn, rows, m](typename Tensor<Real>::Node& self) {
      xn->ensure_grad();
      Real* gx = xn->grad.data();
      const Real* g = self.grad.data();
      const Real* p = self.value.data();
      for (std::int64_t r = 0; r < rows; ++r) {
        const Real* gr = g + r * m;
        const Real* pr = p + r * m;
        Real dot = 0;
        for (std::int64_t j = 0; j < m; ++j) dot += gr[j] * pr[j];
        Real* gxr = gx + r * m;
        for (std::int64_t j = 0; j < m; ++j) gxr[j] += pr[j] * (gr[j] - dot);
      }
    };
  }
  return Tensor<Real>(std::move(node));
}

template <typename Real>
Tensor<Real> log_softmax(const Tensor<Real>& x) {
  if (x.rank() < 1) shape_fail("log_softmax", "needs rank >= 1");
  const std::int64_t m = x.dim(x.rank() - 1);
  const std::int64_t rows = x.numel() / m;
  std::vector<Real> out(static_cast<std::size_t>(x.numel()));
  const Real* px = x.value().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const Real* in = px + r * m;
    Real* o = out.data() + r * m;
    Real mx = in[0];
    for (std::int64_t j = 1; j < m; ++j) mx = std::max(mx, in[j]);
    Real sum = 0;
    for (std::int64_t j = 0; j < m; ++j) sum += std::exp(in[j] - mx);
    const Real lse = mx + std::log(sum);
    for (std::int64_t j = 0; j < m; ++j) o[j] = in[j] - lse;
  }
  auto xn = x.node();
  auto node = detail::make_node<Real>("log_softmax", x.shape(), std::move(out), {xn});
  if (node->requires_grad) {
    node->backward = [xn, rows, m](typename Tensor<Real>::Node& self) {
      xn->ensure_grad();
      Real* gx = xn->grad.data();
      const Real* g = self.grad.data();
      const Real* y = self.value.data();
      for (std::int64_t r = 0; r < rows; ++r) {
        const Real* gr = g + r * m;
        const Real* yr = y + r * m;
        Real gsum = 0;
        for (std::int64_t j = 0; j < m; ++j) gsum += gr[j];
        Real* gxr = gx + r * m;
        for (std::int64_t j = 0; j < m; ++j) gxr[j] += gr[j] - std::exp(yr[j]) * gsum;
      }
    };
  }
  return Tensor<Real>(std::move(node));
}

// ---------------------------------------------------------------------------
// reductions over a named axis
// ---------------------------------------------------------------------------

namespace detail {
inline void axis_split(const Shape& s, std::size_t axis, std::int64_t& outer, std::int64_t& n,
                       std::int64_t& inner) {
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

inline Shape drop_axis(const Shape& s, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out.push_back(s[i]);
  return out;
}
}  // namespace detail

template <typename Real>
Tensor<Real> sum_axis(const Tensor<Real>& x, std::size_t axis) {
  if (axis >= x.rank()) shape_fail("sum_axis", "axis out of range");
  std::int64_t outer, n, inner;
  detail::axis_split(x.shape(), axis, outer, n, inner);
  std::vector<Real> out(static_cast<std::size_t>(outer * inner), Real(0));
  const Real* px = x.value().data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t a = 0; a < n; ++a) {
      const Real* row = px + (o * n + a) * inner;
      Real* dst = out.data() + o * inner;
      for (std::int64_t i = 0; i < inner; ++i) dst[i] += row[i];
    }
  auto xn = x.node();
  auto node = detail::make_node<Real>("sum_axis", detail::drop_axis(x.shape(), axis),
                                      std::move(out), {xn});
  if (node->requires_grad) {
    node->backward = [xn, outer, n, inner](typename Tensor<Real>::Node& self) {
      xn->ensure_grad();
      Real* gx = xn->grad.data();
      const Real* g = self.grad.data();
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t a = 0; a < n; ++a) {
          Real* row = gx + (o * n + a) * inner;
          const Real* src = g + o * inner;
          for (std::int64_t i = 0; i < inner; ++i) row[i] += src[i];
        }
    };
  }
  return Tensor<Real>(std::move(node));
}

template <typename Real>
Tensor<Real> mean_axis(const Tensor<Real>& x, std::size_t axis) {
  if (axis >= x.rank()) shape_fail("mean_axis", "axis out of range");
  const Real inv = Real(1) / Real(x.dim(axis));
  return affine(sum_axis(x, axis), inv, Real(0));
}

// Batch variance over `axis` (unbiased by default; n >= 2 required then).
template <typename Real>
Tensor<Real> var_axis(const Tensor<Real>& x, std::size_t axis, bool unbiased = true) {
  if (axis >= x.rank()) shape_fail("var_axis", "axis out of range");
  std::int64_t outer, n, inner;
  detail::axis_split(x.shape(), axis, outer, n, inner);
  if (unbiased && n < 2) shape_fail("var_axis", "unbiased variance needs extent >= 2");
  const Real divisor = Real(unbiased ? n - 1 : n);
  std::vector<Real> means(static_cast<std::size_t>(outer * inner), Real(0));
  std::vector<Real> out(static_cast<std::size_t>(outer * inner), Real(0));
  const Real* px = x.value().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t a = 0; a < n; ++a) {
      const Real* row = px + (o * n + a) * inner;
      Real* m = means.data() + o * inner;
      for (std::int64_t i = 0; i < inner; ++i) m[i] += row[i];
    }
    Real* m = means.data() + o * inner;
    for (std::int64_t i = 0; i < inner; ++i) m[i] /= Real(n);
    for (std::int64_t a = 0; a < n; ++a) {
      const Real* row = px + (o * n + a) * inner;
      Real* dst = out.data() + o * inner;
      for (std::int64_t i = 0; i < inner; ++i) {
        const Real d = row[i] - m[i];
        dst[i] += d * d;
      }
    }
    Real* dst = out.data() + o * inner;
    for (std::int64_t i = 0; i < inner; ++i) dst[i] /= divisor;
  }
  auto xn = x.node();
  auto node = detail::make_node<Real>("var_axis", detail::drop_axis(x.shape(), axis),
                                      std::move(out), {xn});
  if (node->requires_grad) {
    auto mean_keep = std::make_shared<std::vector<Real>>(std::move(means));
    node->backward = [xn, mean_keep, outer, n, inner, divisor](
                         typename Tensor<Real>::Node& self) {
      xn->ensure_grad();
      Real* gx = xn->grad.data();
      const Real* g = self.grad.data();
      const Real* px = xn->value.data();
      const Real* m = mean_keep->data();
      const Real c = Real(2) / divisor;
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t a = 0; a < n; ++a) {
          Real* row = gx + (o * n + a) * inner;
          const Real* xr = px + (o * n + a) * inner;
          const Real* gr = g + o * inner;
          const Real* mr = m + o * inner;
          for (std::int64_t i = 0; i < inner; ++i)
            row[i] += gr[i] * c * (xr[i] - mr[i]);
        }
    };
  }
  return Tensor<Real>(std::move(node));
}

template <typename Real>
Tensor<Real> sum_all(const Tensor<Real>& x) {
  const std::int64_t n = x.numel();
  Real acc = 0;
  const Real* px = x.value().data();
  for (std::int64_t i = 0; i < n; ++i) acc += px[i];
  auto xn = x.node();
  auto node = detail::make_node<Real>("sum_all", Shape{}, std::vector<Real>{acc}, {xn});
  if (node->requires_grad) {
    node->backward = [xn, n](typename Tensor<Real>::Node& self) {
      xn->ensure_grad();
      Real* gx = xn->grad.data();
      const Real g = self.grad[0];
      for (std::int64_t i = 0; i < n; ++i) gx[i] += g;
    };
  }
  return Tensor<Real>(std::move(node));
}

template <typename Real>
Tensor<Real> mean_all(const Tensor<Real>& x) {
  return affine(sum_all(x), Real(1) / Real(x.numel()), Real(0));
}

// ---------------------------------------------------------------------------
// concat / slice / transpose2d
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> concat(const std::vector<Tensor<Real>>& parts, std::size_t axis) {
  if (parts.empty()) shape_fail("concat", "no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) shape_fail("concat", "axis out of range");
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != s0.size()) shape_fail("concat", "rank mismatch");
    for (std::size_t i = 0; i < s0.size(); ++i)
      if (i != axis && p.shape()[i] != s0[i])
        shape_fail("concat", "shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(s0));
    total += p.dim(axis);
  }
  Shape out_shape = s0;
  out_shape[axis] = total;
  std::int64_t outer, n_unused, inner;
  detail::axis_split(out_shape, axis, outer, n_unused, inner);
  (void)n_unused;

  std::vector<Real> out(static_cast<std::size_t>(shape_numel(out_shape)));
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    const std::int64_t pn = p.dim(axis);
    const Real* src = p.value().data();
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy(src + o * pn * inner, src + (o + 1) * pn * inner,
                out.data() + (o * total + offset) * inner);
    offset += pn;
  }

  std::vector<std::shared_ptr<typename Tensor<Real>::Node>> parents;
  std::vector<std::int64_t> extents;
  for (const auto& p : parts) {
    parents.push_back(p.node());
    extents.push_back(p.dim(axis));
  }
  auto node = detail::make_node<Real>("concat", out_shape, std::move(out), parents);
  if (node->requires_grad) {
    node->backward = [parents, extents, outer, total, inner](typename Tensor<Real>::Node& self) {
      const Real* g = self.grad.data();
      std::int64_t offset = 0;
      for (std::size_t pi = 0; pi < parents.size(); ++pi) {
        auto& P = *parents[pi];
        const std::int64_t pn = extents[pi];
        if (P.requires_grad) {
          P.ensure_grad();
          Real* dst = P.grad.data();
          for (std::int64_t o = 0; o < outer; ++o) {
            const Real* src = g + (o * total + offset) * inner;
            Real* drow = dst + o * pn * inner;
            for (std::int64_t i = 0; i < pn * inner; ++i) drow[i] += src[i];
          }
        }
        offset += pn;
      }
    };
  }
  return Tensor<Real>(std::move(node));
}

template <typename Real>
Tensor<Real> slice(const Tensor<Real>& x, std::size_t axis, std::int64_t start,
                   std::int64_t len) {
  if (axis >= x.rank()) shape_fail("slice", "axis out of range");
  const std::int64_t n = x.dim(axis);
  if (start < 0 || len < 1 || start + len > n)
    shape_fail("slice", "range [" + std::to_string(start) + "," + std::to_string(start + len) +
                            ") out of bounds for extent " + std::to_string(n));
  std::int64_t outer, n_axis, inner;
  detail::axis_split(x.shape(), axis, outer, n_axis, inner);
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  std::vector<Real> out(static_cast<std::size_t>(outer * len * inner));
  const Real* px = x.value().data();
  for (std::int64_t o = 0; o < outer; ++o)
    std::copy(px + (o * n_axis + start) * inner, px + (o * n_axis + start + len) * inner,
              out.data() + o * len * inner);
  auto xn = x.node();
  auto node = detail::make_node<Real>("slice", out_shape, std::move(out), {xn});
  if (node->requires_grad) {
    node->backward = [xn, outer, n_axis, inner, start, len](typename Tensor<Real>::Node& self) {
      xn->ensure_grad();
      Real* gx = xn->grad.data();
      const Real* g = self.grad.data();
      for (std::int64_t o = 0; o < outer; ++o) {
        const Real* src = g + o * len * inner;
        Real* dst = gx + (o * n_axis + start) * inner;
        for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
      }
    };
  }
  return Tensor<Real>(std::move(node));
}

template <typename Real>
Tensor<Real> transpose2d(const Tensor<Real>& x) {
  if (x.rank() != 2) shape_fail("transpose2d", "expects rank 2, got " + shape_str(x.shape()));
  const std::int64_t n = x.dim(0), m = x.dim(1);
  std::vector<Real> out(static_cast<std::size_t>(n * m));
  const Real* px = x.value().data();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < m; ++j) out[j * n + i] = px[i * m + j];
  auto xn = x.node();
  auto node = detail::make_node<Real>("transpose2d", {m, n}, std::move(out), {xn});
  if (node->requires_grad) {
    node->backward = [xn, n, m](typename Tensor<Real>::Node& self) {
      xn->ensure_grad();
      Real* gx = xn->grad.data();
      const Real* g = self.grad.data();
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < m; ++j) gx[i * m + j] += g[j * n + i];
    };
  }
  return Tensor<Real>(std::move(node));
}

// reshape without data movement (numel must match)
template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    shape_fail("reshape", shape_str(x.shape()) + " -> " + shape_str(shape));
  auto xn = x.node();
  auto node = detail::make_node<Real>("reshape", shape, std::vector<Real>(x.value()), {xn});
  if (node->requires_grad) {
    const std::int64_t n = x.numel();
    node->backward = [xn, n](typename Tensor<Real>::Node& self) {
      xn->ensure_grad();
      Real* gx = xn->grad.data();
      const Real* g = self.grad.data();
      for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i];
    };
  }
  return Tensor<Real>(std::move(node));
}

// operator sugar
template <typename Real>
Tensor<Real> operator+(const Tensor<Real>& a, const Tensor<Real>& b) { return add(a, b); }
template <typename Real>
Tensor<Real> operator-(const Tensor<Real>& a, const Tensor<Real>& b) { return sub(a, b); }
template <typename Real>
Tensor<Real> operator*(const Tensor<Real>& a, const Tensor<Real>& b) { return mul(a, b); }
template <typename Real>
Tensor<Real> operator*(const Tensor<Real>& a, Real c) { return affine(a, c, Real(0)); }
template <typename Real>
Tensor<Real> operator*(Real c, const Tensor<Real>& a) { return affine(a, c, Real(0)); }

// argmax over the last axis (plain value utility, no graph)
template <typename Real>
std::vector<int> argmax_rows(const Tensor<Real>& x) {
  const std::int64_t m = x.dim(x.rank() - 1);
  const std::int64_t rows = x.numel() / m;
  std::vector<int> out(static_cast<std::size_t>(rows));
  const Real* px = x.value().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const Real* row = px + r * m;
    int best = 0;
    for (std::int64_t j = 1; j < m; ++j)
      if (row[j] > row[best]) best = static_cast<int>(j);
    out[r] = best;
  }
  return out;
}

}  // namespace vickd
