#include "pcdepth/autograd.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

namespace pcdepth::ag {

namespace {

using MatR = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMapR = Eigen::Map<const MatR>;

// dst (+)= op(a) * op(b), where a is stored ar x ac and b is br x bc, both row-major.
// Eigen's kernels peel unaligned heads, so results on raw vector storage would
// depend on where the allocator put it. Operands and result go through
// Eigen-owned (aligned) matrices to keep every run bitwise identical.
void product(const Real* a, int ar, int ac, bool ta, const Real* b, int br, int bc, bool tb, Real* dst,
             bool accumulate) {
  const MatR am = CMapR(a, ar, ac);
  const MatR bm = CMapR(b, br, bc);
  MatR c;
  if (ta && tb) {
    c.noalias() = am.transpose() * bm.transpose();
  } else if (ta) {
    c.noalias() = am.transpose() * bm;
  } else if (tb) {
    c.noalias() = am * bm.transpose();
  } else {
    c.noalias() = am * bm;
  }
  const std::size_t n = static_cast<std::size_t>(c.size());
  if (accumulate) {
    for (std::size_t i = 0; i < n; ++i) dst[i] += c.data()[i];
  } else {
    std::copy(c.data(), c.data() + n, dst);
  }
}

thread_local bool g_grad_enabled = true;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                              shape_str(b));
}

void require_rank(const char* op, const Var& a, int rank) {
  if (!a.defined() || a.ndim() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                (a.defined() ? ", got " + shape_str(a.shape()) : ", got undefined"));
  }
}

Var make_result(Shape shape, std::vector<Real> value, std::vector<Var> parents,
                std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) {
      if (p.defined() && p.requires_grad()) needs = true;
    }
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.defined() ? p.ptr() : nullptr);
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

// Parent i if it takes gradients, else nullptr.
Node* grad_target(Node& self, std::size_t i) {
  Node* p = self.parents[i].get();
  return (p != nullptr && p->requires_grad) ? p : nullptr;
}

template <class Fwd, class Deriv>
Var unary(const Var& a, Fwd fwd, Deriv deriv) {
  std::vector<Real> out(a.numel());
  const auto& x = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
  return make_result(a.shape(), std::move(out), {a}, [deriv](Node& self) {
    Node* pa = grad_target(self, 0);
    if (pa == nullptr) return;
    auto& ga = pa->ensure_grad();
    const auto& xv = pa->value;
    for (std::size_t i = 0; i < ga.size(); ++i) {
      ga[i] += self.grad[i] * deriv(xv[i], self.value[i]);
    }
  });
}

// out[i] = in[index[i]]; backward scatters.
Var gather(const Var& a, Shape shape, std::vector<std::size_t> index) {
  std::vector<Real> out(index.size());
  const auto& x = a.value();
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = x[index[i]];
  auto idx = std::make_shared<std::vector<std::size_t>>(std::move(index));
  return make_result(std::move(shape), std::move(out), {a}, [idx](Node& self) {
    Node* pa = grad_target(self, 0);
    if (pa == nullptr) return;
    auto& ga = pa->ensure_grad();
    for (std::size_t i = 0; i < idx->size(); ++i) ga[(*idx)[i]] += self.grad[i];
  });
}

void im2col(const Real* x, int channels, int h, int w, int k, int stride, int pad, int ho, int wo,
            Real* cols) {
  const int plane = ho * wo;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        Real* row = cols + static_cast<std::size_t>((c * k + ki) * k + kj) * plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ki;
          Real* dst = row + oy * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, 0.0);
            continue;
          }
          const Real* src = x + (static_cast<std::size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kj;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const Real* cols, int channels, int h, int w, int k, int stride, int pad, int ho,
            int wo, Real* x) {
  const int plane = ho * wo;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const Real* row = cols + static_cast<std::size_t>((c * k + ki) * k + kj) * plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) continue;
          Real* dst = x + (static_cast<std::size_t>(c) * h + iy) * w;
          const Real* src = row + oy * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

struct AxisInterp {
  std::vector<int> lo, hi;
  std::vector<Real> frac;
};

AxisInterp bilinear_axis(int in, int factor) {
  const int out = in * factor;
  AxisInterp a;
  a.lo.resize(static_cast<std::size_t>(out));
  a.hi.resize(static_cast<std::size_t>(out));
  a.frac.resize(static_cast<std::size_t>(out));
  for (int o = 0; o < out; ++o) {
    Real src = (o + 0.5) / factor - 0.5;
    if (src < 0) src = 0;
    int lo = static_cast<int>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const int hi = std::min(lo + 1, in - 1);
    a.lo[static_cast<std::size_t>(o)] = lo;
    a.hi[static_cast<std::size_t>(o)] = hi;
    a.frac[static_cast<std::size_t>(o)] = src - lo;
  }
  return a;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::vector<Real>& Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Var Var::constant(Shape shape, std::vector<Real> value) {
  if (ag::numel(shape) != value.size()) {
    throw std::invalid_argument("Var::constant: " + shape_str(shape) + " does not hold " +
                                std::to_string(value.size()) + " values");
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  return Var(std::move(n));
}

Var Var::constant(Shape shape, Real fill) {
  const auto count = ag::numel(shape);
  return constant(std::move(shape), std::vector<Real>(count, fill));
}

Var Var::parameter(Shape shape, std::vector<Real> value) {
  Var v = constant(std::move(shape), std::move(value));
  v.node_->requires_grad = true;
  return v;
}

Real Var::item() const {
  if (numel() != 1) throw std::logic_error("item() on non-scalar " + shape_str(shape()));
  return node_->value[0];
}

const std::vector<Real>& Var::grad() const { return node_->ensure_grad(); }

void Var::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Var::backward() const {
  if (numel() != 1) throw std::logic_error("backward() requires a scalar, got " + shape_str(shape()));
  if (!requires_grad()) return;

  // Iterative post-order DFS; graphs here are thousands of nodes deep.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p != nullptr && p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// ---- elementwise ---------------------------------------------------------

Var add(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (Node* p = grad_target(self, k)) {
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Var sub(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (Node* p = grad_target(self, 0)) {
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (Node* p = grad_target(self, 1)) {
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node* pa = self.parents[0].get();
    Node* pb = self.parents[1].get();
    if (Node* p = grad_target(self, 0)) {
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value[i];
    }
    if (Node* p = grad_target(self, 1)) {
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value[i];
    }
  });
}

Var scale(const Var& a, Real s) {
  return unary(a, [s](Real x) { return s * x; }, [s](Real, Real) { return s; });
}

Var add_scalar(const Var& a, Real s) {
  return unary(a, [s](Real x) { return x + s; }, [](Real, Real) { return 1.0; });
}

Var one_minus(const Var& a) {
  return unary(a, [](Real x) { return 1.0 - x; }, [](Real, Real) { return -1.0; });
}

Var sigmoid(const Var& a) {
  return unary(
      a,
      [](Real x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const Real e = std::exp(x);
        return e / (1.0 + e);
      },
      [](Real, Real y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
  return unary(a, [](Real x) { return std::tanh(x); }, [](Real, Real y) { return 1.0 - y * y; });
}

Var silu(const Var& a) {
  return unary(
      a, [](Real x) { return x / (1.0 + std::exp(-x)); },
      [](Real x, Real) {
        const Real s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Var gelu(const Var& a) {
  constexpr Real c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr Real k = 0.044715;
  return unary(
      a,
      [](Real x) { return 0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x))); },
      [](Real x, Real) {
        const Real u = c * (x + k * x * x * x);
        const Real t = std::tanh(u);
        const Real du = c * (1.0 + 3.0 * k * x * x);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
      });
}

Var exp(const Var& a) {
  return unary(a, [](Real x) { return std::exp(x); }, [](Real, Real y) { return y; });
}

Var log(const Var& a) {
  return unary(a, [](Real x) { return std::log(x); }, [](Real x, Real) { return 1.0 / x; });
}

Var sqrt(const Var& a) {
  return unary(
      a, [](Real x) { return std::sqrt(x); },
      [](Real, Real y) { return y > 0 ? 0.5 / y : 0.0; });
}

Var square(const Var& a) {
  return unary(a, [](Real x) { return x * x; }, [](Real x, Real) { return 2.0 * x; });
}

// ---- reductions ----------------------------------------------------------

Var sum(const Var& a) {
  Real s = 0;
  for (Real v : a.value()) s += v;
  return make_result({1}, {s}, {a}, [](Node& self) {
    if (Node* p = grad_target(self, 0)) {
      auto& g = p->ensure_grad();
      for (auto& gi : g) gi += self.grad[0];
    }
  });
}

Var mean(const Var& a) {
  if (a.numel() == 0) throw std::invalid_argument("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<Real>(a.numel()));
}

// ---- shape ---------------------------------------------------------------

Var reshape(const Var& a, Shape shape) {
  if (numel(shape) != a.numel()) shape_error("reshape", a.shape(), shape);
  return make_result(std::move(shape), a.value(), {a}, [](Node& self) {
    if (Node* p = grad_target(self, 0)) {
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var transpose(const Var& a) {
  require_rank("transpose", a, 2);
  const int m = a.dim(0), n = a.dim(1);
  std::vector<std::size_t> idx(a.numel());
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < m; ++i) idx[static_cast<std::size_t>(j) * m + i] = static_cast<std::size_t>(i) * n + j;
  return gather(a, {n, m}, std::move(idx));
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat of nothing");
  Shape shape = parts[0].shape();
  int total = 0;
  for (const auto& p : parts) {
    if (p.ndim() != static_cast<int>(shape.size())) shape_error("concat", shape, p.shape());
    for (std::size_t d = 1; d < shape.size(); ++d)
      if (p.shape()[d] != shape[d]) shape_error("concat", shape, p.shape());
    total += p.dim(0);
  }
  shape[0] = total;
  std::vector<Real> out;
  out.reserve(numel(shape));
  for (const auto& p : parts) out.insert(out.end(), p.value().begin(), p.value().end());
  return make_result(std::move(shape), std::move(out), parts, [](Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      const std::size_t n = self.parents[k]->value.size();
      if (Node* p = grad_target(self, k)) {
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
      }
      offset += n;
    }
  });
}

Var slice_cols(const Var& a, int start, int count) {
  require_rank("slice_cols", a, 2);
  const int m = a.dim(0), n = a.dim(1);
  if (start < 0 || count < 0 || start + count > n) throw std::out_of_range("slice_cols range");
  std::vector<std::size_t> idx;
  idx.reserve(static_cast<std::size_t>(m) * count);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < count; ++j) idx.push_back(static_cast<std::size_t>(i) * n + start + j);
  return gather(a, {m, count}, std::move(idx));
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols of nothing");
  std::vector<Var> transposed;
  transposed.reserve(parts.size());
  for (const auto& p : parts) transposed.push_back(transpose(p));
  return transpose(concat(transposed));
}

Var expand_cols(const Var& a, int cols) {
  require_rank("expand_cols", a, 2);
  if (a.dim(1) != 1) throw std::invalid_argument("expand_cols expects [m, 1], got " + shape_str(a.shape()));
  const int m = a.dim(0);
  std::vector<std::size_t> idx;
  idx.reserve(static_cast<std::size_t>(m) * cols);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < cols; ++j) idx.push_back(static_cast<std::size_t>(i));
  return gather(a, {m, cols}, std::move(idx));
}

Var image_to_rows(const Var& a) {
  require_rank("image_to_rows", a, 3);
  const int c = a.dim(0), hw = a.dim(1) * a.dim(2);
  return transpose(reshape(a, {c, hw}));
}

Var rows_to_image(const Var& a, int h, int w) {
  require_rank("rows_to_image", a, 2);
  if (a.dim(0) != h * w) throw std::invalid_argument("rows_to_image: row count does not match h*w");
  const int c = a.dim(1);
  return reshape(transpose(a), {c, h, w});
}

// ---- linear algebra ------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) shape_error("matmul", a.shape(), b.shape());
  std::vector<Real> out(static_cast<std::size_t>(m) * n);
  product(a.value().data(), m, k, false, b.value().data(), k, n, false, out.data(), false);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const Real* g = self.grad.data();
    if (Node* p = grad_target(self, 0)) {
      product(g, m, n, false, self.parents[1]->value.data(), k, n, true, p->ensure_grad().data(), true);
    }
    if (Node* p = grad_target(self, 1)) {
      product(self.parents[0]->value.data(), m, k, true, g, m, n, false, p->ensure_grad().data(), true);
    }
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  require_rank("matmul_nt", a, 2);
  require_rank("matmul_nt", b, 2);
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) shape_error("matmul_nt", a.shape(), b.shape());
  std::vector<Real> out(static_cast<std::size_t>(m) * n);
  product(a.value().data(), m, k, false, b.value().data(), n, k, true, out.data(), false);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const Real* g = self.grad.data();
    if (Node* p = grad_target(self, 0)) {
      product(g, m, n, false, self.parents[1]->value.data(), n, k, false, p->ensure_grad().data(), true);
    }
    if (Node* p = grad_target(self, 1)) {
      product(g, m, n, true, self.parents[0]->value.data(), m, k, false, p->ensure_grad().data(), true);
    }
  });
}

Var add_row_bias(const Var& a, const Var& bias) {
  require_rank("add_row_bias", a, 2);
  const int m = a.dim(0), n = a.dim(1);
  if (bias.numel() != static_cast<std::size_t>(n)) shape_error("add_row_bias", a.shape(), bias.shape());
  std::vector<Real> out(a.value());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] += bias.value()[static_cast<std::size_t>(j)];
  return make_result(a.shape(), std::move(out), {a, bias}, [m, n](Node& self) {
    if (Node* p = grad_target(self, 0)) {
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (Node* p = grad_target(self, 1)) {
      auto& g = p->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) g[static_cast<std::size_t>(j)] += self.grad[static_cast<std::size_t>(i) * n + j];
    }
  });
}

Var softmax_rows(const Var& a) {
  require_rank("softmax_rows", a, 2);
  const int m = a.dim(0), n = a.dim(1);
  std::vector<Real> out(a.numel());
  for (int i = 0; i < m; ++i) {
    const Real* x = a.value().data() + static_cast<std::size_t>(i) * n;
    Real* y = out.data() + static_cast<std::size_t>(i) * n;
    const Real mx = *std::max_element(x, x + n);
    Real s = 0;
    for (int j = 0; j < n; ++j) s += (y[j] = std::exp(x[j] - mx));
    for (int j = 0; j < n; ++j) y[j] /= s;
  }
  return make_result(a.shape(), std::move(out), {a}, [m, n](Node& self) {
    Node* p = grad_target(self, 0);
    if (p == nullptr) return;
    auto& g = p->ensure_grad();
    for (int i = 0; i < m; ++i) {
      const std::size_t o = static_cast<std::size_t>(i) * n;
      Real dot = 0;
      for (int j = 0; j < n; ++j) dot += self.grad[o + j] * self.value[o + j];
      for (int j = 0; j < n; ++j) g[o + j] += self.value[o + j] * (self.grad[o + j] - dot);
    }
  });
}

Var softmax_cols(const Var& a) { return transpose(softmax_rows(transpose(a))); }

Var normalize_rows(const Var& a) {
  require_rank("normalize_rows", a, 2);
  const int m = a.dim(0), n = a.dim(1);
  std::vector<Real> out(a.numel());
  std::vector<Real> sums(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const std::size_t o = static_cast<std::size_t>(i) * n;
    Real s = 0;
    for (int j = 0; j < n; ++j) s += a.value()[o + j];
    if (s == 0) throw std::domain_error("normalize_rows: zero row sum");
    sums[static_cast<std::size_t>(i)] = s;
    for (int j = 0; j < n; ++j) out[o + j] = a.value()[o + j] / s;
  }
  return make_result(a.shape(), std::move(out), {a}, [m, n, sums](Node& self) {
    Node* p = grad_target(self, 0);
    if (p == nullptr) return;
    auto& g = p->ensure_grad();
    for (int i = 0; i < m; ++i) {
      const std::size_t o = static_cast<std::size_t>(i) * n;
      Real dot = 0;
      for (int j = 0; j < n; ++j) dot += self.grad[o + j] * self.value[o + j];
      const Real inv = 1.0 / sums[static_cast<std::size_t>(i)];
      for (int j = 0; j < n; ++j) g[o + j] += (self.grad[o + j] - dot) * inv;
    }
  });
}

Var layer_norm_rows(const Var& a, const Var& gamma, const Var& beta, Real eps) {
  require_rank("layer_norm_rows", a, 2);
  const int m = a.dim(0), n = a.dim(1);
  if (gamma.numel() != static_cast<std::size_t>(n) || beta.numel() != static_cast<std::size_t>(n))
    shape_error("layer_norm_rows", a.shape(), gamma.shape());
  std::vector<Real> xhat(a.numel()), out(a.numel());
  std::vector<Real> inv_std(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const std::size_t o = static_cast<std::size_t>(i) * n;
    Real mu = 0;
    for (int j = 0; j < n; ++j) mu += a.value()[o + j];
    mu /= n;
    Real var = 0;
    for (int j = 0; j < n; ++j) var += (a.value()[o + j] - mu) * (a.value()[o + j] - mu);
    var /= n;
    const Real is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(i)] = is;
    for (int j = 0; j < n; ++j) {
      xhat[o + j] = (a.value()[o + j] - mu) * is;
      out[o + j] = xhat[o + j] * gamma.value()[static_cast<std::size_t>(j)] + beta.value()[static_cast<std::size_t>(j)];
    }
  }
  return make_result(a.shape(), std::move(out), {a, gamma, beta},
                     [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
    const auto& gam = self.parents[1]->value;
    if (Node* p = grad_target(self, 0)) {
      auto& g = p->ensure_grad();
      std::vector<Real> dxhat(static_cast<std::size_t>(n));
      for (int i = 0; i < m; ++i) {
        const std::size_t o = static_cast<std::size_t>(i) * n;
        Real mean_d = 0, mean_dx = 0;
        for (int j = 0; j < n; ++j) {
          dxhat[static_cast<std::size_t>(j)] = self.grad[o + j] * gam[static_cast<std::size_t>(j)];
          mean_d += dxhat[static_cast<std::size_t>(j)];
          mean_dx += dxhat[static_cast<std::size_t>(j)] * xhat[o + j];
        }
        mean_d /= n;
        mean_dx /= n;
        for (int j = 0; j < n; ++j)
          g[o + j] += inv_std[static_cast<std::size_t>(i)] * (dxhat[static_cast<std::size_t>(j)] - mean_d - xhat[o + j] * mean_dx);
      }
    }
    if (Node* p = grad_target(self, 1)) {
      auto& g = p->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          g[static_cast<std::size_t>(j)] += self.grad[static_cast<std::size_t>(i) * n + j] * xhat[static_cast<std::size_t>(i) * n + j];
    }
    if (Node* p = grad_target(self, 2)) {
      auto& g = p->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) g[static_cast<std::size_t>(j)] += self.grad[static_cast<std::size_t>(i) * n + j];
    }
  });
}

// ---- image ops -----------------------------------------------------------

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  require_rank("conv2d", x, 3);
  require_rank("conv2d", w, 4);
  const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin || w.dim(3) != k) shape_error("conv2d", x.shape(), w.shape());
  if (b.defined() && b.numel() != static_cast<std::size_t>(cout)) shape_error("conv2d bias", w.shape(), b.shape());
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (wd + 2 * pad - k) / stride + 1;
  if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: output would be empty for input " + shape_str(x.shape()));
  const int kk = cin * k * k;
  const int plane = ho * wo;
  const bool pointwise = (k == 1 && stride == 1 && pad == 0);

  std::shared_ptr<std::vector<Real>> cols;
  if (!pointwise) {
    cols = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(kk) * plane);
    im2col(x.value().data(), cin, h, wd, k, stride, pad, ho, wo, cols->data());
  }
  const Real* col_ptr = pointwise ? x.value().data() : cols->data();

  std::vector<Real> out(static_cast<std::size_t>(cout) * plane);
  product(w.value().data(), cout, kk, false, col_ptr, kk, plane, false, out.data(), false);
  if (b.defined()) {
    for (int c = 0; c < cout; ++c) {
      const Real bc = b.value()[static_cast<std::size_t>(c)];
      for (int i = 0; i < plane; ++i) out[static_cast<std::size_t>(c) * plane + i] += bc;
    }
  }

  return make_result({cout, ho, wo}, std::move(out), {x, w, b},
                     [=](Node& self) {
    const Real* g = self.grad.data();
    const Real* cp = pointwise ? self.parents[0]->value.data() : cols->data();
    if (Node* p = grad_target(self, 1)) {
      product(g, cout, plane, false, cp, kk, plane, true, p->ensure_grad().data(), true);
    }
    if (Node* p = grad_target(self, 2)) {
      auto& gb = p->ensure_grad();
      for (int c = 0; c < cout; ++c) {
        Real acc = 0;
        for (int i = 0; i < plane; ++i) acc += g[static_cast<std::size_t>(c) * plane + i];
        gb[static_cast<std::size_t>(c)] += acc;
      }
    }
    if (Node* p = grad_target(self, 0)) {
      auto& gx = p->ensure_grad();
      const Real* wm = self.parents[1]->value.data();
      if (pointwise) {
        product(wm, cout, kk, true, g, cout, plane, false, gx.data(), true);
      } else {
        std::vector<Real> dcols(static_cast<std::size_t>(kk) * plane);
        product(wm, cout, kk, true, g, cout, plane, false, dcols.data(), false);
        col2im(dcols.data(), cin, h, wd, k, stride, pad, ho, wo, gx.data());
      }
    }
  });
}

Var group_norm(const Var& x, int groups, const Var& gamma, const Var& beta, Real eps) {
  require_rank("group_norm", x, 3);
  const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
  if (groups <= 0 || c % groups != 0) throw std::invalid_argument("group_norm: channels not divisible by groups");
  if (gamma.numel() != static_cast<std::size_t>(c) || beta.numel() != static_cast<std::size_t>(c))
    shape_error("group_norm", x.shape(), gamma.shape());
  const int per = c / groups;
  const std::size_t gsize = static_cast<std::size_t>(per) * hw;
  std::vector<Real> xhat(x.numel()), out(x.numel());
  std::vector<Real> inv_std(static_cast<std::size_t>(groups));
  for (int g = 0; g < groups; ++g) {
    const std::size_t o = static_cast<std::size_t>(g) * gsize;
    Real mu = 0;
    for (std::size_t i = 0; i < gsize; ++i) mu += x.value()[o + i];
    mu /= static_cast<Real>(gsize);
    Real var = 0;
    for (std::size_t i = 0; i < gsize; ++i) var += (x.value()[o + i] - mu) * (x.value()[o + i] - mu);
    var /= static_cast<Real>(gsize);
    const Real is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(g)] = is;
    for (std::size_t i = 0; i < gsize; ++i) xhat[o + i] = (x.value()[o + i] - mu) * is;
  }
  for (int ch = 0; ch < c; ++ch) {
    const Real ga = gamma.value()[static_cast<std::size_t>(ch)], be = beta.value()[static_cast<std::size_t>(ch)];
    const std::size_t o = static_cast<std::size_t>(ch) * hw;
    for (int i = 0; i < hw; ++i) out[o + i] = xhat[o + i] * ga + be;
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [c, hw, groups, per, gsize, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
    const auto& gam = self.parents[1]->value;
    if (Node* p = grad_target(self, 0)) {
      auto& gx = p->ensure_grad();
      std::vector<Real> dxhat(gsize);
      for (int g = 0; g < groups; ++g) {
        const std::size_t o = static_cast<std::size_t>(g) * gsize;
        Real mean_d = 0, mean_dx = 0;
        for (std::size_t i = 0; i < gsize; ++i) {
          const int ch = g * per + static_cast<int>(i / static_cast<std::size_t>(hw));
          dxhat[i] = self.grad[o + i] * gam[static_cast<std::size_t>(ch)];
          mean_d += dxhat[i];
          mean_dx += dxhat[i] * xhat[o + i];
        }
        mean_d /= static_cast<Real>(gsize);
        mean_dx /= static_cast<Real>(gsize);
        const Real is = inv_std[static_cast<std::size_t>(g)];
        for (std::size_t i = 0; i < gsize; ++i) gx[o + i] += is * (dxhat[i] - mean_d - xhat[o + i] * mean_dx);
      }
    }
    Node* pg = grad_target(self, 1);
    Node* pb = grad_target(self, 2);
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t o = static_cast<std::size_t>(ch) * hw;
      Real sg = 0, sb = 0;
      for (int i = 0; i < hw; ++i) {
        sg += self.grad[o + i] * xhat[o + i];
        sb += self.grad[o + i];
      }
      if (pg) pg->ensure_grad()[static_cast<std::size_t>(ch)] += sg;
      if (pb) pb->ensure_grad()[static_cast<std::size_t>(ch)] += sb;
    }
  });
}

Var pixel_unshuffle(const Var& x, int factor) {
  require_rank("pixel_unshuffle", x, 3);
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (factor <= 0 || h % factor || w % factor)
    throw std::invalid_argument("pixel_unshuffle: " + shape_str(x.shape()) + " not divisible by " + std::to_string(factor));
  const int oh = h / factor, ow = w / factor, oc = c * factor * factor;
  std::vector<std::size_t> idx(x.numel());
  std::size_t n = 0;
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < factor; ++i)
      for (int j = 0; j < factor; ++j)
        for (int y = 0; y < oh; ++y)
          for (int xx = 0; xx < ow; ++xx)
            idx[n++] = (static_cast<std::size_t>(ch) * h + y * factor + i) * w + xx * factor + j;
  return gather(x, {oc, oh, ow}, std::move(idx));
}

Var pixel_shuffle(const Var& x, int factor) {
  require_rank("pixel_shuffle", x, 3);
  const int ic = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (factor <= 0 || ic % (factor * factor)) throw std::invalid_argument("pixel_shuffle: channels not divisible");
  const int c = ic / (factor * factor), oh = h * factor, ow = w * factor;
  std::vector<std::size_t> idx(x.numel());
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        const int i = y % factor, j = xx % factor;
        const std::size_t src =
            (static_cast<std::size_t>((ch * factor + i) * factor + j) * h + y / factor) * w + xx / factor;
        idx[(static_cast<std::size_t>(ch) * oh + y) * ow + xx] = src;
      }
  return gather(x, {c, oh, ow}, std::move(idx));
}

Var upsample_bilinear(const Var& x, int factor) {
  require_rank("upsample_bilinear", x, 3);
  if (factor == 1) return x;
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int oh = h * factor, ow = w * factor;
  auto ay = std::make_shared<AxisInterp>(bilinear_axis(h, factor));
  auto ax = std::make_shared<AxisInterp>(bilinear_axis(w, factor));
  std::vector<Real> out(static_cast<std::size_t>(c) * oh * ow);
  for (int ch = 0; ch < c; ++ch) {
    const Real* src = x.value().data() + static_cast<std::size_t>(ch) * h * w;
    Real* dst = out.data() + static_cast<std::size_t>(ch) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      const int y0 = ay->lo[static_cast<std::size_t>(y)], y1 = ay->hi[static_cast<std::size_t>(y)];
      const Real fy = ay->frac[static_cast<std::size_t>(y)];
      for (int xx = 0; xx < ow; ++xx) {
        const int x0 = ax->lo[static_cast<std::size_t>(xx)], x1 = ax->hi[static_cast<std::size_t>(xx)];
        const Real fx = ax->frac[static_cast<std::size_t>(xx)];
        dst[y * ow + xx] = (1 - fy) * ((1 - fx) * src[y0 * w + x0] + fx * src[y0 * w + x1]) +
                           fy * ((1 - fx) * src[y1 * w + x0] + fx * src[y1 * w + x1]);
      }
    }
  }
  return make_result({c, oh, ow}, std::move(out), {x}, [=](Node& self) {
    Node* p = grad_target(self, 0);
    if (p == nullptr) return;
    auto& gx = p->ensure_grad();
    for (int ch = 0; ch < c; ++ch) {
      Real* dst = gx.data() + static_cast<std::size_t>(ch) * h * w;
      const Real* g = self.grad.data() + static_cast<std::size_t>(ch) * oh * ow;
      for (int y = 0; y < oh; ++y) {
        const int y0 = ay->lo[static_cast<std::size_t>(y)], y1 = ay->hi[static_cast<std::size_t>(y)];
        const Real fy = ay->frac[static_cast<std::size_t>(y)];
        for (int xx = 0; xx < ow; ++xx) {
          const int x0 = ax->lo[static_cast<std::size_t>(xx)], x1 = ax->hi[static_cast<std::size_t>(xx)];
          const Real fx = ax->frac[static_cast<std::size_t>(xx)];
          const Real gv = g[y * ow + xx];
          dst[y0 * w + x0] += gv * (1 - fy) * (1 - fx);
          dst[y0 * w + x1] += gv * (1 - fy) * fx;
          dst[y1 * w + x0] += gv * fy * (1 - fx);
          dst[y1 * w + x1] += gv * fy * fx;
        }
      }
    }
  });
}

std::vector<Real> convex_upsample_weights(std::span<const Real> mask, int h, int w, int factor) {
  const int ff = factor * factor;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  if (mask.size() != static_cast<std::size_t>(9 * ff) * plane)
    throw std::invalid_argument("convex_upsample_weights: mask size mismatch");
  std::vector<Real> out(mask.size());
  for (int s = 0; s < ff; ++s) {
    for (std::size_t px = 0; px < plane; ++px) {
      Real logits[9];
      Real mx = -std::numeric_limits<Real>::infinity();
      for (int k = 0; k < 9; ++k) {
        logits[k] = mask[(static_cast<std::size_t>(k) * ff + s) * plane + px];
        mx = std::max(mx, logits[k]);
      }
      Real total = 0;
      for (int k = 0; k < 9; ++k) total += (logits[k] = std::exp(logits[k] - mx));
      for (int k = 0; k < 9; ++k) out[(static_cast<std::size_t>(k) * ff + s) * plane + px] = logits[k] / total;
    }
  }
  return out;
}

Var convex_upsample(const Var& coarse, const Var& mask, int factor) {
  require_rank("convex_upsample", coarse, 3);
  require_rank("convex_upsample", mask, 3);
  const int d = coarse.dim(0), h = coarse.dim(1), w = coarse.dim(2);
  const int ff = factor * factor;
  if (mask.dim(0) != 9 * ff || mask.dim(1) != h || mask.dim(2) != w)
    shape_error("convex_upsample", coarse.shape(), mask.shape());
  const int oh = h * factor, ow = w * factor;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  auto weights = std::make_shared<std::vector<Real>>(convex_upsample_weights(mask.value(), h, w, factor));

  // Neighbour k = (dy + 1) * 3 + (dx + 1); edge-replicated.
  auto neighbour = [h, w](int i, int j, int k) {
    const int y = std::clamp(i + k / 3 - 1, 0, h - 1);
    const int x = std::clamp(j + k % 3 - 1, 0, w - 1);
    return static_cast<std::size_t>(y) * w + x;
  };

  std::vector<Real> out(static_cast<std::size_t>(d) * oh * ow);
  for (int ch = 0; ch < d; ++ch) {
    const Real* src = coarse.value().data() + static_cast<std::size_t>(ch) * plane;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        for (int a = 0; a < factor; ++a)
          for (int b = 0; b < factor; ++b) {
            const int s = a * factor + b;
            Real acc = 0;
            for (int k = 0; k < 9; ++k)
              acc += (*weights)[(static_cast<std::size_t>(k) * ff + s) * plane + static_cast<std::size_t>(i) * w + j] *
                     src[neighbour(i, j, k)];
            out[(static_cast<std::size_t>(ch) * oh + i * factor + a) * ow + j * factor + b] = acc;
          }
  }
  return make_result({d, oh, ow}, std::move(out), {coarse, mask}, [=](Node& self) {
    Node* pc = grad_target(self, 0);
    Node* pm = grad_target(self, 1);
    const auto& cv = self.parents[0]->value;
    for (int ch = 0; ch < d; ++ch) {
      const Real* src = cv.data() + static_cast<std::size_t>(ch) * plane;
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
          for (int a = 0; a < factor; ++a)
            for (int b = 0; b < factor; ++b) {
              const int s = a * factor + b;
              const std::size_t oidx = (static_cast<std::size_t>(ch) * oh + i * factor + a) * ow + j * factor + b;
              const Real g = self.grad[oidx];
              if (g == 0) continue;
              const Real y = self.value[oidx];
              const std::size_t px = static_cast<std::size_t>(i) * w + j;
              for (int k = 0; k < 9; ++k) {
                const std::size_t widx = (static_cast<std::size_t>(k) * ff + s) * plane + px;
                const Real wk = (*weights)[widx];
                const std::size_t n = neighbour(i, j, k);
                if (pc) pc->ensure_grad()[static_cast<std::size_t>(ch) * plane + n] += g * wk;
                if (pm) pm->ensure_grad()[widx] += g * wk * (src[n] - y);
              }
            }
    }
  });
}

Var custom_scalar(const Var& input, Real value, std::vector<Real> grad_wrt_input) {
  if (grad_wrt_input.size() != input.numel()) throw std::invalid_argument("custom_scalar: gradient size mismatch");
  return make_result({1}, {value}, {input}, [g = std::move(grad_wrt_input)](Node& self) {
    Node* p = grad_target(self, 0);
    if (p == nullptr) return;
    auto& gi = p->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += self.grad[0] * g[i];
  });
}

}  // namespace pcdepth::ag
