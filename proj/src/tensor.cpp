#include "mapnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace mapnet {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  autograd::BackwardFn backward;
};

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<detail::Node> make_node(Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor: " + std::to_string(values.size()) + " values do not fill shape " +
                         shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  return node;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& x, std::size_t rank) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(x.shape()));
  }
}

// out[i] = in[index[i]]; every structural rearrangement goes through here.
Tensor gather(const Tensor& x, Shape shape, std::vector<std::size_t> index) {
  auto src = x.data();
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = src[index[i]];
  return autograd::record(std::move(shape), std::move(out), {x},
                          [x, index = std::move(index)](std::span<const double> g) {
                            auto& gx = autograd::input_grad(x);
                            for (std::size_t i = 0; i < index.size(); ++i) gx[index[i]] += g[i];
                          });
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = fwd(xs[i]);
  std::vector<double> saved = out;
  return autograd::record(x.shape(), std::move(out), {x},
                          [x, saved = std::move(saved), deriv](std::span<const double> g) {
                            auto& gx = autograd::input_grad(x);
                            auto xv = x.data();
                            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i], saved[i]);
                          });
}

// Half-open output index range [lo, hi) for which o*stride + offset lands in [0, extent).
std::pair<std::ptrdiff_t, std::ptrdiff_t> valid_range(std::ptrdiff_t out_extent, std::ptrdiff_t stride,
                                                      std::ptrdiff_t offset, std::ptrdiff_t extent) {
  std::ptrdiff_t lo = 0;
  if (offset < 0) lo = (-offset + stride - 1) / stride;
  std::ptrdiff_t hi = 0;
  if (extent - 1 - offset >= 0) hi = (extent - 1 - offset) / stride + 1;
  hi = std::min(hi, out_extent);
  return {lo, std::max(lo, hi)};
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) { return full(shape, 0.0, requires_grad); }

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return from(shape, std::vector<double>(shape_numel(shape), value), requires_grad);
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values, bool requires_grad) {
  auto node = make_node(shape, std::move(values));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("tensor: use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("tensor: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  if (!node_) throw ContractError("tensor: use of undefined tensor");
  return node_->values;
}

std::vector<double> Tensor::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("tensor: item() on non-scalar " + shape_str(shape()));
  return node_->values[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return !node_ || node_->leaf; }

std::vector<double> Tensor::grad() const {
  if (!node_) return {};
  if (node_->grad.empty()) return std::vector<double>(node_->values.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() const {
  if (node_) node_->grad.clear();
}

void Tensor::backward() const {
  if (numel() != 1) {
    throw ContractError("backward: root must be a scalar, got shape " + shape_str(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order with each node exactly once.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> todo{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!todo.empty()) {
    auto& [node, next] = todo.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) todo.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      todo.pop_back();
    }
  }

  for (auto* n : order) {
    if (!n->leaf) n->grad.assign(n->values.size(), 0.0);
  }
  auto& root_grad = node_->grad;
  if (root_grad.empty()) root_grad.assign(1, 0.0);
  root_grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward) n->backward(n->grad);
  }
}

Tensor Tensor::detach() const { return from(shape(), to_vector(), false); }

Tensor Tensor::leaf(bool requires_grad) const { return from(shape(), to_vector(), requires_grad); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

namespace autograd {

Tensor record(Shape shape, std::vector<double> values, std::vector<Tensor> inputs, BackwardFn backward) {
  auto node = make_node(std::move(shape), std::move(values));
  node->leaf = false;
  if (!g_grad_enabled) return Tensor(std::move(node));
  for (const auto& in : inputs) {
    if (wants_grad(in)) node->parents.push_back(in.node());
  }
  if (!node->parents.empty()) {
    node->requires_grad = true;
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

bool wants_grad(const Tensor& t) { return t.defined() && t.node()->requires_grad; }

std::vector<double>& input_grad(const Tensor& t) {
  auto& g = t.node()->grad;
  if (g.empty()) g.assign(t.node()->values.size(), 0.0);
  return g;
}

}  // namespace autograd

using autograd::input_grad;
using autograd::record;
using autograd::wants_grad;

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  auto av = a.data(), bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return record(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
    for (const auto* t : {&a, &b}) {
      if (!wants_grad(*t)) continue;
      auto& gt = input_grad(*t);
      for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  auto av = a.data(), bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return record(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
    if (wants_grad(a)) {
      auto& ga = input_grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (wants_grad(b)) {
      auto& gb = input_grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  auto av = a.data(), bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return record(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
    auto av = a.data(), bv = b.data();
    if (wants_grad(a)) {
      auto& ga = input_grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (wants_grad(b)) {
      auto& gb = input_grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& s, const Tensor& x) {
  if (s.numel() != 1) throw DimensionError("mul_scalar: scalar operand has shape " + shape_str(s.shape()));
  const double sv = s.item();
  auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sv * xv[i];
  return record(x.shape(), std::move(out), {s, x}, [s, x](std::span<const double> g) {
    auto xv = x.data();
    if (wants_grad(s)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
      input_grad(s)[0] += acc;
    }
    if (wants_grad(x)) {
      const double sv = s.item();
      auto& gx = input_grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * sv;
    }
  });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(x, [slope](double v) { return v >= 0 ? v : slope * v; },
               [slope](double v, double) { return v >= 0 ? 1.0 : slope; });
}

Tensor relu(const Tensor& x) { return leaky_relu(x, 0.0); }

Tensor abs(const Tensor& x) { return add(relu(x), relu(scale(x, -1.0))); }

// Two-sided gate; passes gradient on the closed interval [lo, hi].
Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
               [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  auto xv = x.data();
  double acc = 0.0;
  for (double v : xv) acc += v;
  return record({}, {acc}, {x}, [x](std::span<const double> g) {
    auto& gx = input_grad(x);
    for (auto& v : gx) v += g[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_axis(const Tensor& x, std::size_t axis) {
  const auto& s = x.shape();
  if (axis >= s.size()) throw DimensionError("sum_axis: axis out of range for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) out_shape.push_back(s[i]);
  }
  auto xv = x.data();
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xv[(o * n + k) * inner + i];
  return record(std::move(out_shape), std::move(out), {x}, [x, outer, inner, n](std::span<const double> g) {
    auto& gx = input_grad(x);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < inner; ++i) gx[(o * n + k) * inner + i] += g[o * inner + i];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

namespace {

// c[M,N] += a[M,K] * b[K,N]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[M,K] += g[M,N] * b[K,N]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double acc = 0.0;
      const double* grow = g + i * n;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      c[i * k + p] += acc;
    }
  }
}

// c[K,N] += a[M,K]^T * g[M,N]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return record({m, n}, std::move(out), {a, b}, [a, b, m, k, n](std::span<const double> g) {
    if (wants_grad(a)) gemm_nt(g.data(), b.data().data(), input_grad(a).data(), m, k, n);
    if (wants_grad(b)) gemm_tn(a.data().data(), g.data(), input_grad(b).data(), m, k, n);
  });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<double> out(bs * m * n, 0.0);
  for (std::size_t i = 0; i < bs; ++i) {
    gemm_nn(a.data().data() + i * m * k, b.data().data() + i * k * n, out.data() + i * m * n, m, k, n);
  }
  return record({bs, m, n}, std::move(out), {a, b}, [a, b, bs, m, k, n](std::span<const double> g) {
    for (std::size_t i = 0; i < bs; ++i) {
      if (wants_grad(a))
        gemm_nt(g.data() + i * m * n, b.data().data() + i * k * n, input_grad(a).data() + i * m * k, m, k, n);
      if (wants_grad(b))
        gemm_tn(a.data().data() + i * m * k, g.data() + i * m * n, input_grad(b).data() + i * k * n, m, k, n);
    }
  });
}

Tensor transpose(const Tensor& x) {
  require_rank("transpose", x, 2);
  return permute(x, {1, 0});
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto& s = x.shape();
  if (axis >= s.size()) throw DimensionError("softmax: axis out of range for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      double mx = xv[base];
      for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, xv[base + k * inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double e = std::exp(xv[base + k * inner] - mx);
        out[base + k * inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= total;
    }
  }
  std::vector<double> y = out;
  return record(s, std::move(out), {x}, [x, y = std::move(y), outer, inner, n](std::span<const double> g) {
    auto& gx = input_grad(x);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * n * inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < n; ++k) dot += g[base + k * inner] * y[base + k * inner];
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t idx = base + k * inner;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Structure

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  return record(shape, x.to_vector(), {x}, [x](std::span<const double> g) {
    auto& gx = input_grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const auto& s = x.shape();
  if (axes.size() != s.size()) throw DimensionError("permute: axis list does not match " + shape_str(s));
  std::vector<bool> used(s.size(), false);
  for (auto a : axes) {
    if (a >= s.size() || used[a]) throw DimensionError("permute: invalid axis list for " + shape_str(s));
    used[a] = true;
  }
  const std::size_t rank = s.size();
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * s[i];
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = s[axes[i]];
  const std::size_t total = x.numel();
  std::vector<std::size_t> index(total);
  std::vector<std::size_t> counter(rank, 0);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < rank; ++i) src += counter[i] * in_stride[axes[i]];
    index[flat] = src;
    for (std::size_t i = rank; i-- > 0;) {
      if (++counter[i] < out_shape[i]) break;
      counter[i] = 0;
    }
  }
  return gather(x, std::move(out_shape), std::move(index));
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw DimensionError("concat: axis out of range for " + shape_str(s0));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  std::size_t total_axis = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == s0[i];
    if (!ok) throw DimensionError("concat: shape " + shape_str(s) + " incompatible with " + shape_str(s0));
    total_axis += s[axis];
  }
  Shape out_shape = s0;
  out_shape[axis] = total_axis;
  std::vector<double> out(outer * total_axis * inner);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t n = p.dim(axis);
    auto pv = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * n * inner), n * inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * total_axis + offset) * inner));
    }
    offset += n;
  }
  return record(std::move(out_shape), std::move(out), parts,
                [parts, offsets, outer, inner, total_axis, axis](std::span<const double> g) {
                  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
                    if (!wants_grad(parts[pi])) continue;
                    auto& gp = input_grad(parts[pi]);
                    const std::size_t n = parts[pi].dim(axis);
                    for (std::size_t o = 0; o < outer; ++o)
                      for (std::size_t j = 0; j < n * inner; ++j)
                        gp[o * n * inner + j] += g[(o * total_axis + offsets[pi]) * inner + j];
                  }
                });
}

Tensor stack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("stack: no inputs");
  std::vector<Tensor> expanded;
  expanded.reserve(parts.size());
  for (const auto& p : parts) {
    if (p.shape() != parts[0].shape()) {
      throw DimensionError("stack: shape " + shape_str(p.shape()) + " differs from " + shape_str(parts[0].shape()));
    }
    Shape s = p.shape();
    s.insert(s.begin(), 1);
    expanded.push_back(reshape(p, s));
  }
  return concat(expanded, 0);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto& s = x.shape();
  if (axis >= s.size() || begin > end || end > s[axis]) {
    throw DimensionError("slice: [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " +
                         std::to_string(axis) + " invalid for " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis], len = end - begin;
  Shape out_shape = s;
  out_shape[axis] = len;
  std::vector<std::size_t> index;
  index.reserve(outer * len * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = begin; k < end; ++k)
      for (std::size_t i = 0; i < inner; ++i) index.push_back((o * n + k) * inner + i);
  return gather(x, std::move(out_shape), std::move(index));
}

// ---------------------------------------------------------------------------
// Images

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank("conv2d input", x, 3);
  require_rank("conv2d weight", weight, 4);
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  const std::size_t ci = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t co = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != ci) {
    throw DimensionError("conv2d: weight " + shape_str(weight.shape()) + " expects " +
                         std::to_string(weight.dim(1)) + " input channels, input is " + shape_str(x.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{co}) {
    throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(co) +
                         " output channels");
  }
  if (h + 2 * padding < kh || w + 2 * padding < kw) {
    throw DimensionError("conv2d: kernel " + shape_str(weight.shape()) + " larger than padded input " +
                         shape_str(x.shape()) + " with padding " + std::to_string(padding));
  }
  const std::size_t ho = (h + 2 * padding - kh) / stride + 1;
  const std::size_t wo = (w + 2 * padding - kw) / stride + 1;
  const auto S = static_cast<std::ptrdiff_t>(stride);
  const auto P = static_cast<std::ptrdiff_t>(padding);

  auto xv = x.data(), wv = weight.data();
  std::vector<double> out(co * ho * wo, 0.0);
  for (std::size_t o = 0; o < co; ++o) {
    double* op = out.data() + o * ho * wo;
    if (bias.defined()) std::fill_n(op, ho * wo, bias.data()[o]);
    for (std::size_t c = 0; c < ci; ++c) {
      const double* xp = xv.data() + c * h * w;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        auto [y0, y1] = valid_range(static_cast<std::ptrdiff_t>(ho), S, static_cast<std::ptrdiff_t>(ky) - P,
                                    static_cast<std::ptrdiff_t>(h));
        for (std::size_t kx = 0; kx < kw; ++kx) {
          auto [x0, x1] = valid_range(static_cast<std::ptrdiff_t>(wo), S, static_cast<std::ptrdiff_t>(kx) - P,
                                      static_cast<std::ptrdiff_t>(w));
          const double wt = wv[((o * ci + c) * kh + ky) * kw + kx];
          for (auto oy = y0; oy < y1; ++oy) {
            const double* xrow = xp + (oy * S + static_cast<std::ptrdiff_t>(ky) - P) * static_cast<std::ptrdiff_t>(w);
            double* orow = op + oy * static_cast<std::ptrdiff_t>(wo);
            for (auto ox = x0; ox < x1; ++ox) orow[ox] += wt * xrow[ox * S + static_cast<std::ptrdiff_t>(kx) - P];
          }
        }
      }
    }
  }

  return record({co, ho, wo}, std::move(out), {x, weight, bias},
                [=](std::span<const double> g) {
                  auto xv = x.data(), wv = weight.data();
                  const bool gx_on = wants_grad(x), gw_on = wants_grad(weight);
                  double* gx = gx_on ? input_grad(x).data() : nullptr;
                  double* gw = gw_on ? input_grad(weight).data() : nullptr;
                  if (bias.defined() && wants_grad(bias)) {
                    auto& gb = input_grad(bias);
                    for (std::size_t o = 0; o < co; ++o) {
                      double acc = 0.0;
                      for (std::size_t i = 0; i < ho * wo; ++i) acc += g[o * ho * wo + i];
                      gb[o] += acc;
                    }
                  }
                  for (std::size_t o = 0; o < co; ++o) {
                    const double* gp = g.data() + o * ho * wo;
                    for (std::size_t c = 0; c < ci; ++c) {
                      for (std::size_t ky = 0; ky < kh; ++ky) {
                        auto [y0, y1] = valid_range(static_cast<std::ptrdiff_t>(ho), S,
                                                    static_cast<std::ptrdiff_t>(ky) - P, static_cast<std::ptrdiff_t>(h));
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                          auto [x0, x1] = valid_range(static_cast<std::ptrdiff_t>(wo), S,
                                                      static_cast<std::ptrdiff_t>(kx) - P,
                                                      static_cast<std::ptrdiff_t>(w));
                          const std::size_t widx = ((o * ci + c) * kh + ky) * kw + kx;
                          const double wt = wv[widx];
                          double wacc = 0.0;
                          for (auto oy = y0; oy < y1; ++oy) {
                            const std::ptrdiff_t row =
                                static_cast<std::ptrdiff_t>(c * h * w) +
                                (oy * S + static_cast<std::ptrdiff_t>(ky) - P) * static_cast<std::ptrdiff_t>(w);
                            const double* grow = gp + oy * static_cast<std::ptrdiff_t>(wo);
                            for (auto ox = x0; ox < x1; ++ox) {
                              const std::ptrdiff_t xi = row + ox * S + static_cast<std::ptrdiff_t>(kx) - P;
                              if (gx) gx[xi] += wt * grow[ox];
                              wacc += grow[ox] * xv[static_cast<std::size_t>(xi)];
                            }
                          }
                          if (gw) gw[widx] += wacc;
                        }
                      }
                    }
                  }
                });
}

Tensor pixel_shuffle(const Tensor& x, std::size_t factor) {
  require_rank("pixel_shuffle", x, 3);
  const std::size_t u = factor, cu = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (u == 0 || cu % (u * u) != 0) {
    throw DimensionError("pixel_shuffle: " + std::to_string(cu) + " channels not divisible by factor^2 = " +
                         std::to_string(u * u));
  }
  const std::size_t c = cu / (u * u);
  std::vector<std::size_t> index(cu * h * w);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t oy = 0; oy < h * u; ++oy)
      for (std::size_t ox = 0; ox < w * u; ++ox) {
        const std::size_t src_c = ch * u * u + (oy % u) * u + (ox % u);
        index[(ch * h * u + oy) * w * u + ox] = (src_c * h + oy / u) * w + ox / u;
      }
  return gather(x, {c, h * u, w * u}, std::move(index));
}

Tensor pixel_unshuffle(const Tensor& x, std::size_t factor) {
  require_rank("pixel_unshuffle", x, 3);
  const std::size_t u = factor, c = x.dim(0), hu = x.dim(1), wu = x.dim(2);
  if (u == 0 || hu % u != 0 || wu % u != 0) {
    throw DimensionError("pixel_unshuffle: spatial extents of " + shape_str(x.shape()) +
                         " not divisible by factor " + std::to_string(u));
  }
  const std::size_t h = hu / u, w = wu / u;
  std::vector<std::size_t> index(c * hu * wu);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t oy = 0; oy < hu; ++oy)
      for (std::size_t ox = 0; ox < wu; ++ox) {
        const std::size_t dst_c = ch * u * u + (oy % u) * u + (ox % u);
        index[(dst_c * h + oy / u) * w + ox / u] = (ch * hu + oy) * wu + ox;
      }
  return gather(x, {c * u * u, h, w}, std::move(index));
}

Tensor avg_pool2(const Tensor& x) {
  require_rank("avg_pool2", x, 3);
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % 2 != 0 || w % 2 != 0) throw DimensionError("avg_pool2: odd spatial extent in " + shape_str(x.shape()));
  const std::size_t ho = h / 2, wo = w / 2;
  auto xv = x.data();
  std::vector<double> out(c * ho * wo);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t xx = 0; xx < wo; ++xx) {
        const std::size_t b = (ch * h + 2 * y) * w + 2 * xx;
        out[(ch * ho + y) * wo + xx] = 0.25 * (xv[b] + xv[b + 1] + xv[b + w] + xv[b + w + 1]);
      }
  return record({c, ho, wo}, std::move(out), {x}, [x, c, h, w, ho, wo](std::span<const double> g) {
    auto& gx = input_grad(x);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t xx = 0; xx < wo; ++xx) {
          const double v = 0.25 * g[(ch * ho + y) * wo + xx];
          const std::size_t b = (ch * h + 2 * y) * w + 2 * xx;
          gx[b] += v;
          gx[b + 1] += v;
          gx[b + w] += v;
          gx[b + w + 1] += v;
        }
  });
}

namespace {

struct Tap {
  std::size_t i0, i1;
  double f;
};

std::vector<Tap> corner_aligned_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  for (std::size_t o = 0; o < out; ++o) {
    if (in == 1 || out == 1) {
      taps[o] = {0, 0, 0.0};
      continue;
    }
    const double src = static_cast<double>(o) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
    auto i0 = std::min(static_cast<std::size_t>(std::floor(src)), in - 2);
    taps[o] = {i0, i0 + 1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  require_rank("resize_bilinear", x, 3);
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto ty = corner_aligned_taps(h, out_h);
  auto tx = corner_aligned_taps(w, out_w);
  auto xv = x.data();
  std::vector<double> out(c * out_h * out_w);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t xx = 0; xx < out_w; ++xx) {
        const double* p = xv.data() + ch * h * w;
        const auto& a = ty[y];
        const auto& b = tx[xx];
        const double top = (1 - b.f) * p[a.i0 * w + b.i0] + b.f * p[a.i0 * w + b.i1];
        const double bot = (1 - b.f) * p[a.i1 * w + b.i0] + b.f * p[a.i1 * w + b.i1];
        out[(ch * out_h + y) * out_w + xx] = (1 - a.f) * top + a.f * bot;
      }
  return record({c, out_h, out_w}, std::move(out), {x},
                [x, ty = std::move(ty), tx = std::move(tx), c, h, w, out_h, out_w](std::span<const double> g) {
                  auto& gx = input_grad(x);
                  for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t y = 0; y < out_h; ++y)
                      for (std::size_t xx = 0; xx < out_w; ++xx) {
                        const double v = g[(ch * out_h + y) * out_w + xx];
                        const auto& a = ty[y];
                        const auto& b = tx[xx];
                        double* p = gx.data() + ch * h * w;
                        p[a.i0 * w + b.i0] += v * (1 - a.f) * (1 - b.f);
                        p[a.i0 * w + b.i1] += v * (1 - a.f) * b.f;
                        p[a.i1 * w + b.i0] += v * a.f * (1 - b.f);
                        p[a.i1 * w + b.i1] += v * a.f * b.f;
                      }
                });
}

Tensor chw_to_tokens(const Tensor& x) {
  require_rank("chw_to_tokens", x, 3);
  return transpose(reshape(x, {x.dim(0), x.dim(1) * x.dim(2)}));
}

Tensor tokens_to_chw(const Tensor& x, std::size_t height, std::size_t width) {
  require_rank("tokens_to_chw", x, 2);
  if (x.dim(0) != height * width) {
    throw DimensionError("tokens_to_chw: " + shape_str(x.shape()) + " does not hold " + std::to_string(height) +
                         "x" + std::to_string(width) + " tokens");
  }
  return reshape(transpose(x), {x.dim(1), height, width});
}

}  // namespace mapnet
