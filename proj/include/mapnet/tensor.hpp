#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mapnet {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised when operand extents are incompatible. The message names the shapes involved.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a caller violates an operation's documented precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace detail {
struct Node;
}

/// Dense row-major double tensor with reverse-mode differentiation.
///
/// A Tensor is a cheap handle onto an immutable node. Operations on tensors that
/// require gradients record a backward closure; `backward()` on a scalar result
/// walks the recorded graph once in reverse topological order and accumulates
/// gradients into every reachable leaf that requires them.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::vector<double> to_vector() const;
  double item() const;
  double operator[](std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  bool is_leaf() const;

  /// Gradient accumulated by the last backward passes. All zeros when nothing was accumulated.
  std::vector<double> grad() const;
  void zero_grad() const;

  /// Runs reverse-mode differentiation from this scalar.
  void backward() const;

  /// Same values, no graph history, no gradient requirement.
  Tensor detach() const;

  /// Copy of this tensor as a fresh leaf.
  Tensor leaf(bool requires_grad) const;

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

namespace autograd {

/// Backward closure. Receives the gradient of the op's output and must accumulate into
/// its inputs through `input_grad`.
using BackwardFn = std::function<void(std::span<const double> grad_out)>;

/// Records a custom differentiable op. `inputs` are the tensors the closure reads
/// gradients into; when none of them requires gradients (or recording is off) the
/// result is a plain constant.
Tensor record(Shape shape, std::vector<double> values, std::vector<Tensor> inputs, BackwardFn backward);

/// True when `t` participates in the current graph and should receive gradient.
bool wants_grad(const Tensor& t);

/// Mutable gradient buffer of `t`, allocated on first use. Only valid inside a backward closure.
std::vector<double>& input_grad(const Tensor& t);

}  // namespace autograd

// Elementwise
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
/// Scalar-with-tensor product; `s` must hold exactly one element.
Tensor mul_scalar(const Tensor& s, const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// max(x, 0) + slope * min(x, 0). Derivative at 0 is taken from the right.
Tensor leaky_relu(const Tensor& x, double slope);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// Composites of the elementwise set
Tensor relu(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);

// Reductions
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, std::size_t axis);

// Linear algebra
Tensor matmul(const Tensor& a, const Tensor& b);
/// Batched product: [B,M,K] x [B,K,N] -> [B,M,N].
Tensor bmm(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor softmax(const Tensor& x, std::size_t axis);

// Structure
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor stack(const std::vector<Tensor>& parts);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);

// Images, all [C,H,W]
/// Cross-correlation with zero padding. `weight` is [Co,Ci,k,k]; `bias` is [Co] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);
Tensor pixel_shuffle(const Tensor& x, std::size_t factor);
Tensor pixel_unshuffle(const Tensor& x, std::size_t factor);
Tensor avg_pool2(const Tensor& x);
/// Bilinear resize with corner-aligned sampling.
Tensor resize_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w);

/// [C,H,W] <-> [H*W,C]
Tensor chw_to_tokens(const Tensor& x);
Tensor tokens_to_chw(const Tensor& x, std::size_t height, std::size_t width);

}  // namespace mapnet
