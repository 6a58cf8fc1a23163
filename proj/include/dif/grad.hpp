#pragma once

// Reverse-mode differentiable arrays of 64-bit floats.
//
// Every op returns a new Tensor whose node remembers its inputs and a local
// adjoint rule. `backward(loss)` walks the graph reachable from a scalar loss
// in reverse topological order and returns the gradient of every leaf that
// requires one. Broadcasting is limited to one leading batch axis: the second
// operand of add/sub/mul may have the first operand's shape with the leading
// axis dropped.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace dif::grad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Adjoint rule of one op: given d(loss)/d(output), accumulate into the
/// gradient buffers of the inputs. An input that does not require a gradient
/// receives an empty span.
using BackwardFn = std::function<void(std::span<const double> out_grad, std::span<const std::span<double>> in_grads)>;

namespace detail {
struct Node;
}

class Tensor;
class Gradients;
Gradients backward(const Tensor& loss);

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor parameter(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(double v);
  static Tensor full(Shape shape, double v);

  /// Creates an op node. If no input requires a gradient the result is a
  /// constant and `backward_fn` is dropped.
  static Tensor from_op(const char* op, Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                        BackwardFn backward_fn);
  /// Same, but the node's values alias `storage` (first numel entries) instead
  /// of owning a fresh buffer. Used by the hypernetwork parameter buffer.
  static Tensor from_op_shared(const char* op, Shape shape, std::shared_ptr<std::vector<double>> storage,
                               std::vector<Tensor> inputs, BackwardFn backward_fn);

  /// Op whose gradient equals its output gradient (same element count as
  /// `input`). Values alias `storage`, or the input's own storage when null;
  /// backward hands the gradient buffer down without copying when it can.
  static Tensor identity_view(const char* op, Shape shape, const Tensor& input,
                              std::shared_ptr<std::vector<double>> storage = nullptr);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  bool requires_grad() const;
  const char* op() const;

  std::span<const double> values() const;
  /// Writable view of a leaf's values (parameters, constants). Throws for op outputs.
  std::span<double> mutable_values();
  double item() const;

  /// Stable identity of the underlying node.
  const void* id() const noexcept { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend class Gradients;
  friend Gradients backward(const Tensor& loss);
};

/// Gradients of the requires_grad leaves reachable from a loss. Owns copies,
/// so later backward passes do not disturb an existing map.
class Gradients {
 public:
  bool contains(const Tensor& leaf) const { return grads_.count(leaf.id()) != 0; }
  std::span<const double> of(const Tensor& leaf) const;
  std::span<double> mutable_of(const Tensor& leaf);
  std::size_t size() const noexcept { return grads_.size(); }

 private:
  std::unordered_map<const void*, std::vector<double>> grads_;
  friend Gradients backward(const Tensor& loss);
};

/// d(loss)/d(leaf) for every requires_grad leaf. `loss` must hold one element.
Gradients backward(const Tensor& loss);

/// When enabled every op result is checked for NaN/inf (default: on in debug builds).
void set_check_finite(bool enabled);
bool check_finite_enabled();

// --- primitives -------------------------------------------------------------

/// [..., n, k] x [k, p] -> [..., n, p]; or batched [B, n, k] x [B, k, p] -> [B, n, p].
Tensor matmul(const Tensor& a, const Tensor& b);
/// a x b^T over the last two axes: [B, n, k] x [B, p, k] -> [B, n, p] (also 2-D).
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Reduces the last axis: [..., n] -> [...].
Tensor sum_last(const Tensor& a);
/// Mean over one axis, which is removed from the shape.
Tensor mean_axis(const Tensor& a, std::size_t axis);
/// Population variance of all entries.
Tensor variance(const Tensor& a);

Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);
/// Mean negative log-likelihood of integer labels under softmax(logits), [N, C] logits.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);
/// Normalizes the last axis to zero mean / unit variance, then scale * x + shift.
Tensor layer_norm(const Tensor& x, const Tensor& scale, const Tensor& shift, double eps = 1e-5);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
/// Swaps the last two axes.
Tensor transpose(const Tensor& a);
Tensor permute(const Tensor& a, std::span<const std::size_t> perm);
Tensor reshape(const Tensor& a, Shape shape);
/// Same values, cut from the graph.
Tensor detach(const Tensor& a);

/// x W + b over the last axis of x; W is [in, out], b is [out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Fraction of rows whose argmax equals the label.
double accuracy(const Tensor& logits, std::span<const int> labels);

// --- gradient verification --------------------------------------------------

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  bool passed = false;
};

/// Compares backward() against central differences of `f` for every
/// coordinate of every leaf. The relative error uses the denominator
/// max(|analytic|, |numeric|, floor).
GradCheckReport grad_check(const std::function<Tensor()>& f, std::span<Tensor> leaves, double h, double tol,
                           double floor = 1e-6);

}  // namespace dif::grad
