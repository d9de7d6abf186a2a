#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gctaf/rng.hpp"

namespace gctaf {

using Shape = std::vector<size_t>;

size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl;
}

// Dense row-major tensor of 64-bit floats participating in a reverse-mode
// differentiation graph. A Tensor is a cheap handle; the payload is shared.
// Once created its values are immutable for readers: forward ops return new
// tensors, and a computation graph plus its backward pass stay confined to
// one logical thread. mutable_data() exists only so the optimizer can update
// leaf parameters in place between steps.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_data(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);
  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  size_t size() const;
  size_t rank() const;

  // Scalar extraction; contract error unless size() == 1.
  double value() const;

  std::span<const double> data() const;
  double* mutable_data();  // leaf tensors only

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value = true);  // leaf tensors only
  bool is_leaf() const;

  // Gradient accumulator. Empty span until a backward pass has reached this
  // leaf; repeated backward calls accumulate until zero_grad().
  std::span<const double> grad() const;
  void zero_grad();

  // Reverse-mode sweep from a scalar loss. Every reachable leaf with
  // requires_grad receives d(loss)/d(leaf) added into its grad buffer.
  void backward() const;

  // Same values, detached from the graph (a fresh leaf, requires_grad off).
  Tensor detach() const;

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend detail::TensorImpl& detail_impl(const Tensor& t);
  friend std::shared_ptr<detail::TensorImpl> detail_share(const Tensor& t);
  friend Tensor detail_wrap(std::shared_ptr<detail::TensorImpl> impl);
};

// Elementwise ops broadcast right-aligned: extents must match or be 1 on
// either side (missing leading extents count as 1).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// Batched matrix product [.., m, k] x [.., k, n] -> [.., m, n]; leading batch
// extents broadcast (equal or 1).
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& x);
Tensor softmax(const Tensor& x, size_t axis);
Tensor log_softmax(const Tensor& x, size_t axis);

// Normalizes over the last axis, then applies the affine map gamma * xhat + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// matmul(x, w) + b; pass an undefined Tensor to skip the bias.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Inverted-scaling dropout: training mode keeps each element with probability
// 1-p and scales by 1/(1-p); eval mode returns x unchanged (same handle).
Tensor dropout(const Tensor& x, double p, bool training, Rng& rng);

Tensor sum(const Tensor& x, size_t axis);
Tensor mean(const Tensor& x, size_t axis);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

Tensor concat(std::span<const Tensor> parts, size_t axis);
Tensor slice(const Tensor& x, size_t axis, size_t start, size_t end);
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x, size_t axis0, size_t axis1);
Tensor expand(const Tensor& x, Shape shape);  // broadcast extents of size 1

// Opt-in fail-fast check: when enabled, every op output is scanned and a
// non-finite value raises NumericError naming the op.
void set_nan_guard(bool enabled);
bool nan_guard_enabled();

}  // namespace gctaf
