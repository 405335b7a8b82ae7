#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "vst/tensor.hpp"

// Differentiable free functions over vst::Tensor. Every op records a backward
// rule when any input requires grad.
namespace vst {

// Elementwise. `b` must have the same shape as `a` or a suffix of it, in which
// case it is repeated over the leading axes of `a`.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }

/// Batched matrix product over the last two axes; leading batch axes broadcast
/// numpy-style (missing or size-1 axes repeat).
Tensor matmul(const Tensor& a, const Tensor& b);

/// x[..., k] @ w[k, n] (+ bias[n]).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

Tensor softmax(const Tensor& x, std::ptrdiff_t axis = -1);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// x * Phi(x) with the exact Gaussian CDF.
Tensor gelu(const Tensor& x);

/// Mean over the rows of softmax cross-entropy. logits: [batch, classes].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean over one axis; the axis is removed from the result.
Tensor mean_axis(const Tensor& x, std::ptrdiff_t axis);

// Layout. None of these alias storage.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, std::span<const std::size_t> axes);
Tensor permute(const Tensor& x, std::initializer_list<std::size_t> axes);
Tensor transpose_last(const Tensor& x);
/// Half-open range [begin, end) along one axis.
Tensor slice(const Tensor& x, std::ptrdiff_t axis, std::size_t begin, std::size_t end);
/// Toroidal roll: out[i] = x[(i - shift) mod n] on each axis.
Tensor roll(const Tensor& x, std::span<const std::ptrdiff_t> shifts);

/// out.flat[i] = x.flat[index[i]], or 0 where index[i] < 0.
Tensor gather(const Tensor& x, Shape out_shape, std::vector<std::int64_t> index);

/// Row-major strides for a shape.
std::vector<std::size_t> strides_of(const Shape& shape);

}  // namespace vst
