#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "pal/tensor.hpp"

/// Differentiable operations. Each op records a node when grad mode is on and
/// at least one input is tracked. Every backward rule is itself expressed with
/// ops from this header, so gradients can be differentiated again.
namespace pal::ops {

enum class BinaryKind { add, sub, mul, div };

/// Trailing-dimension broadcasting; throws ShapeError if incompatible.
Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor elementwise(BinaryKind kind, const Tensor& a, const Tensor& b);
Tensor elementwise(BinaryKind kind, const Tensor& a, double b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);
Tensor neg(const Tensor& a);

Tensor relu(const Tensor& x);
/// |x| with derivative sign(x), taken as 0 at x == 0.
Tensor abs(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
/// max(x, floor); gradient passes only where x > floor.
Tensor clamp_min(const Tensor& x, double floor);

Tensor reshape(const Tensor& x, Shape shape);
Tensor broadcast_to(const Tensor& x, const Shape& shape);
/// Sums broadcast dimensions of x away until it has `shape` (adjoint of broadcast_to).
Tensor sum_to(const Tensor& x, const Shape& shape);
Tensor sum(const Tensor& x, const std::vector<std::size_t>& axes, bool keepdim = false);
Tensor mean(const Tensor& x, const std::vector<std::size_t>& axes, bool keepdim = false);
/// Sum of every element, shape {}.
Tensor sum(const Tensor& x);

Tensor transpose(const Tensor& x);  // 2-D only
Tensor matmul(const Tensor& a, const Tensor& b);

using Indices = std::shared_ptr<const std::vector<std::size_t>>;

/// out[i] = x[index[i]].
Tensor gather(const Tensor& x, Indices index, Shape out_shape);
/// out = zeros(shape); out[index[i]] += g[i]. Adjoint of gather.
Tensor scatter_add(const Tensor& g, Indices index, Shape shape);
/// Contiguous range [start, start + length) along one axis.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

/// Max pooling over NCHW planes; the backward pass routes to the argmax.
Tensor maxpool2d(const Tensor& x, std::size_t kernel, std::size_t stride);

/// Cross-correlation of NCHW input with OIkk weights; `bias` may be undefined.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);
/// Gradient of conv2d w.r.t. its input, as a bilinear op of (grad_out, weight).
Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& weight, std::size_t height,
                         std::size_t width, std::size_t stride, std::size_t padding);
/// Gradient of conv2d w.r.t. its weight, as a bilinear op of (input, grad_out).
Tensor conv2d_weight_grad(const Tensor& input, const Tensor& grad_out, std::size_t kernel,
                          std::size_t stride, std::size_t padding);

}  // namespace pal::ops

namespace pal {

inline Tensor operator+(const Tensor& a, const Tensor& b) { return ops::add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return ops::sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return ops::mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return ops::div(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return ops::mul(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return ops::mul(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return ops::add(a, s); }
inline Tensor operator-(const Tensor& a) { return ops::neg(a); }

}  // namespace pal
