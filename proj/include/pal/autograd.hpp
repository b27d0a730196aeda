#pragma once

#include <functional>
#include <span>
#include <vector>

#include "pal/tensor.hpp"

namespace pal {

/// Reverse-mode gradients of a single-element tracked `output` w.r.t. each
/// tensor in `wrt`. With `create_graph` the backward computation is recorded on
/// the same tape and the returned gradients are tracked, so they can enter a
/// further loss and be differentiated again. Otherwise they are plain values.
/// A wrt tensor that does not influence the output receives zeros.
std::vector<Tensor> backward(const Tensor& output, std::span<const Tensor> wrt,
                             bool create_graph = false);

inline Tensor backward(const Tensor& output, const Tensor& wrt, bool create_graph = false) {
  return backward(output, std::span<const Tensor>(&wrt, 1), create_graph).front();
}

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) per coordinate.
Tensor finite_diff(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps);

}  // namespace pal
