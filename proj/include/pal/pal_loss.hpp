#pragma once

#include <span>
#include <vector>

#include "pal/prior.hpp"
#include "pal/tensor.hpp"

namespace pal::loss {

/// Lower bound on the spatial standard deviation used as the z-score divisor.
inline constexpr double kStdFloor = 1e-8;

/// Per-(sample, channel) z-score over the spatial positions of an N x C x H x W
/// map, using the population standard deviation floored at kStdFloor.
Tensor standardize_attr(const Tensor& attribution);

/// -sum_{i,j,c} z(a)_{i,j,c} * prior_{i,j}, averaged over the batch and divided
/// by C. `prior` is N x 1 x H x W (or 1 x 1 x H x W, shared) and is broadcast
/// over channels.
Tensor pal_loss(const Tensor& attribution, const Tensor& prior);
/// Same, from one standardized heatmap per sample.
Tensor pal_loss(const Tensor& attribution, const std::vector<prior::Heatmap>& priors);

struct LossBreakdown {
  double ce = 0.0;
  double pal = 0.0;
  double total = 0.0;
  double lambda = 1.0;
};

/// total = ce + lambda * pal; throws NumericError on non-finite components.
LossBreakdown total_loss(double ce, double pal, double lambda);
/// Differentiable form of the same combination.
Tensor total_loss(const Tensor& ce, const Tensor& pal, double lambda);

/// Pearson correlation of two equally sized maps; 0 when either is constant.
double pearson(std::span<const double> a, std::span<const double> b);

}  // namespace pal::loss
