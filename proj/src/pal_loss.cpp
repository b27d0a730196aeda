#include "pal/pal_loss.hpp"

#include <cmath>

#include "pal/error.hpp"
#include "pal/ops.hpp"

namespace pal::loss {

Tensor standardize_attr(const Tensor& a) {
  if (a.rank() != 4) throw ShapeError("standardize_attr expects N x C x H x W");
  const Tensor centered = ops::sub(a, ops::mean(a, {2, 3}, true));
  const Tensor var = ops::mean(ops::mul(centered, centered), {2, 3}, true);
  const Tensor sd = ops::sqrt(ops::clamp_min(var, kStdFloor * kStdFloor));
  return ops::div(centered, sd);
}

Tensor pal_loss(const Tensor& a, const Tensor& prior) {
  if (a.rank() != 4 || prior.rank() != 4 || prior.dim(1) != 1)
    throw ShapeError("pal_loss expects N x C x H x W attributions and N x 1 x H x W priors");
  if (prior.dim(2) != a.dim(2) || prior.dim(3) != a.dim(3))
    throw ShapeError("pal_loss: resolution mismatch, attribution " + to_string(a.shape()) + " vs prior " +
                     to_string(prior.shape()));
  if (prior.dim(0) != a.dim(0) && prior.dim(0) != 1)
    throw ShapeError("pal_loss: prior batch does not match attribution batch");
  const double scale = -1.0 / static_cast<double>(a.dim(0) * a.dim(1));
  return ops::mul(ops::sum(ops::mul(standardize_attr(a), prior)), scale);
}

Tensor pal_loss(const Tensor& a, const std::vector<prior::Heatmap>& priors) {
  for (const prior::Heatmap& p : priors)
    if (!p.standardized) throw NumericError("pal_loss: prior map is not standardized");
  return pal_loss(a, prior::stack(priors));
}

LossBreakdown total_loss(double ce, double pal, double lambda) {
  if (!std::isfinite(ce) || !std::isfinite(pal) || !std::isfinite(lambda))
    throw NumericError("non-finite loss component (ce=" + std::to_string(ce) + ", pal=" + std::to_string(pal) + ")");
  return {ce, pal, ce + lambda * pal, lambda};
}

Tensor total_loss(const Tensor& ce, const Tensor& pal, double lambda) {
  return ops::add(ce, ops::mul(pal, lambda));
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("pearson: size mismatch");
  const auto n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace pal::loss
