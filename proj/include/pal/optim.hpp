#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "pal/model.hpp"

namespace pal::nn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::uint64_t step = 0;
  std::map<std::string, Buffer> first_moment;
  std::map<std::string, Buffer> second_moment;
};

/// One bias-corrected Adam update. Every parameter needs a gradient of the same
/// shape; non-finite gradients abort the step before anything is modified.
void adam_step(Parameters& params, const std::map<std::string, Tensor>& grads, AdamState& state,
               double lr, const AdamConfig& config = {});

/// lr0 * (1 - step / total_steps)^power.
double poly_decay(double lr0, std::uint64_t step, std::uint64_t total_steps, double power = 1.0);

}  // namespace pal::nn
