#include "pal/optim.hpp"

#include <cmath>

#include "pal/error.hpp"

namespace pal::nn {

void adam_step(Parameters& params, const std::map<std::string, Tensor>& grads, AdamState& state,
               double lr, const AdamConfig& config) {
  for (const auto& [name, p] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) throw ConfigError("adam: no gradient for '" + name + "'");
    if (it->second.shape() != p.shape()) throw ShapeError("adam: gradient shape mismatch for '" + name + "'");
    for (double g : it->second.values())
      if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient for '" + name + "'");
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (auto& [name, p] : params) {
    const auto g = grads.at(name).values();
    Buffer& m = state.first_moment[name];
    Buffer& v = state.second_moment[name];
    if (m.size() != g.size()) m.assign(g.size(), 0.0);
    if (v.size() != g.size()) v.assign(g.size(), 0.0);
    Buffer updated(p.values().begin(), p.values().end());
    for (std::size_t i = 0; i < updated.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      updated[i] -= lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
    p = Tensor(p.shape(), std::move(updated));
  }
}

double poly_decay(double lr0, std::uint64_t step, std::uint64_t total_steps, double power) {
  if (total_steps == 0) throw ConfigError("poly_decay: total_steps must be positive");
  if (step > total_steps) throw ConfigError("poly_decay: step exceeds total_steps");
  const double remaining = 1.0 - static_cast<double>(step) / static_cast<double>(total_steps);
  return lr0 * std::pow(remaining, power);
}

}  // namespace pal::nn
