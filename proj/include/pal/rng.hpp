#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace pal {

/// Deterministic 64-bit mixing of a seed with a stream label or index.
std::uint64_t mix_seed(std::uint64_t seed, std::string_view stream);
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

/// Seedable, splittable generator. Children are derived from the seed this
/// generator was created with, not from its current state, so drawing from one
/// stream never shifts another.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  Rng split(std::string_view stream) const { return Rng(mix_seed(seed_, stream)); }
  Rng split(std::uint64_t index) const { return Rng(mix_seed(seed_, index)); }

  std::uint64_t seed() const { return seed_; }
  std::mt19937_64& engine() { return engine_; }

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double mean, double stddev) { return std::normal_distribution<double>(mean, stddev)(engine_); }
  bool bernoulli(double p) { return uniform(0.0, 1.0) < p; }
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace pal
