#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pal/tensor.hpp"

namespace pal {
class Tape;
}

namespace pal::nn {

struct PoolSpec {
  std::size_t kernel = 2;
  std::size_t stride = 2;
};

/// conv -> relu -> optional maxpool. The post-relu map is exposed as `tap`.
struct ConvBlock {
  std::size_t out_channels = 8;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  bool bias = true;
  std::optional<PoolSpec> pool;
  std::string tap;
};

struct TapShape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

/// Declarative conv stack followed by flatten -> dense(n_classes).
struct ModelSpec {
  std::string id = "custom";
  std::size_t in_channels = 1;
  std::size_t height = 64;
  std::size_t width = 64;
  std::vector<ConvBlock> blocks;
  std::size_t n_classes = 7;
  bool head_bias = true;

  /// Throws ConfigError on empty/degenerate layers, collapsing extents or duplicate taps.
  void validate() const;

  std::vector<std::string> tap_names() const;
  bool has_tap(const std::string& name) const;
  TapShape tap_shape(const std::string& name) const;
  /// Name of the deepest tap; the default PAL layer.
  std::string last_tap() const;
  /// Flattened feature count entering the dense head.
  std::size_t feature_size() const;
  std::size_t parameter_count() const;

  /// Copy with every bias switched on or off.
  ModelSpec with_bias(bool enabled) const;

  /// 64x64 grayscale: conv8/pool, conv16/pool, conv16, conv32/pool, dense.
  static ModelSpec toy();
  /// 16x16 grayscale, two conv layers; sized for exhaustive finite differences.
  static ModelSpec tiny();
  /// "toy" or "tiny".
  static ModelSpec preset(const std::string& id);
};

void to_json(nlohmann::json& j, const ModelSpec& spec);
void from_json(const nlohmann::json& j, ModelSpec& spec);

/// Trainable weights keyed by stable layer names ("conv1.weight", "fc.bias", ...).
using Parameters = std::map<std::string, Tensor>;

/// Checks names and shapes of `params` against `spec`.
void check_parameters(const ModelSpec& spec, const Parameters& params);

/// He-normal weights (variance 2 / fan_in), zero biases, deterministic per seed.
Parameters init_params(const ModelSpec& spec, std::uint64_t seed);

struct ForwardTrace {
  Tensor logits;                        // N x n_classes, pre-softmax
  std::map<std::string, Tensor> taps;   // post-relu maps, the same tensors used downstream
  Parameters params;                    // tape leaves for the weights (tracked runs only)
};

/// Runs the network on an NCHW batch. When `tape` is given the parameters are
/// registered as leaves and everything downstream is tracked.
ForwardTrace forward(const ModelSpec& spec, const Parameters& params, const Tensor& batch,
                     Tape* tape = nullptr);

/// Mean over the batch of -log softmax(logits)[label], max-shifted for stability.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Row-wise argmax of N x K logits.
std::vector<int> predict(const Tensor& logits);

}  // namespace pal::nn
