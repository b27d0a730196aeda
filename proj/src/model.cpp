#include "pal/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "pal/error.hpp"
#include "pal/ops.hpp"
#include "pal/rng.hpp"
#include "pal/tape.hpp"

namespace pal::nn {

namespace {

std::string conv_name(std::size_t i) { return "conv" + std::to_string(i + 1); }

struct Extent {
  std::size_t h, w;
};

// Spatial extent after each block's relu (first) and after its pool (second).
std::vector<std::pair<Extent, Extent>> block_extents(const ModelSpec& spec) {
  std::vector<std::pair<Extent, Extent>> out;
  Extent e{spec.height, spec.width};
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const ConvBlock& b = spec.blocks[i];
    if (b.kernel == 0 || b.stride == 0 || b.kernel > e.h + 2 * b.padding || b.kernel > e.w + 2 * b.padding)
      throw ConfigError(conv_name(i) + ": kernel does not fit the " + std::to_string(e.h) + "x" +
                        std::to_string(e.w) + " input");
    Extent conv{(e.h + 2 * b.padding - b.kernel) / b.stride + 1, (e.w + 2 * b.padding - b.kernel) / b.stride + 1};
    Extent pooled = conv;
    if (b.pool) {
      if (b.pool->kernel == 0 || b.pool->stride == 0 || conv.h < b.pool->kernel || conv.w < b.pool->kernel)
        throw ConfigError(conv_name(i) + ": pooling window exceeds the feature map");
      pooled = {(conv.h - b.pool->kernel) / b.pool->stride + 1, (conv.w - b.pool->kernel) / b.pool->stride + 1};
    }
    out.emplace_back(conv, pooled);
    e = pooled;
  }
  return out;
}

}  // namespace

void ModelSpec::validate() const {
  if (in_channels == 0 || height == 0 || width == 0) throw ConfigError("model input must be non-empty");
  if (blocks.empty()) throw ConfigError("model needs at least one conv block");
  if (n_classes < 2) throw ConfigError("model needs at least two classes");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (blocks[i].out_channels == 0) throw ConfigError(conv_name(i) + ": output channels must be > 0");
    if (blocks[i].tap.empty()) throw ConfigError(conv_name(i) + ": missing tap name");
    if (!seen.insert(blocks[i].tap).second) throw ConfigError("duplicate tap name '" + blocks[i].tap + "'");
  }
  block_extents(*this);
}

std::vector<std::string> ModelSpec::tap_names() const {
  std::vector<std::string> names;
  for (const ConvBlock& b : blocks) names.push_back(b.tap);
  return names;
}

bool ModelSpec::has_tap(const std::string& name) const {
  return std::any_of(blocks.begin(), blocks.end(), [&](const ConvBlock& b) { return b.tap == name; });
}

TapShape ModelSpec::tap_shape(const std::string& name) const {
  const auto extents = block_extents(*this);
  for (std::size_t i = 0; i < blocks.size(); ++i)
    if (blocks[i].tap == name) return {blocks[i].out_channels, extents[i].first.h, extents[i].first.w};
  throw ConfigError("layer '" + name + "' is not a declared tap");
}

std::string ModelSpec::last_tap() const { return blocks.back().tap; }

std::size_t ModelSpec::feature_size() const {
  const auto extents = block_extents(*this);
  return blocks.back().out_channels * extents.back().second.h * extents.back().second.w;
}

std::size_t ModelSpec::parameter_count() const {
  std::size_t count = 0, channels = in_channels;
  for (const ConvBlock& b : blocks) {
    count += b.out_channels * channels * b.kernel * b.kernel + (b.bias ? b.out_channels : 0);
    channels = b.out_channels;
  }
  return count + feature_size() * n_classes + (head_bias ? n_classes : 0);
}

ModelSpec ModelSpec::with_bias(bool enabled) const {
  ModelSpec copy = *this;
  for (ConvBlock& b : copy.blocks) b.bias = enabled;
  copy.head_bias = enabled;
  return copy;
}

ModelSpec ModelSpec::toy() {
  ModelSpec s;
  s.id = "toy";
  s.blocks = {
      {8, 3, 1, 1, true, PoolSpec{}, "relu1"},
      {16, 3, 1, 1, true, PoolSpec{}, "relu2"},
      {16, 3, 1, 1, true, std::nullopt, "relu3"},
      {32, 3, 1, 1, true, PoolSpec{}, "relu4"},
  };
  return s;
}

ModelSpec ModelSpec::tiny() {
  ModelSpec s;
  s.id = "tiny";
  s.height = 16;
  s.width = 16;
  s.blocks = {
      {4, 3, 1, 1, true, PoolSpec{}, "relu1"},
      {8, 3, 1, 1, true, PoolSpec{}, "relu2"},
  };
  return s;
}

ModelSpec ModelSpec::preset(const std::string& id) {
  if (id == "toy") return toy();
  if (id == "tiny") return tiny();
  throw ConfigError("unknown model preset '" + id + "'");
}

void to_json(nlohmann::json& j, const ModelSpec& spec) {
  j = nlohmann::json{{"id", spec.id},
                     {"input", {spec.in_channels, spec.height, spec.width}},
                     {"n_classes", spec.n_classes},
                     {"head_bias", spec.head_bias},
                     {"blocks", nlohmann::json::array()}};
  for (const ConvBlock& b : spec.blocks) {
    nlohmann::json jb{{"out_channels", b.out_channels}, {"kernel", b.kernel}, {"stride", b.stride},
                      {"padding", b.padding},           {"bias", b.bias},     {"tap", b.tap}};
    if (b.pool) jb["pool"] = {{"kernel", b.pool->kernel}, {"stride", b.pool->stride}};
    j["blocks"].push_back(jb);
  }
}

void from_json(const nlohmann::json& j, ModelSpec& spec) {
  try {
    spec = ModelSpec{};
    spec.id = j.value("id", std::string("custom"));
    const auto input = j.at("input").get<std::vector<std::size_t>>();
    if (input.size() != 3) throw ConfigError("model input must be [channels, height, width]");
    spec.in_channels = input[0];
    spec.height = input[1];
    spec.width = input[2];
    spec.n_classes = j.value("n_classes", std::size_t{7});
    spec.head_bias = j.value("head_bias", true);
    for (const auto& jb : j.at("blocks")) {
      ConvBlock b;
      b.out_channels = jb.at("out_channels").get<std::size_t>();
      b.kernel = jb.value("kernel", std::size_t{3});
      b.stride = jb.value("stride", std::size_t{1});
      b.padding = jb.value("padding", std::size_t{1});
      b.bias = jb.value("bias", true);
      b.tap = jb.value("tap", "relu" + std::to_string(spec.blocks.size() + 1));
      if (jb.contains("pool"))
        b.pool = PoolSpec{jb["pool"].value("kernel", std::size_t{2}), jb["pool"].value("stride", std::size_t{2})};
      spec.blocks.push_back(b);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid model description: ") + e.what());
  }
  spec.validate();
}

void check_parameters(const ModelSpec& spec, const Parameters& params) {
  Parameters expected = init_params(spec, 0);
  if (expected.size() != params.size()) throw ConfigError("parameter set does not match the model");
  for (const auto& [name, t] : expected) {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("missing parameter '" + name + "'");
    if (it->second.shape() != t.shape())
      throw ConfigError("parameter '" + name + "' has shape " + to_string(it->second.shape()) +
                        ", expected " + to_string(t.shape()));
  }
}

Parameters init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  const Rng root = Rng(seed).split("init");
  Parameters params;
  auto he = [&](const std::string& name, Shape shape, std::size_t fan_in) {
    Rng rng = root.split(name);
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    Buffer v(numel(shape));
    for (double& x : v) x = rng.normal(0.0, sd);
    params.emplace(name, Tensor(std::move(shape), std::move(v)));
  };
  std::size_t channels = spec.in_channels;
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const ConvBlock& b = spec.blocks[i];
    he(conv_name(i) + ".weight", {b.out_channels, channels, b.kernel, b.kernel}, channels * b.kernel * b.kernel);
    if (b.bias) params.emplace(conv_name(i) + ".bias", Tensor::zeros({b.out_channels}));
    channels = b.out_channels;
  }
  he("fc.weight", {spec.n_classes, spec.feature_size()}, spec.feature_size());
  if (spec.head_bias) params.emplace("fc.bias", Tensor::zeros({spec.n_classes}));
  return params;
}

ForwardTrace forward(const ModelSpec& spec, const Parameters& params, const Tensor& batch, Tape* tape) {
  if (batch.rank() != 4 || batch.dim(1) != spec.in_channels || batch.dim(2) != spec.height ||
      batch.dim(3) != spec.width)
    throw ShapeError("batch shape " + to_string(batch.shape()) + " does not match model input [N," +
                     std::to_string(spec.in_channels) + "," + std::to_string(spec.height) + "," +
                     std::to_string(spec.width) + "]");
  ForwardTrace trace;
  for (const auto& [name, value] : params) trace.params.emplace(name, tape ? tape->leaf(value) : value);
  auto param = [&](const std::string& name) -> Tensor {
    auto it = trace.params.find(name);
    if (it == trace.params.end()) throw ConfigError("missing parameter '" + name + "'");
    return it->second;
  };

  Tensor x = batch;
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const ConvBlock& b = spec.blocks[i];
    const std::string name = conv_name(i);
    x = ops::conv2d(x, param(name + ".weight"), b.bias ? param(name + ".bias") : Tensor(), b.stride, b.padding);
    x = ops::relu(x);
    trace.taps.emplace(b.tap, x);
    if (b.pool) x = ops::maxpool2d(x, b.pool->kernel, b.pool->stride);
  }
  const std::size_t n = batch.dim(0);
  x = ops::reshape(x, {n, x.size() / n});
  Tensor logits = ops::matmul(x, ops::transpose(param("fc.weight")));
  if (spec.head_bias) logits = ops::add(logits, param("fc.bias"));
  trace.logits = logits;
  return trace;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw ShapeError("cross-entropy expects N x K logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw ShapeError("label count does not match batch size");
  Buffer row_max(n);
  auto index = std::make_shared<std::vector<std::size_t>>(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
      throw ConfigError("label " + std::to_string(labels[i]) + " out of range [0, " + std::to_string(k) + ")");
    const auto row = logits.values().subspan(i * k, k);
    row_max[i] = *std::max_element(row.begin(), row.end());
    (*index)[i] = i * k + static_cast<std::size_t>(labels[i]);
  }
  const Tensor shifted = ops::sub(logits, Tensor({n, 1}, std::move(row_max)));
  const Tensor log_norm = ops::log(ops::sum(ops::exp(shifted), {1}, true));
  const Tensor log_prob = ops::sub(shifted, log_norm);
  const Tensor picked = ops::gather(log_prob, index, {n});
  return ops::mul(ops::sum(picked), -1.0 / static_cast<double>(n));
}

std::vector<int> predict(const Tensor& logits) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = logits.values().subspan(i * k, k);
    out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

}  // namespace pal::nn
