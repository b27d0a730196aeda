#include "pal/attribution.hpp"

#include <algorithm>
#include <cctype>

#include "pal/autograd.hpp"
#include "pal/error.hpp"
#include "pal/ops.hpp"
#include "pal/tape.hpp"

namespace pal::attr {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  s.erase(std::remove_if(s.begin(), s.end(), [](char c) { return c == '_' || c == '-' || c == '*'; }), s.end());
  return s;
}

Tensor tap_gradient(const Tensor& logits, const Tensor& tap, bool create_graph) {
  if (!tap.tracked() || !logits.tracked())
    throw TapeError("attribution needs a forward pass recorded on a tape");
  return backward(ops::sum(sum_logits(logits)), tap, create_graph);
}

const Tensor& find_tap(const nn::ForwardTrace& trace, const std::string& layer) {
  auto it = trace.taps.find(layer);
  if (it == trace.taps.end()) throw ConfigError("layer '" + layer + "' is not tapped");
  return it->second;
}

}  // namespace

std::string to_string(Method method) { return method == Method::Grad ? "grad" : "gradinput"; }

Method parse_method(const std::string& text) {
  const std::string t = lower(text);
  if (t == "grad") return Method::Grad;
  if (t == "gradinput" || t == "gradxinput") return Method::GradInput;
  throw ConfigError("unknown attribution method '" + text + "'");
}

std::size_t ChannelStrategy::constrained(std::size_t channels) const {
  switch (kind) {
    case Kind::AllChannels:
    case Kind::Mean: return channels;
    case Kind::MeanOfHalf: {
      if (channels < 2) throw ConfigError("MeanOfHalf needs at least two channels");
      const std::size_t n = c1 == 0 ? channels / 2 : c1;
      if (n < 1 || n >= channels)
        throw ConfigError("MeanOfHalf: C1=" + std::to_string(n) + " out of range for " +
                          std::to_string(channels) + " channels");
      return n;
    }
  }
  return channels;
}

std::string to_string(const ChannelStrategy& s) {
  switch (s.kind) {
    case ChannelStrategy::Kind::AllChannels: return "all";
    case ChannelStrategy::Kind::Mean: return "mean";
    case ChannelStrategy::Kind::MeanOfHalf:
      return s.c1 == 0 ? "meanofhalf" : "meanofhalf" + std::to_string(s.c1);
  }
  return "?";
}

ChannelStrategy parse_strategy(const std::string& text) {
  const std::string t = lower(text);
  if (t == "all" || t == "allchannels") return ChannelStrategy::all_channels();
  if (t == "mean") return ChannelStrategy::mean();
  if (t.rfind("meanofhalf", 0) == 0) {
    const std::string rest = t.substr(10);
    if (rest.empty()) return ChannelStrategy::mean_of_half();
    if (std::all_of(rest.begin(), rest.end(), ::isdigit)) return ChannelStrategy::mean_of_half(std::stoul(rest));
  }
  throw ConfigError("unknown channel strategy '" + text + "'");
}

Tensor sum_logits(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("sum_logits expects N x K logits");
  return ops::sum(logits, {1});
}

Tensor grad_map(const Tensor& logits, const Tensor& tap, bool create_graph) {
  const Tensor g = tap_gradient(logits, tap, create_graph);
  GradModeGuard mode(create_graph);
  return ops::abs(g);
}

Tensor grad_input_map(const Tensor& logits, const Tensor& tap, bool create_graph) {
  const Tensor g = tap_gradient(logits, tap, create_graph);
  GradModeGuard mode(create_graph);
  return ops::mul(ops::abs(g), tap);
}

Tensor signed_grad_input(const Tensor& logits, const Tensor& tap) {
  const Tensor g = tap_gradient(logits, tap, false);
  GradModeGuard mode(false);
  return ops::mul(g, tap);
}

AttributionMap grad_attribution(const nn::ForwardTrace& trace, const std::string& layer, bool create_graph) {
  return {grad_map(trace.logits, find_tap(trace, layer), create_graph), layer, Method::Grad};
}

AttributionMap grad_input_attribution(const nn::ForwardTrace& trace, const std::string& layer,
                                      bool create_graph) {
  return {grad_input_map(trace.logits, find_tap(trace, layer), create_graph), layer, Method::GradInput};
}

AttributionMap attribute(const nn::ForwardTrace& trace, const std::string& layer, Method method,
                         bool create_graph) {
  return method == Method::Grad ? grad_attribution(trace, layer, create_graph)
                                : grad_input_attribution(trace, layer, create_graph);
}

Tensor reduce_channels(const Tensor& a, const ChannelStrategy& strategy) {
  if (a.rank() != 4) throw ShapeError("attribution maps must be N x C x H x W");
  switch (strategy.kind) {
    case ChannelStrategy::Kind::AllChannels: return a;
    case ChannelStrategy::Kind::Mean: return ops::mean(a, {1}, true);
    case ChannelStrategy::Kind::MeanOfHalf: {
      const std::size_t c1 = strategy.constrained(a.dim(1));
      return ops::mean(ops::slice(a, 1, 0, c1), {1}, true);
    }
  }
  return a;
}

Tensor free_channels_mean(const Tensor& a, const ChannelStrategy& strategy) {
  if (strategy.kind != ChannelStrategy::Kind::MeanOfHalf)
    throw ConfigError("only MeanOfHalf leaves channels unconstrained");
  const std::size_t c1 = strategy.constrained(a.dim(1));
  return ops::mean(ops::slice(a, 1, c1, a.dim(1) - c1), {1}, true);
}

}  // namespace pal::attr
