#pragma once

#include <cstddef>
#include <string>

#include "pal/model.hpp"
#include "pal/tensor.hpp"

namespace pal::attr {

enum class Method { Grad, GradInput };

std::string to_string(Method method);
Method parse_method(const std::string& text);

/// Which attribution channels the prior constrains.
struct ChannelStrategy {
  enum class Kind { AllChannels, Mean, MeanOfHalf };

  Kind kind = Kind::MeanOfHalf;
  std::size_t c1 = 0;  // MeanOfHalf only; 0 selects floor(C / 2)

  static ChannelStrategy all_channels() { return {Kind::AllChannels, 0}; }
  static ChannelStrategy mean() { return {Kind::Mean, 0}; }
  static ChannelStrategy mean_of_half(std::size_t c1 = 0) { return {Kind::MeanOfHalf, c1}; }

  /// Number of constrained channels for a map with `channels` channels.
  std::size_t constrained(std::size_t channels) const;
  bool operator==(const ChannelStrategy&) const = default;
};

std::string to_string(const ChannelStrategy& strategy);
ChannelStrategy parse_strategy(const std::string& text);

/// Attribution of every position of a tap map, N x C x H x W, all entries >= 0.
struct AttributionMap {
  Tensor values;
  std::string layer;
  Method method = Method::Grad;
};

/// Sum of the logits of each sample, shape {N}.
Tensor sum_logits(const Tensor& logits);

/// |d sum_o f_o / d tap|. Samples do not interact, so one backward pass over
/// the batch total yields every sample's own gradient. With `create_graph` the
/// map stays differentiable w.r.t. everything the tap and logits depend on.
Tensor grad_map(const Tensor& logits, const Tensor& tap, bool create_graph);
/// |d sum_o f_o / d tap| * tap.
Tensor grad_input_map(const Tensor& logits, const Tensor& tap, bool create_graph);
/// (d sum_o f_o / d tap) * tap without the absolute value; untracked.
Tensor signed_grad_input(const Tensor& logits, const Tensor& tap);

AttributionMap grad_attribution(const nn::ForwardTrace& trace, const std::string& layer, bool create_graph);
AttributionMap grad_input_attribution(const nn::ForwardTrace& trace, const std::string& layer,
                                      bool create_graph);
AttributionMap attribute(const nn::ForwardTrace& trace, const std::string& layer, Method method,
                         bool create_graph);

/// AllChannels: passthrough. Mean: N x 1 x H x W channel mean. MeanOfHalf: mean
/// of the first C1 channels, N x 1 x H x W.
Tensor reduce_channels(const Tensor& attribution, const ChannelStrategy& strategy);
/// Mean of the channels MeanOfHalf leaves free (indices C1..C-1).
Tensor free_channels_mean(const Tensor& attribution, const ChannelStrategy& strategy);

}  // namespace pal::attr
