#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "pal/attribution.hpp"
#include "pal/error.hpp"
#include "pal/model.hpp"
#include "pal/ops.hpp"
#include "pal/tape.hpp"

using namespace pal;
using attr::ChannelStrategy;

namespace {

Tensor random_images(const nn::ModelSpec& spec, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  return oracle::random_tensor({n, spec.in_channels, spec.height, spec.width}, gen, 0.0, 1.0);
}

// Downstream of a tap: conv -> relu -> pool -> dense, with fixed weights.
struct Head {
  Tensor w, fc;
  explicit Head(std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    w = oracle::random_tensor({3, 2, 3, 3}, gen);
    fc = oracle::random_tensor({4, 3 * 3 * 3}, gen);
  }
  Tensor operator()(const Tensor& tap) const {
    const Tensor h = ops::maxpool2d(ops::relu(ops::conv2d(tap, w, Tensor(), 1, 1)), 2, 2);
    return ops::matmul(ops::reshape(h, {tap.dim(0), 27}), ops::transpose(fc));
  }
};

}  // namespace

TEST(SumLogits, PerSample) {
  EXPECT_EQ(attr::sum_logits(Tensor({1, 3}, Buffer{1, 2, 3}))[0], 6.0);
  EXPECT_EQ(attr::sum_logits(Tensor::zeros({1, 3}))[0], 0.0);
  const Tensor s = attr::sum_logits(Tensor({2, 2}, Buffer{1, 2, 10, 20}));
  EXPECT_EQ(s.shape(), Shape{2});
  EXPECT_EQ(s[0], 3.0);
  EXPECT_EQ(s[1], 30.0);
}

TEST(GradAttribution, DenseLayerColumnSums) {
  Tape tape;
  const Tensor x = tape.leaf(Tensor({1, 2}, Buffer{0.3, -0.7}));
  const Tensor W({2, 2}, Buffer{1, -2, 3, 4});
  const Tensor logits = ops::matmul(x, ops::transpose(W));
  const Tensor a = attr::grad_map(logits, x, false);
  EXPECT_EQ(a[0], 4.0);
  EXPECT_EQ(a[1], 2.0);
}

TEST(GradAttribution, IdentityNetworkIsAllOnes) {
  Tape tape;
  const Tensor x = tape.leaf(Tensor({2, 3}, Buffer{1, -2, 3, 0, 5, -6}));
  const Tensor a = attr::grad_map(x, x, false);
  for (double v : a.values()) EXPECT_EQ(v, 1.0);
}

TEST(GradAttribution, MatchesFiniteDifferences) {
  std::mt19937_64 gen(3);
  const Tensor tap0 = oracle::random_tensor({2, 2, 6, 6}, gen, 0.0, 1.0);
  const Head head(5);
  Tape tape;
  const Tensor tap = tape.leaf(tap0);
  const Tensor a = attr::grad_map(head(tap), tap, false);
  const Tensor n = finite_diff([&](const Tensor& t) { return ops::sum(head(t)).item(); }, tap0, 1e-6);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], std::abs(n[i]), 1e-6) << i;
}

TEST(GradInputAttribution, IsGradTimesTap) {
  const nn::ModelSpec spec = nn::ModelSpec::toy();
  Tape tape;
  const nn::ForwardTrace t = nn::forward(spec, nn::init_params(spec, 1), random_images(spec, 2, 2), &tape);
  for (const std::string& layer : spec.tap_names()) {
    const Tensor g = attr::grad_attribution(t, layer, false).values;
    const Tensor gi = attr::grad_input_attribution(t, layer, false).values;
    const Tensor tap = t.taps.at(layer);
    EXPECT_EQ(gi.shape(), tap.shape());
    for (std::size_t i = 0; i < gi.size(); ++i) {
      EXPECT_NEAR(gi[i], g[i] * tap[i], 1e-12);
      EXPECT_GE(gi[i], 0.0);
      EXPECT_GE(g[i], 0.0);
      if (tap[i] == 0.0) {
        EXPECT_EQ(gi[i], 0.0);
      }
    }
  }
}

TEST(GradInputAttribution, ExactContributionOnBiasFreeNets) {
  const nn::ModelSpec spec = nn::ModelSpec::toy().with_bias(false);
  double worst = 0.0;
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    Tape tape;
    const nn::ForwardTrace t = nn::forward(spec, nn::init_params(spec, trial), random_images(spec, 1, 100 + trial), &tape);
    const double total = ops::sum(t.logits).item();
    for (const std::string& layer : spec.tap_names()) {
      double s = 0.0;
      const Tensor contrib = attr::signed_grad_input(t.logits, t.taps.at(layer));
      for (double v : contrib.values()) s += v;
      worst = std::max(worst, std::abs(s - total) / std::max(std::abs(total), 1e-300));
    }
  }
  EXPECT_LE(worst, 1e-8);
}

TEST(GradAttribution, BatchMembersDoNotMix) {
  const nn::ModelSpec spec = nn::ModelSpec::toy();
  const auto p = nn::init_params(spec, 7);
  const Tensor batch = random_images(spec, 2, 8);
  Tape tape;
  const nn::ForwardTrace t = nn::forward(spec, p, batch, &tape);
  const Tensor both = attr::grad_input_attribution(t, "relu3", false).values;
  const std::size_t per = both.size() / 2;
  for (std::size_t k = 0; k < 2; ++k) {
    Buffer one(batch.values().begin() + static_cast<std::ptrdiff_t>(k * 64 * 64),
               batch.values().begin() + static_cast<std::ptrdiff_t>((k + 1) * 64 * 64));
    Tape t1;
    const nn::ForwardTrace s = nn::forward(spec, p, Tensor({1, 1, 64, 64}, one), &t1);
    const Tensor single = attr::grad_input_attribution(s, "relu3", false).values;
    for (std::size_t i = 0; i < per; ++i) EXPECT_NEAR(both[k * per + i], single[i], 1e-12);
  }
  // The logit sums themselves are per sample.
  const Tensor sums = attr::sum_logits(t.logits);
  EXPECT_EQ(sums.shape(), Shape{2});
}

TEST(GradAttribution, PiecewiseConstantInsideActivationRegion) {
  const nn::ModelSpec spec = nn::ModelSpec::toy();
  const auto p = nn::init_params(spec, 11);
  const Tensor x = random_images(spec, 1, 12);
  Tape a, b;
  const Tensor ga = attr::grad_attribution(nn::forward(spec, p, x, &a), "relu2", false).values;
  const Tensor gb = attr::grad_attribution(nn::forward(spec, p, x + 1e-11, &b), "relu2", false).values;
  EXPECT_LE(oracle::max_abs_diff(ga.values(), gb.values()), 1e-10);
}

TEST(GradAttribution, SparseBeforeMaxpool) {
  const nn::ModelSpec spec = nn::ModelSpec::toy();
  Tape tape;
  const nn::ForwardTrace t = nn::forward(spec, nn::init_params(spec, 0), random_images(spec, 4, 1), &tape);
  const Tensor a = attr::grad_attribution(t, "relu1", false).values;
  std::size_t zeros = 0;
  for (double v : a.values()) zeros += v == 0.0;
  const double fraction = static_cast<double>(zeros) / static_cast<double>(a.size());
  RecordProperty("zero_fraction", std::to_string(fraction));
  EXPECT_GE(fraction, 0.5);
}

TEST(GradAttribution, UnknownLayer) {
  const nn::ModelSpec spec = nn::ModelSpec::tiny();
  Tape tape;
  const nn::ForwardTrace t = nn::forward(spec, nn::init_params(spec, 0), random_images(spec, 1, 1), &tape);
  try {
    attr::attribute(t, "relu9", attr::Method::Grad, false);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("not tapped"), std::string::npos);
  }
  const nn::ForwardTrace untracked = nn::forward(spec, nn::init_params(spec, 0), random_images(spec, 1, 1));
  EXPECT_THROW(attr::attribute(untracked, "relu1", attr::Method::Grad, false), TapeError);
}

TEST(GradAttribution, CreateGraphKeepsMapDifferentiable) {
  const nn::ModelSpec spec = nn::ModelSpec::tiny();
  Tape tape;
  const nn::ForwardTrace t = nn::forward(spec, nn::init_params(spec, 0), random_images(spec, 2, 1), &tape);
  EXPECT_TRUE(attr::grad_input_attribution(t, "relu2", true).values.tracked());
  EXPECT_FALSE(attr::grad_input_attribution(t, "relu2", false).values.tracked());
}

TEST(ReduceChannels, Strategies) {
  const Tensor a({1, 2, 1, 1}, Buffer{1, 3});
  EXPECT_EQ(attr::reduce_channels(a, ChannelStrategy::mean())[0], 2.0);
  EXPECT_EQ(attr::reduce_channels(a, ChannelStrategy::all_channels()).shape(), (Shape{1, 2, 1, 1}));

  const Tensor four({1, 4, 1, 2}, Buffer{1, 2, 3, 4, 5, 6, 7, 8});
  const Tensor half = attr::reduce_channels(four, ChannelStrategy::mean_of_half(2));
  EXPECT_EQ(half.shape(), (Shape{1, 1, 1, 2}));
  EXPECT_EQ(half[0], 2.0);
  EXPECT_EQ(half[1], 3.0);
  Buffer changed(four.values().begin(), four.values().end());
  changed[4] = 100.0;  // channel 3
  EXPECT_EQ(*attr::reduce_channels(Tensor({1, 4, 1, 2}, changed), ChannelStrategy::mean_of_half(2)).buffer(),
            *half.buffer());
  EXPECT_EQ(attr::free_channels_mean(four, ChannelStrategy::mean_of_half(2))[0], 6.0);
}

TEST(ReduceChannels, FreeHalfGetsExactlyZeroGradient) {
  std::mt19937_64 gen(1);
  Tape tape;
  const Tensor a = tape.leaf(oracle::random_tensor({2, 6, 3, 3}, gen, 0.0, 1.0));
  const Tensor r = attr::reduce_channels(a, ChannelStrategy::mean_of_half());
  const Tensor g = backward(ops::sum(r * r), a);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 6; ++c)
      for (std::size_t i = 0; i < 9; ++i) {
        const double v = g[(n * 6 + c) * 9 + i];
        if (c >= 3) EXPECT_EQ(v, 0.0);
        else EXPECT_NE(v, 0.0);
      }
}

TEST(ReduceChannels, MeanOfHalfRange) {
  EXPECT_EQ(ChannelStrategy::mean_of_half().constrained(32), 16u);
  EXPECT_EQ(ChannelStrategy::mean_of_half().constrained(5), 2u);
  EXPECT_THROW(ChannelStrategy::mean_of_half(4).constrained(4), ConfigError);
  EXPECT_THROW(ChannelStrategy::mean_of_half().constrained(1), ConfigError);
  EXPECT_THROW(attr::reduce_channels(Tensor::zeros({1, 3, 2, 2}), ChannelStrategy::mean_of_half(3)), ConfigError);
}

TEST(Names, RoundTrip) {
  for (attr::Method m : {attr::Method::Grad, attr::Method::GradInput})
    EXPECT_EQ(attr::parse_method(attr::to_string(m)), m);
  for (const ChannelStrategy& s :
       {ChannelStrategy::all_channels(), ChannelStrategy::mean(), ChannelStrategy::mean_of_half(),
        ChannelStrategy::mean_of_half(5)})
    EXPECT_EQ(attr::parse_strategy(attr::to_string(s)), s);
  EXPECT_EQ(attr::parse_method("Grad*Input"), attr::Method::GradInput);
  EXPECT_THROW(attr::parse_method("gradcam"), ConfigError);
  EXPECT_THROW(attr::parse_strategy("half"), ConfigError);
}
