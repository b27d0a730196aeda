#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "pal/autograd.hpp"
#include "pal/error.hpp"
#include "pal/ops.hpp"
#include "pal/tape.hpp"

using namespace pal;

TEST(Backward, ReluSum) {
  Tape tape;
  const Tensor x = tape.leaf(Tensor::vector({-1, 2}));
  const Tensor g = backward(ops::sum(ops::relu(x)), x);
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[1], 1.0);
  EXPECT_FALSE(g.tracked());
}

TEST(Backward, SecondOrderOfSquare) {
  Tape tape;
  const Tensor x = tape.leaf(Tensor::vector({1, 3}));
  const Tensor g = backward(ops::sum(x * x), x, true);
  ASSERT_TRUE(g.tracked());
  EXPECT_EQ(g[0], 2.0);
  EXPECT_EQ(g[1], 6.0);
  const Tensor h = backward(ops::sum(g * g), x);
  EXPECT_EQ(h[0], 8.0);
  EXPECT_EQ(h[1], 24.0);
}

TEST(Backward, SecondOrderAgreesWithFiniteDifferences) {
  // L(x) = sum(|d/dx sum(conv(relu-free poly))|^2) through conv, pool and exp.
  std::mt19937_64 gen(17);
  const Tensor w = oracle::random_tensor({2, 1, 3, 3}, gen);
  const Tensor x0 = oracle::random_tensor({1, 1, 6, 6}, gen);
  auto inner = [&](const Tensor& x) {
    return ops::sum(ops::exp(ops::maxpool2d(ops::conv2d(x * x, w, Tensor(), 1, 1), 2, 2) * 0.5));
  };
  auto outer_value = [&](const Tensor& x) {
    Tape t;
    const Tensor leaf = t.leaf(x);
    const Tensor g = backward(inner(leaf), leaf, true);
    return ops::sum(g * g).item();
  };
  Tape tape;
  const Tensor leaf = tape.leaf(x0);
  const Tensor g = backward(inner(leaf), leaf, true);
  const Tensor analytic = backward(ops::sum(g * g), leaf);
  const Tensor numeric = finite_diff(outer_value, x0, 1e-6);
  EXPECT_LE(oracle::max_rel_error(analytic.values(), numeric.values(), 1e-8), 1e-5);
}

TEST(Backward, UnusedInputGetsZeros) {
  Tape tape;
  const Tensor x = tape.leaf(Tensor::vector({1, 2}));
  const Tensor y = tape.leaf(Tensor::vector({5}));
  const auto grads = backward(ops::sum(x * x), std::vector<Tensor>{x, y});
  EXPECT_EQ(grads[1][0], 0.0);
}

TEST(Backward, AccumulatesAcrossUses) {
  Tape tape;
  const Tensor x = tape.leaf(Tensor::vector({2}));
  const Tensor g = backward(ops::sum(x * x + x * 3.0 + x), x);
  EXPECT_EQ(g[0], 8.0);
}

TEST(Backward, Errors) {
  Tape tape, other;
  const Tensor x = tape.leaf(Tensor::vector({1, 2}));
  EXPECT_THROW(backward(x * x, x), TapeError);                    // not scalar
  EXPECT_THROW(backward(ops::sum(Tensor::vector({1, 2})), x), TapeError);  // untracked output
  const Tensor z = other.leaf(Tensor::vector({1}));
  EXPECT_THROW(backward(ops::sum(x), z), TapeError);                // wrt on another tape
  EXPECT_THROW(ops::add(x, z), TapeError);                          // mixing tapes
}

TEST(Backward, CreateGraphFalseLeavesTapeUnchanged) {
  Tape tape;
  const Tensor x = tape.leaf(Tensor::vector({1, 2, 3}));
  const Tensor loss = ops::sum(ops::exp(x) * x);
  const std::size_t before = tape.size();
  backward(loss, x, false);
  EXPECT_EQ(tape.size(), before);
  backward(loss, x, true);
  EXPECT_GT(tape.size(), before);
}

TEST(Backward, Deterministic) {
  std::mt19937_64 gen(4);
  const Tensor x0 = oracle::random_tensor({2, 2, 6, 6}, gen);
  const Tensor w = oracle::random_tensor({3, 2, 3, 3}, gen);
  auto run = [&] {
    Tape tape;
    const Tensor x = tape.leaf(x0);
    const Tensor g = backward(ops::sum(ops::relu(ops::conv2d(x, w, Tensor(), 1, 1))), x, true);
    return backward(ops::sum(g * x), x);
  };
  const Tensor a = run(), b = run();
  EXPECT_TRUE(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
}

TEST(Tape, ReplayIsBitIdentical) {
  std::mt19937_64 gen(8);
  Tape tape;
  const Tensor x = tape.leaf(oracle::random_tensor({1, 2, 6, 6}, gen));
  const Tensor w = tape.leaf(oracle::random_tensor({2, 2, 3, 3}, gen));
  const Tensor y = ops::sum(ops::maxpool2d(ops::relu(ops::conv2d(x, w, Tensor(), 1, 1)), 2, 2));
  backward(y, std::vector<Tensor>{x, w}, true);
  const auto replayed = tape.replay();
  ASSERT_EQ(replayed.size(), tape.size());
  for (std::size_t i = 0; i < tape.size(); ++i) EXPECT_EQ(replayed[i], *tape.node(i).value) << tape.node(i).kind;
}

TEST(Tape, TopologicalAndMonotone) {
  Tape tape;
  const Tensor x = tape.leaf(Tensor::vector({1, 2}));
  std::size_t last = tape.size();
  Tensor y = x;
  for (int i = 0; i < 5; ++i) {
    y = ops::exp(y * 0.1);
    EXPECT_GT(tape.size(), last);
    last = tape.size();
  }
  backward(ops::sum(y), x, true);
  EXPECT_GT(tape.size(), last);
  for (std::size_t i = 0; i < tape.size(); ++i)
    for (const Tensor& in : tape.node(i).inputs) EXPECT_LT(in.node(), i);
  const auto gen = tape.generation();
  tape.reset();
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_EQ(tape.generation(), gen + 1);
}

TEST(Tape, GradModeOffRecordsNothing) {
  Tape tape;
  const Tensor x = tape.leaf(Tensor::vector({1, 2}));
  GradModeGuard off(false);
  const Tensor y = x * x;
  EXPECT_FALSE(y.tracked());
  EXPECT_EQ(tape.size(), 1u);
}

TEST(FiniteDiff, Quadratic) {
  const Tensor g = finite_diff([](const Tensor& x) { return ops::sum(x * x).item(); }, Tensor::vector({3}), 1e-5);
  EXPECT_NEAR(g[0], 6.0, 1e-7);
}

TEST(FiniteDiff, Relu) {
  const Tensor g =
      finite_diff([](const Tensor& x) { return ops::sum(ops::relu(x)).item(); }, Tensor::vector({2}), 1e-5);
  EXPECT_NEAR(g[0], 1.0, 1e-9);
}

TEST(FiniteDiff, Errors) {
  auto f = [](const Tensor& x) { return x[0]; };
  EXPECT_THROW(finite_diff(f, Tensor::vector({1}), 0.0), NumericError);
  auto bad = [](const Tensor& x) { return x[0] > 1.0 ? std::nan("") : 0.0; };
  EXPECT_THROW(finite_diff(bad, Tensor::vector({1}), 1e-3), NumericError);
}
