// Serial reference kernels against the OpenMP ones, at the toy model's layer shapes.
// Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "pal/harness.hpp"
#include "pal/kernels.hpp"
#include "pal/tape.hpp"

using namespace pal;
using kernels::ConvGeometry;

namespace {

// (in_channels, size, out_channels) of the four toy conv layers, batch 16.
ConvGeometry layer(const benchmark::State& state) {
  ConvGeometry g;
  g.batch = 16;
  g.in_channels = std::size_t(state.range(0));
  g.height = g.width = std::size_t(state.range(1));
  g.out_channels = std::size_t(state.range(2));
  g.kernel = 3;
  g.padding = 1;
  return g;
}

std::vector<double> noise(std::size_t n, unsigned seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (double& x : v) x = d(gen);
  return v;
}

void layers(benchmark::internal::Benchmark* b) {
  b->Args({1, 64, 8})->Args({8, 32, 16})->Args({16, 16, 16})->Args({16, 16, 32})->Unit(benchmark::kMicrosecond);
}

template <auto Kernel>
void conv_forward(benchmark::State& state) {
  const ConvGeometry g = layer(state);
  const auto x = noise(g.input_size(), 1), w = noise(g.weight_size(), 2), b = noise(g.out_channels, 3);
  std::vector<double> y(g.output_size());
  for (auto _ : state) {
    Kernel(g, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(g.output_size() * g.weight_size() / g.out_channels));
}

template <auto Kernel>
void conv_input_grad(benchmark::State& state) {
  const ConvGeometry g = layer(state);
  const auto gy = noise(g.output_size(), 1), w = noise(g.weight_size(), 2);
  std::vector<double> gx(g.input_size());
  for (auto _ : state) {
    Kernel(g, gy, w, gx);
    benchmark::DoNotOptimize(gx.data());
  }
}

template <auto Kernel>
void conv_weight_grad(benchmark::State& state) {
  const ConvGeometry g = layer(state);
  const auto x = noise(g.input_size(), 1), gy = noise(g.output_size(), 2);
  std::vector<double> gw(g.weight_size());
  for (auto _ : state) {
    Kernel(g, x, gy, gw);
    benchmark::DoNotOptimize(gw.data());
  }
}

template <auto Kernel>
void maxpool(benchmark::State& state) {
  const kernels::PoolGeometry g{16 * std::size_t(state.range(0)), std::size_t(state.range(1)),
                                std::size_t(state.range(1)), 2, 2};
  const auto x = noise(g.planes * g.height * g.width, 1);
  std::vector<std::size_t> idx(g.planes * g.out_height() * g.out_width());
  for (auto _ : state) {
    Kernel(g, x, idx);
    benchmark::DoNotOptimize(idx.data());
  }
}

template <auto Kernel>
void dense(benchmark::State& state) {
  const std::size_t m = 16, k = 2048, n = 7;
  const auto a = noise(m * k, 1), b = noise(k * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    Kernel(m, k, n, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
}

// One full PAL training step (forward, attribution, double backprop) on the toy model.
void pal_step(benchmark::State& state) {
  harness::Dataset d;
  for (std::size_t i = 0; i < 112; ++i) d.samples.push_back(data::synthesize_sample(0, "train", i));
  harness::TrainConfig c;
  c.epochs = 1;
  c.augment = false;
  harness::TrainOptions o;
  o.max_steps = 4;
  for (auto _ : state) benchmark::DoNotOptimize(harness::train(c, d, nullptr, o));
  state.counters["steps"] = 4;
}

}  // namespace

BENCHMARK(conv_forward<kernels::reference::conv2d>)->Apply(layers);
BENCHMARK(conv_forward<kernels::omp::conv2d>)->Apply(layers);
BENCHMARK(conv_input_grad<kernels::reference::conv2d_input_grad>)->Apply(layers);
BENCHMARK(conv_input_grad<kernels::omp::conv2d_input_grad>)->Apply(layers);
BENCHMARK(conv_weight_grad<kernels::reference::conv2d_weight_grad>)->Apply(layers);
BENCHMARK(conv_weight_grad<kernels::omp::conv2d_weight_grad>)->Apply(layers);
BENCHMARK(maxpool<kernels::reference::maxpool2d_argmax>)->Args({8, 64})->Args({32, 16})->Unit(benchmark::kMicrosecond);
BENCHMARK(maxpool<kernels::omp::maxpool2d_argmax>)->Args({8, 64})->Args({32, 16})->Unit(benchmark::kMicrosecond);
BENCHMARK(dense<kernels::reference::matmul>)->Unit(benchmark::kMicrosecond);
BENCHMARK(dense<kernels::omp::matmul>)->Unit(benchmark::kMicrosecond);
BENCHMARK(pal_step)->Unit(benchmark::kMillisecond)->Iterations(3);

BENCHMARK_MAIN();
