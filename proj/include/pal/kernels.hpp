#pragma once

#include <cstddef>
#include <span>

namespace pal::kernels {

/// Geometry of a square-kernel 2-D convolution over NCHW data with OIkk weights.
struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
  std::size_t input_size() const { return batch * in_channels * height * width; }
  std::size_t weight_size() const { return out_channels * in_channels * kernel * kernel; }
  std::size_t output_size() const { return batch * out_channels * out_height() * out_width(); }
};

struct PoolGeometry {
  std::size_t planes = 1;  // batch * channels
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t kernel = 2;
  std::size_t stride = 2;

  std::size_t out_height() const { return (height - kernel) / stride + 1; }
  std::size_t out_width() const { return (width - kernel) / stride + 1; }
};

// All kernels overwrite their output span completely. `bias` may be empty.
//
// `reference` holds direct textbook loops, one output element at a time. They
// are kept as the oracle for the `omp` kernels, which reorder the loops for
// contiguous inner access and split independent output slices across OpenMP
// threads. Every output element is accumulated in a fixed order regardless of
// the thread count, so `omp` results are reproducible run to run.

namespace reference {

void conv2d(const ConvGeometry& g, std::span<const double> input, std::span<const double> weight,
            std::span<const double> bias, std::span<double> output);

/// d(output)/d(input) applied to an output gradient (transposed convolution).
void conv2d_input_grad(const ConvGeometry& g, std::span<const double> grad_out,
                       std::span<const double> weight, std::span<double> grad_in);

/// d(output)/d(weight) applied to an output gradient.
void conv2d_weight_grad(const ConvGeometry& g, std::span<const double> input,
                        std::span<const double> grad_out, std::span<double> grad_weight);

/// Flat input index of each window maximum; ties go to the first element in
/// row-major order.
void maxpool2d_argmax(const PoolGeometry& g, std::span<const double> input,
                      std::span<std::size_t> argmax);

void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
            std::span<const double> b, std::span<double> c);

}  // namespace reference

namespace omp {

void conv2d(const ConvGeometry& g, std::span<const double> input, std::span<const double> weight,
            std::span<const double> bias, std::span<double> output);
void conv2d_input_grad(const ConvGeometry& g, std::span<const double> grad_out,
                       std::span<const double> weight, std::span<double> grad_in);
void conv2d_weight_grad(const ConvGeometry& g, std::span<const double> input,
                        std::span<const double> grad_out, std::span<double> grad_weight);
void maxpool2d_argmax(const PoolGeometry& g, std::span<const double> input,
                      std::span<std::size_t> argmax);
void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
            std::span<const double> b, std::span<double> c);

}  // namespace omp

}  // namespace pal::kernels
