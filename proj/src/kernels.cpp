#include "pal/kernels.hpp"

#include <algorithm>
#include <cstddef>
#include <vector>

namespace pal::kernels {

namespace {

using std::ptrdiff_t;

// Output columns [lo, hi) whose input column xo*stride + tap - padding lies in [0, width).
struct ColumnRange {
  std::size_t lo = 0;
  std::size_t hi = 0;
};

ColumnRange valid_columns(std::size_t width, std::size_t out_width, std::size_t tap,
                          std::size_t stride, std::size_t padding) {
  const ptrdiff_t shift = static_cast<ptrdiff_t>(tap) - static_cast<ptrdiff_t>(padding);
  const ptrdiff_t s = static_cast<ptrdiff_t>(stride);
  ptrdiff_t lo = 0;
  if (shift < 0) lo = (-shift + s - 1) / s;
  ptrdiff_t last = static_cast<ptrdiff_t>(width) - 1 - shift;
  ptrdiff_t hi = last < 0 ? 0 : last / s + 1;
  hi = std::min<ptrdiff_t>(hi, static_cast<ptrdiff_t>(out_width));
  if (hi < lo) hi = lo;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Input row for output row y and kernel row tap, or -1 when it falls in the padding.
ptrdiff_t input_row(std::size_t y, std::size_t tap, const ConvGeometry& g) {
  const ptrdiff_t r = static_cast<ptrdiff_t>(y * g.stride + tap) - static_cast<ptrdiff_t>(g.padding);
  return (r < 0 || r >= static_cast<ptrdiff_t>(g.height)) ? -1 : r;
}

}  // namespace

// ---------------------------------------------------------------------------
// reference

namespace reference {

void conv2d(const ConvGeometry& g, std::span<const double> input, std::span<const double> weight,
            std::span<const double> bias, std::span<double> output) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const auto H = static_cast<ptrdiff_t>(g.height), W = static_cast<ptrdiff_t>(g.width);
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t o = 0; o < g.out_channels; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ky = 0; ky < g.kernel; ++ky)
              for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                const ptrdiff_t iy = static_cast<ptrdiff_t>(y * g.stride + ky) - static_cast<ptrdiff_t>(g.padding);
                const ptrdiff_t ix = static_cast<ptrdiff_t>(x * g.stride + kx) - static_cast<ptrdiff_t>(g.padding);
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += input[((n * g.in_channels + c) * g.height + iy) * g.width + ix] *
                       weight[((o * g.in_channels + c) * g.kernel + ky) * g.kernel + kx];
              }
          output[((n * g.out_channels + o) * oh + y) * ow + x] = acc;
        }
}

void conv2d_input_grad(const ConvGeometry& g, std::span<const double> grad_out,
                       std::span<const double> weight, std::span<double> grad_in) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t c = 0; c < g.in_channels; ++c)
      for (std::size_t iy = 0; iy < g.height; ++iy)
        for (std::size_t ix = 0; ix < g.width; ++ix) {
          double acc = 0.0;
          for (std::size_t o = 0; o < g.out_channels; ++o)
            for (std::size_t ky = 0; ky < g.kernel; ++ky)
              for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                // iy = y*stride + ky - padding  =>  y = (iy + padding - ky) / stride
                const ptrdiff_t ny = static_cast<ptrdiff_t>(iy + g.padding) - static_cast<ptrdiff_t>(ky);
                const ptrdiff_t nx = static_cast<ptrdiff_t>(ix + g.padding) - static_cast<ptrdiff_t>(kx);
                if (ny < 0 || nx < 0) continue;
                if (ny % static_cast<ptrdiff_t>(g.stride) != 0 || nx % static_cast<ptrdiff_t>(g.stride) != 0) continue;
                const std::size_t y = static_cast<std::size_t>(ny) / g.stride;
                const std::size_t x = static_cast<std::size_t>(nx) / g.stride;
                if (y >= oh || x >= ow) continue;
                acc += grad_out[((n * g.out_channels + o) * oh + y) * ow + x] *
                       weight[((o * g.in_channels + c) * g.kernel + ky) * g.kernel + kx];
              }
          grad_in[((n * g.in_channels + c) * g.height + iy) * g.width + ix] = acc;
        }
}

void conv2d_weight_grad(const ConvGeometry& g, std::span<const double> input,
                        std::span<const double> grad_out, std::span<double> grad_weight) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const auto H = static_cast<ptrdiff_t>(g.height), W = static_cast<ptrdiff_t>(g.width);
  for (std::size_t o = 0; o < g.out_channels; ++o)
    for (std::size_t c = 0; c < g.in_channels; ++c)
      for (std::size_t ky = 0; ky < g.kernel; ++ky)
        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
          double acc = 0.0;
          for (std::size_t n = 0; n < g.batch; ++n)
            for (std::size_t y = 0; y < oh; ++y)
              for (std::size_t x = 0; x < ow; ++x) {
                const ptrdiff_t iy = static_cast<ptrdiff_t>(y * g.stride + ky) - static_cast<ptrdiff_t>(g.padding);
                const ptrdiff_t ix = static_cast<ptrdiff_t>(x * g.stride + kx) - static_cast<ptrdiff_t>(g.padding);
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += input[((n * g.in_channels + c) * g.height + iy) * g.width + ix] *
                       grad_out[((n * g.out_channels + o) * oh + y) * ow + x];
              }
          grad_weight[((o * g.in_channels + c) * g.kernel + ky) * g.kernel + kx] = acc;
        }
}

void maxpool2d_argmax(const PoolGeometry& g, std::span<const double> input,
                      std::span<std::size_t> argmax) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  for (std::size_t p = 0; p < g.planes; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        std::size_t best = (p * g.height + y * g.stride) * g.width + x * g.stride;
        for (std::size_t ky = 0; ky < g.kernel; ++ky)
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            const std::size_t i = (p * g.height + y * g.stride + ky) * g.width + x * g.stride + kx;
            if (input[i] > input[best]) best = i;
          }
        argmax[(p * oh + y) * ow + x] = best;
      }
}

void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
            std::span<const double> b, std::span<double> c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += a[i * k + t] * b[t * n + j];
      c[i * n + j] = acc;
    }
}

}  // namespace reference

// ---------------------------------------------------------------------------
// omp

namespace omp {

void conv2d(const ConvGeometry& g, std::span<const double> input, std::span<const double> weight,
            std::span<const double> bias, std::span<double> output) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const std::size_t plane_in = g.height * g.width, plane_out = oh * ow;
  const auto N = static_cast<ptrdiff_t>(g.batch), O = static_cast<ptrdiff_t>(g.out_channels);

#pragma omp parallel for collapse(2) schedule(static)
  for (ptrdiff_t n = 0; n < N; ++n)
    for (ptrdiff_t o = 0; o < O; ++o) {
      double* out = output.data() + (n * O + o) * plane_out;
      std::fill(out, out + plane_out, bias.empty() ? 0.0 : bias[o]);
      for (std::size_t c = 0; c < g.in_channels; ++c) {
        const double* in = input.data() + (n * g.in_channels + c) * plane_in;
        const double* wk = weight.data() + (o * g.in_channels + c) * g.kernel * g.kernel;
        for (std::size_t ky = 0; ky < g.kernel; ++ky)
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            const double wv = wk[ky * g.kernel + kx];
            const ColumnRange cols = valid_columns(g.width, ow, kx, g.stride, g.padding);
            const ptrdiff_t shift = static_cast<ptrdiff_t>(kx) - static_cast<ptrdiff_t>(g.padding);
            for (std::size_t y = 0; y < oh; ++y) {
              const ptrdiff_t iy = input_row(y, ky, g);
              if (iy < 0) continue;
              const double* row = in + iy * g.width;
              double* orow = out + y * ow;
              if (g.stride == 1) {
                const double* src = row + (static_cast<ptrdiff_t>(cols.lo) + shift);
                double* dst = orow + cols.lo;
                for (std::size_t x = 0; x < cols.hi - cols.lo; ++x) dst[x] += wv * src[x];
              } else {
                for (std::size_t x = cols.lo; x < cols.hi; ++x)
                  orow[x] += wv * row[static_cast<ptrdiff_t>(x * g.stride) + shift];
              }
            }
          }
      }
    }
}

void conv2d_input_grad(const ConvGeometry& g, std::span<const double> grad_out,
                       std::span<const double> weight, std::span<double> grad_in) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const std::size_t plane_in = g.height * g.width, plane_out = oh * ow;
  const auto N = static_cast<ptrdiff_t>(g.batch), C = static_cast<ptrdiff_t>(g.in_channels);

#pragma omp parallel for collapse(2) schedule(static)
  for (ptrdiff_t n = 0; n < N; ++n)
    for (ptrdiff_t c = 0; c < C; ++c) {
      double* din = grad_in.data() + (n * C + c) * plane_in;
      std::fill(din, din + plane_in, 0.0);
      for (std::size_t o = 0; o < g.out_channels; ++o) {
        const double* gout = grad_out.data() + (n * g.out_channels + o) * plane_out;
        const double* wk = weight.data() + (o * C + c) * g.kernel * g.kernel;
        for (std::size_t ky = 0; ky < g.kernel; ++ky)
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            const double wv = wk[ky * g.kernel + kx];
            const ColumnRange cols = valid_columns(g.width, ow, kx, g.stride, g.padding);
            const ptrdiff_t shift = static_cast<ptrdiff_t>(kx) - static_cast<ptrdiff_t>(g.padding);
            for (std::size_t y = 0; y < oh; ++y) {
              const ptrdiff_t iy = input_row(y, ky, g);
              if (iy < 0) continue;
              double* row = din + iy * g.width;
              const double* grow = gout + y * ow;
              if (g.stride == 1) {
                double* dst = row + (static_cast<ptrdiff_t>(cols.lo) + shift);
                const double* src = grow + cols.lo;
                for (std::size_t x = 0; x < cols.hi - cols.lo; ++x) dst[x] += wv * src[x];
              } else {
                for (std::size_t x = cols.lo; x < cols.hi; ++x)
                  row[static_cast<ptrdiff_t>(x * g.stride) + shift] += wv * grow[x];
              }
            }
          }
      }
    }
}

void conv2d_weight_grad(const ConvGeometry& g, std::span<const double> input,
                        std::span<const double> grad_out, std::span<double> grad_weight) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const std::size_t plane_in = g.height * g.width, plane_out = oh * ow;
  const auto O = static_cast<ptrdiff_t>(g.out_channels), C = static_cast<ptrdiff_t>(g.in_channels);

#pragma omp parallel for collapse(2) schedule(static)
  for (ptrdiff_t o = 0; o < O; ++o)
    for (ptrdiff_t c = 0; c < C; ++c) {
      // Per-column partial sums keep the inner loop free of a scalar reduction.
      std::vector<double> lanes(ow);
      for (std::size_t ky = 0; ky < g.kernel; ++ky)
        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
          std::fill(lanes.begin(), lanes.end(), 0.0);
          const ColumnRange cols = valid_columns(g.width, ow, kx, g.stride, g.padding);
          const ptrdiff_t shift = static_cast<ptrdiff_t>(kx) - static_cast<ptrdiff_t>(g.padding);
          for (std::size_t n = 0; n < g.batch; ++n) {
            const double* in = input.data() + (n * C + c) * plane_in;
            const double* gout = grad_out.data() + (n * O + o) * plane_out;
            for (std::size_t y = 0; y < oh; ++y) {
              const ptrdiff_t iy = input_row(y, ky, g);
              if (iy < 0) continue;
              const double* row = in + iy * g.width;
              const double* grow = gout + y * ow;
              if (g.stride == 1) {
                const double* src = row + (static_cast<ptrdiff_t>(cols.lo) + shift);
                const double* gsrc = grow + cols.lo;
                double* lane = lanes.data() + cols.lo;
                for (std::size_t x = 0; x < cols.hi - cols.lo; ++x) lane[x] += src[x] * gsrc[x];
              } else {
                for (std::size_t x = cols.lo; x < cols.hi; ++x)
                  lanes[x] += row[static_cast<ptrdiff_t>(x * g.stride) + shift] * grow[x];
              }
            }
          }
          double acc = 0.0;
          for (double v : lanes) acc += v;
          grad_weight[((o * C + c) * g.kernel + ky) * g.kernel + kx] = acc;
        }
    }
}

void maxpool2d_argmax(const PoolGeometry& g, std::span<const double> input,
                      std::span<std::size_t> argmax) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const auto P = static_cast<ptrdiff_t>(g.planes);
#pragma omp parallel for schedule(static)
  for (ptrdiff_t p = 0; p < P; ++p) {
    const std::size_t base = static_cast<std::size_t>(p) * g.height * g.width;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        std::size_t best = base + y * g.stride * g.width + x * g.stride;
        double best_value = input[best];
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
          const std::size_t row = base + (y * g.stride + ky) * g.width + x * g.stride;
          for (std::size_t kx = 0; kx < g.kernel; ++kx)
            if (input[row + kx] > best_value) {
              best = row + kx;
              best_value = input[best];
            }
        }
        argmax[(static_cast<std::size_t>(p) * oh + y) * ow + x] = best;
      }
  }
}

void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
            std::span<const double> b, std::span<double> c) {
  const auto M = static_cast<ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (ptrdiff_t i = 0; i < M; ++i) {
    double* crow = c.data() + i * n;
    std::fill(crow, crow + n, 0.0);
    for (std::size_t t = 0; t < k; ++t) {
      const double av = a[i * k + t];
      const double* brow = b.data() + t * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace omp

}  // namespace pal::kernels
