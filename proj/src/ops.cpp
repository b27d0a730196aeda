#include "pal/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

#include "pal/error.hpp"
#include "pal/kernels.hpp"
#include "pal/tape.hpp"

namespace pal::ops {

namespace {

using Grads = std::vector<Tensor>;
using Inputs = std::span<const Tensor>;

void check_finite(const std::string& kind, const Buffer& values) {
  for (double v : values)
    if (!std::isfinite(v)) throw NumericError("non-finite value produced by '" + kind + "'");
}

Tensor apply(std::string kind, std::vector<Tensor> inputs, Shape shape, ForwardFn forward,
             BackwardFn backward) {
  Tape* tape = nullptr;
  for (const Tensor& t : inputs) {
    if (!t.defined()) throw TapeError("undefined input to '" + kind + "'");
    if (!t.tracked()) continue;
    if (tape != nullptr && tape != t.tape())
      throw TapeError("inputs of '" + kind + "' live on different tapes");
    tape = t.tape();
  }
  Buffer values = forward(inputs);
  check_finite(kind, values);
  if (tape == nullptr || !GradMode::enabled()) return Tensor(std::move(shape), std::move(values));
  return tape->record(std::move(kind), std::move(inputs), std::move(shape), std::move(values),
                      std::move(forward), std::move(backward));
}

// Strides of `src` laid over `out` under trailing alignment, 0 on broadcast axes.
std::vector<std::size_t> aligned_strides(const Shape& src, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const std::size_t si = src.size() - 1 - i;
    const std::size_t oi = out.size() - 1 - i;
    if (src[si] != 1) strides[oi] = stride;
    stride *= src[si];
  }
  return strides;
}

// Calls f(out_index, a_index, b_index) for every element of `out` in row-major order.
template <class F>
void for_each_index(const Shape& out, const std::vector<std::size_t>& sa,
                    const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t total = numel(out);
  if (total == 0) return;
  const std::size_t rank = out.size();
  if (rank == 0) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t inner = out[rank - 1], sa_in = sa[rank - 1], sb_in = sb[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < total; i += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(i + j, ia + j * sa_in, ib + j * sb_in);
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

Tensor constant(const Shape& shape, Buffer values) { return Tensor(shape, std::move(values)); }

const char* binary_name(BinaryKind kind) {
  switch (kind) {
    case BinaryKind::add: return "add";
    case BinaryKind::sub: return "sub";
    case BinaryKind::mul: return "mul";
    case BinaryKind::div: return "div";
  }
  return "?";
}

void check_divisor(double d) {
  if (std::abs(d) < 1e-300) throw NumericError("degenerate divisor");
}

Buffer binary_values(BinaryKind kind, const Tensor& a, const Tensor& b, const Shape& out) {
  if (kind == BinaryKind::div)
    for (double d : b.values()) check_divisor(d);
  Buffer r(numel(out));
  const auto av = a.values();
  const auto bv = b.values();
  auto run = [&](auto op) {
    if (a.shape() == b.shape()) {
      for (std::size_t i = 0; i < r.size(); ++i) r[i] = op(av[i], bv[i]);
    } else if (b.size() == 1 && a.shape() == out) {
      const double s = bv[0];
      for (std::size_t i = 0; i < r.size(); ++i) r[i] = op(av[i], s);
    } else {
      for_each_index(out, aligned_strides(a.shape(), out), aligned_strides(b.shape(), out),
                     [&](std::size_t i, std::size_t ia, std::size_t ib) { r[i] = op(av[ia], bv[ib]); });
    }
  };
  switch (kind) {
    case BinaryKind::add: run([](double x, double y) { return x + y; }); break;
    case BinaryKind::sub: run([](double x, double y) { return x - y; }); break;
    case BinaryKind::mul: run([](double x, double y) { return x * y; }); break;
    case BinaryKind::div: run([](double x, double y) { return x / y; }); break;
  }
  return r;
}

Tensor unary(std::string kind, const Tensor& x, double (*fn)(double), BackwardFn backward) {
  return apply(
      std::move(kind), {x}, x.shape(),
      [fn](Inputs in) {
        Buffer r(in[0].size());
        const auto v = in[0].values();
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = fn(v[i]);
        return r;
      },
      std::move(backward));
}

// Elementwise product with a constant mask computed from x.
Tensor mask_like(const Tensor& x, double (*fn)(double)) {
  Buffer m(x.size());
  const auto v = x.values();
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = fn(v[i]);
  return constant(x.shape(), std::move(m));
}

Tensor gather_as(std::string kind, const Tensor& x, Indices index, Shape out_shape) {
  if (index->size() != numel(out_shape))
    throw ShapeError(kind + ": index count does not match output shape");
  const std::size_t n = x.size();
  for (std::size_t i : *index)
    if (i >= n) throw ShapeError(kind + ": index out of range");
  return apply(
      std::move(kind), {x}, out_shape,
      [index](Inputs in) {
        Buffer r(index->size());
        const auto v = in[0].values();
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = v[(*index)[i]];
        return r;
      },
      [index](Inputs in, const Tensor&, const Tensor& g) -> Grads {
        return {scatter_add(g, index, in[0].shape())};
      });
}

kernels::ConvGeometry conv_geometry(const Shape& input, const Shape& weight, std::size_t stride,
                                    std::size_t padding) {
  kernels::ConvGeometry g;
  g.batch = input[0];
  g.in_channels = input[1];
  g.height = input[2];
  g.width = input[3];
  g.out_channels = weight[0];
  g.kernel = weight[2];
  g.stride = stride;
  g.padding = padding;
  return g;
}

void check_conv(const Shape& input, const Shape& weight, std::size_t stride, std::size_t padding) {
  if (input.size() != 4) throw ShapeError("conv2d: input must be NCHW, got " + to_string(input));
  if (weight.size() != 4 || weight[2] != weight[3])
    throw ShapeError("conv2d: weight must be O x I x k x k, got " + to_string(weight));
  if (weight[1] != input[1])
    throw ShapeError("conv2d: channel mismatch, input has " + std::to_string(input[1]) +
                     " channels, weight expects " + std::to_string(weight[1]));
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (weight[2] == 0 || weight[2] > input[2] + 2 * padding || weight[2] > input[3] + 2 * padding)
    throw ShapeError("conv2d: kernel larger than padded input");
}

}  // namespace

// ---------------------------------------------------------------------------
// Broadcasting arithmetic

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1)
      throw ShapeError("shape mismatch: cannot broadcast " + to_string(a) + " with " + to_string(b));
    out[rank - 1 - i] = da == 1 ? db : da;
  }
  return out;
}

Tensor elementwise(BinaryKind kind, const Tensor& a, const Tensor& b) {
  const Shape out = broadcast_shape(a.shape(), b.shape());
  return apply(
      binary_name(kind), {a, b}, out,
      [kind, out](Inputs in) { return binary_values(kind, in[0], in[1], out); },
      [kind](Inputs in, const Tensor& result, const Tensor& g) -> Grads {
        const Tensor& x = in[0];
        const Tensor& y = in[1];
        Tensor gx, gy;
        switch (kind) {
          case BinaryKind::add:
            if (x.tracked()) gx = sum_to(g, x.shape());
            if (y.tracked()) gy = sum_to(g, y.shape());
            break;
          case BinaryKind::sub:
            if (x.tracked()) gx = sum_to(g, x.shape());
            if (y.tracked()) gy = sum_to(neg(g), y.shape());
            break;
          case BinaryKind::mul:
            if (x.tracked()) gx = sum_to(mul(g, y), x.shape());
            if (y.tracked()) gy = sum_to(mul(g, x), y.shape());
            break;
          case BinaryKind::div:
            if (x.tracked()) gx = sum_to(div(g, y), x.shape());
            if (y.tracked()) gy = sum_to(neg(div(mul(g, result), y)), y.shape());
            break;
        }
        return {gx, gy};
      });
}

Tensor elementwise(BinaryKind kind, const Tensor& a, double b) {
  if (kind == BinaryKind::div) check_divisor(b);
  std::string name = std::string(binary_name(kind)) + "_scalar";
  return apply(
      std::move(name), {a}, a.shape(),
      [kind, b](Inputs in) {
        Buffer r(in[0].values().begin(), in[0].values().end());
        switch (kind) {
          case BinaryKind::add: for (double& v : r) v += b; break;
          case BinaryKind::sub: for (double& v : r) v -= b; break;
          case BinaryKind::mul: for (double& v : r) v *= b; break;
          case BinaryKind::div: for (double& v : r) v /= b; break;
        }
        return r;
      },
      [kind, b](Inputs, const Tensor&, const Tensor& g) -> Grads {
        switch (kind) {
          case BinaryKind::mul: return {elementwise(BinaryKind::mul, g, b)};
          case BinaryKind::div: return {elementwise(BinaryKind::div, g, b)};
          default: return {g};
        }
      });
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(BinaryKind::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(BinaryKind::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(BinaryKind::mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return elementwise(BinaryKind::div, a, b); }
Tensor add(const Tensor& a, double b) { return elementwise(BinaryKind::add, a, b); }
Tensor mul(const Tensor& a, double b) { return elementwise(BinaryKind::mul, a, b); }
Tensor neg(const Tensor& a) { return elementwise(BinaryKind::mul, a, -1.0); }

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

namespace {
double relu_fn(double v) { return v > 0.0 ? v : 0.0; }
double step_fn(double v) { return v > 0.0 ? 1.0 : 0.0; }
double abs_fn(double v) { return std::abs(v); }
double sign_fn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }
double exp_fn(double v) { return std::exp(v); }
double log_fn(double v) { return std::log(v); }
double sqrt_fn(double v) { return std::sqrt(v); }
}  // namespace

Tensor relu(const Tensor& x) {
  return unary("relu", x, relu_fn, [](Inputs in, const Tensor&, const Tensor& g) -> Grads {
    return {mul(g, mask_like(in[0], step_fn))};
  });
}

Tensor abs(const Tensor& x) {
  return unary("abs", x, abs_fn, [](Inputs in, const Tensor&, const Tensor& g) -> Grads {
    return {mul(g, mask_like(in[0], sign_fn))};
  });
}

Tensor exp(const Tensor& x) {
  return unary("exp", x, exp_fn, [](Inputs, const Tensor& out, const Tensor& g) -> Grads {
    return {mul(g, out)};
  });
}

Tensor log(const Tensor& x) {
  for (double v : x.values())
    if (v <= 0.0) throw NumericError("log of non-positive value");
  return unary("log", x, log_fn, [](Inputs in, const Tensor&, const Tensor& g) -> Grads {
    return {div(g, in[0])};
  });
}

Tensor sqrt(const Tensor& x) {
  for (double v : x.values())
    if (v < 0.0) throw NumericError("sqrt of negative value");
  return unary("sqrt", x, sqrt_fn, [](Inputs, const Tensor& out, const Tensor& g) -> Grads {
    return {div(g, mul(out, 2.0))};
  });
}

Tensor clamp_min(const Tensor& x, double floor) {
  return apply(
      "clamp_min", {x}, x.shape(),
      [floor](Inputs in) {
        Buffer r(in[0].values().begin(), in[0].values().end());
        for (double& v : r) v = std::max(v, floor);
        return r;
      },
      [floor](Inputs in, const Tensor&, const Tensor& g) -> Grads {
        Buffer m(in[0].size());
        const auto v = in[0].values();
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = v[i] > floor ? 1.0 : 0.0;
        return {mul(g, constant(in[0].shape(), std::move(m)))};
      });
}

// ---------------------------------------------------------------------------
// Shape manipulation and reductions

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size())
    throw ShapeError("reshape: " + to_string(x.shape()) + " to " + to_string(shape));
  if (shape == x.shape()) return x;
  return apply(
      "reshape", {x}, shape,
      [](Inputs in) { return Buffer(in[0].values().begin(), in[0].values().end()); },
      [](Inputs in, const Tensor&, const Tensor& g) -> Grads { return {reshape(g, in[0].shape())}; });
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (broadcast_shape(x.shape(), shape) != shape)
    throw ShapeError("broadcast_to: " + to_string(x.shape()) + " to " + to_string(shape));
  if (x.shape() == shape) return x;
  return apply(
      "broadcast_to", {x}, shape,
      [shape](Inputs in) {
        Buffer r(numel(shape));
        const auto v = in[0].values();
        const std::vector<std::size_t> none(shape.size(), 0);
        for_each_index(shape, aligned_strides(in[0].shape(), shape), none,
                       [&](std::size_t i, std::size_t ia, std::size_t) { r[i] = v[ia]; });
        return r;
      },
      [](Inputs in, const Tensor&, const Tensor& g) -> Grads { return {sum_to(g, in[0].shape())}; });
}

Tensor sum_to(const Tensor& x, const Shape& shape) {
  if (broadcast_shape(shape, x.shape()) != x.shape())
    throw ShapeError("sum_to: " + to_string(x.shape()) + " to " + to_string(shape));
  if (x.shape() == shape) return x;
  return apply(
      "sum_to", {x}, shape,
      [shape](Inputs in) {
        Buffer r(numel(shape), 0.0);
        const auto v = in[0].values();
        const Shape& from = in[0].shape();
        const std::vector<std::size_t> none(from.size(), 0);
        for_each_index(from, aligned_strides(shape, from), none,
                       [&](std::size_t i, std::size_t ia, std::size_t) { r[ia] += v[i]; });
        return r;
      },
      [](Inputs in, const Tensor&, const Tensor& g) -> Grads {
        return {broadcast_to(g, in[0].shape())};
      });
}

Tensor sum(const Tensor& x, const std::vector<std::size_t>& axes, bool keepdim) {
  Shape kept = x.shape();
  for (std::size_t a : axes) {
    if (a >= kept.size()) throw ShapeError("sum: axis out of range for " + to_string(x.shape()));
    kept[a] = 1;
  }
  Tensor r = sum_to(x, kept);
  if (keepdim) return r;
  Shape squeezed;
  for (std::size_t i = 0; i < kept.size(); ++i)
    if (std::find(axes.begin(), axes.end(), i) == axes.end()) squeezed.push_back(kept[i]);
  return reshape(r, squeezed);
}

Tensor mean(const Tensor& x, const std::vector<std::size_t>& axes, bool keepdim) {
  std::size_t count = 1;
  for (std::size_t a : axes) count *= x.shape().at(a);
  if (count == 0) throw ShapeError("mean over an empty axis");
  return mul(sum(x, axes, keepdim), 1.0 / static_cast<double>(count));
}

Tensor sum(const Tensor& x) { return sum_to(x, Shape{}); }

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("transpose: expected 2-D, got " + to_string(x.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  return apply(
      "transpose", {x}, {cols, rows},
      [rows, cols](Inputs in) {
        Buffer r(rows * cols);
        const auto v = in[0].values();
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < cols; ++j) r[j * rows + i] = v[i * cols + j];
        return r;
      },
      [](Inputs, const Tensor&, const Tensor& g) -> Grads { return {transpose(g)}; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  return apply(
      "matmul", {a, b}, {m, n},
      [m, k, n](Inputs in) {
        Buffer r(m * n);
        kernels::omp::matmul(m, k, n, in[0].values(), in[1].values(), r);
        return r;
      },
      [](Inputs in, const Tensor&, const Tensor& g) -> Grads {
        Tensor ga, gb;
        if (in[0].tracked()) ga = matmul(g, transpose(in[1]));
        if (in[1].tracked()) gb = matmul(transpose(in[0]), g);
        return {ga, gb};
      });
}

// ---------------------------------------------------------------------------
// Indexing

Tensor gather(const Tensor& x, Indices index, Shape out_shape) {
  return gather_as("gather", x, std::move(index), std::move(out_shape));
}

Tensor scatter_add(const Tensor& g, Indices index, Shape shape) {
  if (index->size() != g.size()) throw ShapeError("scatter_add: index count does not match input");
  const std::size_t n = numel(shape);
  for (std::size_t i : *index)
    if (i >= n) throw ShapeError("scatter_add: index out of range");
  return apply(
      "scatter_add", {g}, shape,
      [index, n](Inputs in) {
        Buffer r(n, 0.0);
        const auto v = in[0].values();
        for (std::size_t i = 0; i < v.size(); ++i) r[(*index)[i]] += v[i];
        return r;
      },
      [index](Inputs in, const Tensor&, const Tensor& gg) -> Grads {
        return {gather(gg, index, in[0].shape())};
      });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank() || start + length > x.dim(axis) || length == 0)
    throw ShapeError("slice: range out of bounds for " + to_string(x.shape()));
  Shape out = x.shape();
  out[axis] = length;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  auto index = std::make_shared<std::vector<std::size_t>>();
  index->reserve(numel(out));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t a = start; a < start + length; ++a)
      for (std::size_t i = 0; i < inner; ++i) index->push_back((o * x.dim(axis) + a) * inner + i);
  return gather_as("slice", x, std::move(index), std::move(out));
}

Tensor maxpool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  if (x.rank() != 4) throw ShapeError("maxpool2d: expected NCHW, got " + to_string(x.shape()));
  if (kernel == 0 || stride == 0) throw ShapeError("maxpool2d: kernel and stride must be positive");
  if (x.dim(2) < kernel || x.dim(3) < kernel)
    throw ShapeError("maxpool2d: pooling window exceeds spatial extent " + to_string(x.shape()));
  kernels::PoolGeometry g{x.dim(0) * x.dim(1), x.dim(2), x.dim(3), kernel, stride};
  Shape out{x.dim(0), x.dim(1), g.out_height(), g.out_width()};
  auto index = std::make_shared<std::vector<std::size_t>>(numel(out));
  kernels::omp::maxpool2d_argmax(g, x.values(), *index);
  return gather_as("maxpool2d", x, std::move(index), std::move(out));
}

// ---------------------------------------------------------------------------
// Convolution family. The three ops are closed under differentiation:
//   conv(x, w)            -> dx = input_grad(g, w),     dw = weight_grad(x, g)
//   input_grad(g, w)      -> dg = conv(gg, w),          dw = weight_grad(gg, g)
//   weight_grad(x, g)     -> dx = input_grad(g, gg),    dg = conv(x, gg)

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  check_conv(input.shape(), weight.shape(), stride, padding);
  if (bias.defined() && bias.shape() != Shape{weight.dim(0)})
    throw ShapeError("conv2d: bias must have shape [" + std::to_string(weight.dim(0)) + "]");
  const kernels::ConvGeometry geo = conv_geometry(input.shape(), weight.shape(), stride, padding);
  std::vector<Tensor> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return apply(
      "conv2d", std::move(inputs), {geo.batch, geo.out_channels, geo.out_height(), geo.out_width()},
      [geo](Inputs in) {
        Buffer r(geo.output_size());
        kernels::omp::conv2d(geo, in[0].values(), in[1].values(),
                             in.size() > 2 ? in[2].values() : std::span<const double>{}, r);
        return r;
      },
      [geo](Inputs in, const Tensor&, const Tensor& g) -> Grads {
        Grads out(in.size());
        if (in[0].tracked())
          out[0] = conv2d_input_grad(g, in[1], geo.height, geo.width, geo.stride, geo.padding);
        if (in[1].tracked()) out[1] = conv2d_weight_grad(in[0], g, geo.kernel, geo.stride, geo.padding);
        if (in.size() > 2 && in[2].tracked()) out[2] = sum(g, {0, 2, 3});
        return out;
      });
}

Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& weight, std::size_t height,
                         std::size_t width, std::size_t stride, std::size_t padding) {
  if (grad_out.rank() != 4) throw ShapeError("conv2d_input_grad: gradient must be NCHW");
  const Shape in_shape{grad_out.dim(0), weight.shape().at(1), height, width};
  check_conv(in_shape, weight.shape(), stride, padding);
  const kernels::ConvGeometry geo = conv_geometry(in_shape, weight.shape(), stride, padding);
  if (grad_out.shape() != Shape{geo.batch, geo.out_channels, geo.out_height(), geo.out_width()})
    throw ShapeError("conv2d_input_grad: gradient shape " + to_string(grad_out.shape()) +
                     " does not match geometry");
  return apply(
      "conv2d_input_grad", {grad_out, weight}, in_shape,
      [geo](Inputs in) {
        Buffer r(geo.input_size());
        kernels::omp::conv2d_input_grad(geo, in[0].values(), in[1].values(), r);
        return r;
      },
      [geo](Inputs in, const Tensor&, const Tensor& gg) -> Grads {
        Tensor dg, dw;
        if (in[0].tracked()) dg = conv2d(gg, in[1], Tensor(), geo.stride, geo.padding);
        if (in[1].tracked()) dw = conv2d_weight_grad(gg, in[0], geo.kernel, geo.stride, geo.padding);
        return {dg, dw};
      });
}

Tensor conv2d_weight_grad(const Tensor& input, const Tensor& grad_out, std::size_t kernel,
                          std::size_t stride, std::size_t padding) {
  if (input.rank() != 4 || grad_out.rank() != 4)
    throw ShapeError("conv2d_weight_grad: operands must be NCHW");
  const Shape w_shape{grad_out.dim(1), input.dim(1), kernel, kernel};
  check_conv(input.shape(), w_shape, stride, padding);
  const kernels::ConvGeometry geo = conv_geometry(input.shape(), w_shape, stride, padding);
  if (grad_out.shape() != Shape{geo.batch, geo.out_channels, geo.out_height(), geo.out_width()})
    throw ShapeError("conv2d_weight_grad: gradient shape " + to_string(grad_out.shape()) +
                     " does not match geometry");
  return apply(
      "conv2d_weight_grad", {input, grad_out}, w_shape,
      [geo](Inputs in) {
        Buffer r(geo.weight_size());
        kernels::omp::conv2d_weight_grad(geo, in[0].values(), in[1].values(), r);
        return r;
      },
      [geo](Inputs in, const Tensor&, const Tensor& gg) -> Grads {
        Tensor dx, dg;
        if (in[0].tracked()) dx = conv2d_input_grad(in[1], gg, geo.height, geo.width, geo.stride, geo.padding);
        if (in[1].tracked()) dg = conv2d(in[0], gg, Tensor(), geo.stride, geo.padding);
        return {dx, dg};
      });
}

}  // namespace pal::ops
