#include "pal/tensor.hpp"

#include <functional>
#include <numeric>
#include <sstream>

#include "pal/error.hpp"

namespace pal {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, Buffer values)
    : Tensor(std::move(shape), std::make_shared<const Buffer>(std::move(values))) {}

Tensor::Tensor(Shape shape, std::shared_ptr<const Buffer> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (!data_) throw ShapeError("tensor storage is null");
  if (numel(shape_) != data_->size())
    throw ShapeError("shape " + to_string(shape_) + " does not match " +
                     std::to_string(data_->size()) + " values");
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = numel(shape);
  return Tensor(std::move(shape), Buffer(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, Buffer{value}); }

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, Buffer(values));
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
  return (*data_)[0];
}

}  // namespace pal
