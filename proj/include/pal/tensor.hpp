#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pal {

using Shape = std::vector<std::size_t>;
using Buffer = std::vector<double>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tape;

/// Dense row-major array of doubles. Storage is immutable and shared between
/// copies; every operation produces a new tensor. A tensor that carries a tape
/// pointer is "tracked": it is the value of one node on that tape.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, Buffer values);
  Tensor(Shape shape, std::shared_ptr<const Buffer> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::initializer_list<double> values);

  bool defined() const { return data_ != nullptr; }
  bool tracked() const { return tape_ != nullptr; }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_ ? data_->size() : 0; }

  std::span<const double> values() const { return {data_->data(), data_->size()}; }
  const std::shared_ptr<const Buffer>& buffer() const { return data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  /// Value of a single-element tensor.
  double item() const;

  Tape* tape() const { return tape_; }
  std::size_t node() const { return node_; }

  /// Same values, no tape association.
  Tensor detach() const { return Tensor(shape_, data_); }

 private:
  friend class Tape;

  Shape shape_;
  std::shared_ptr<const Buffer> data_;
  Tape* tape_ = nullptr;
  std::size_t node_ = 0;
};

}  // namespace pal
