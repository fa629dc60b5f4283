#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sharpen_focus/error.hpp"

namespace sharpen_focus::ad {

using Shape = std::vector<std::size_t>;
using NodeId = std::int64_t;
inline constexpr NodeId kNoNode = -1;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Row-major strides for `shape`.
inline std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

class Tape;

// Dense row-major 64-bit tensor. Element storage is immutable and shared, so
// copies are cheap. A tensor carrying a node handle is a value recorded on a
// Tape; a tensor without one is a constant and never receives gradients.
class Tensor {
 public:
  Tensor() : Tensor(Shape{}, std::vector<double>{0.0}) {}

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)),
        data_(std::make_shared<const std::vector<double>>(std::move(data))) {
    if (numel(shape_) != data_->size()) {
      throw ShapeError("tensor shape " + to_string(shape_) + " holds " +
                       std::to_string(numel(shape_)) + " elements, got " +
                       std::to_string(data_->size()));
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }
  static Tensor full(Shape shape, double v) {
    const std::size_t n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }
  static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_->size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<const double> data() const { return *data_; }
  const std::vector<double>& vec() const { return *data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }

  double item() const {
    if (size() != 1) {
      throw ShapeError("item() on tensor of shape " + to_string(shape_));
    }
    return (*data_)[0];
  }

  bool is_constant() const { return tape_ == nullptr; }
  bool has_node() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  NodeId node() const { return node_; }

  Tensor detach() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = kNoNode;
    return t;
  }

  // Same storage viewed under a different shape. Constant only; use
  // ad::reshape for the differentiable version.
  Tensor with_shape(Shape shape) const {
    if (numel(shape) != size()) {
      throw ShapeError("cannot view " + to_string(shape_) + " as " +
                       to_string(shape));
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

 private:
  friend class Tape;

  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  Tape* tape_ = nullptr;
  NodeId node_ = kNoNode;
};

}  // namespace sharpen_focus::ad
