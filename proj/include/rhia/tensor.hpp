#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rhia/error.hpp"

namespace rhia {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// Dense row-major array with a gradient buffer of the same extent.
//
// Rank-1 tensors are treated as a single row (1 x m) by the matrix primitives,
// so "x^T W + b" on a vector and on a batch of row vectors share one code path.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        values_(shape_size(shape_), T(0)),
        grad_(values_.size(), T(0)) {}

  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != shape_size(shape_)) {
      throw NumericError("tensor: " + std::to_string(values_.size()) +
                         " values do not fill shape " + shape_str(shape_));
    }
    grad_.assign(values_.size(), T(0));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  // Matrix view: rank-1 is one row, rank-2 is (rows x cols).
  std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }

  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  std::span<T> grad() { return grad_; }
  std::span<const T> grad() const { return grad_; }

  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }
  T* grad_data() { return grad_.data(); }
  const T* grad_data() const { return grad_.data(); }

  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }
  T& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  void zero_grad() { std::fill(grad_.begin(), grad_.end(), T(0)); }
  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  // Same values, fresh zero gradient, converted element type.
  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(values_.size());
    std::transform(values_.begin(), values_.end(), out.begin(),
                   [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

 private:
  Shape shape_;
  std::vector<T> values_;
  std::vector<T> grad_;
};

}  // namespace rhia
