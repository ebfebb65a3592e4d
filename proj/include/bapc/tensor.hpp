#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bapc {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != 0) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// Dense row-major tensor. Every op in this codebase works on rank-1 or
// rank-2 tensors; a rank-1 tensor of n values behaves as a 1 x n row.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)), values_(shape_size(shape_), T(0)) {}

  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (shape_size(shape_) != values_.size()) {
      throw std::invalid_argument("tensor shape " + shape_string(shape_) + " does not match " +
                                  std::to_string(values_.size()) + " values");
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols) { return Tensor(Shape{rows, cols}); }
  static Tensor vector(std::size_t n) { return Tensor(Shape{n}); }
  static Tensor scalar(T value) { return Tensor(Shape{1, 1}, {value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  std::size_t rows() const { return shape_.size() >= 2 ? shape_[0] : (shape_.empty() ? 0 : 1); }
  std::size_t cols() const { return shape_.size() >= 2 ? shape_[1] : (shape_.empty() ? 0 : shape_[0]); }

  T& operator()(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  std::span<T> row(std::size_t r) { return {values_.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const { return {values_.data() + r * cols(), cols()}; }

  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  std::vector<T>& storage() { return values_; }
  const std::vector<T>& storage() const { return values_; }

  void fill(T value) { std::fill(values_.begin(), values_.end(), value); }

  bool same_shape(const Tensor& other) const { return rows() == other.rows() && cols() == other.cols(); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(values_.size());
    std::transform(values_.begin(), values_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  Shape shape_;
  std::vector<T> values_;
};

// A trainable tensor together with its accumulated gradient.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() {
    if (grad.shape() != value.shape()) {
      grad = Tensor<T>(value.shape());
    } else {
      grad.fill(T(0));
    }
  }
};

}  // namespace bapc
