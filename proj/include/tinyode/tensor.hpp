#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tinyode/fixed.hpp"

namespace tinyode {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Dense row-major tensor. Feature maps are [C, H, W] with the channel
// outermost; token matrices are [N, D].
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{}) : shape_(std::move(shape)), data_(element_count(shape_), fill) {}
  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != element_count(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                       shape_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // [C, H, W] element access.
  T& at(std::size_t c, std::size_t h, std::size_t w) { return data_[(c * shape_[1] + h) * shape_[2] + w]; }
  const T& at(std::size_t c, std::size_t h, std::size_t w) const {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }
  // [N, D] element access.
  T& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  BasicTensor reshaped(Shape shape) const {
    if (element_count(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return BasicTensor(std::move(shape), data_);
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

// Floating-point reference path (binary64 arithmetic).
using FloatTensor = BasicTensor<double>;

// Fixed-point path: raw two's-complement integers in `format`.
struct FixedTensor {
  BasicTensor<std::int32_t> raw;
  FixedFormat format = kActivationFormat;

  const Shape& shape() const { return raw.shape(); }
  std::size_t size() const { return raw.size(); }

  static FixedTensor from_float(const FloatTensor& x, FixedFormat fmt);
  FloatTensor to_float() const;
  // Throws when any element lies outside the format range.
  void check_representable() const;

  friend bool operator==(const FixedTensor&, const FixedTensor&) = default;
};

// Integer path: n-bit codes with value = code * step.
struct IntTensor {
  BasicTensor<std::int32_t> codes;
  int bits = 8;
  double step = 1.0;

  FloatTensor dequantize() const;
};

// Largest absolute element difference; shapes must match.
double max_abs_diff(const FloatTensor& a, const FloatTensor& b);
double max_abs(const FloatTensor& a);

// [C,H,W] feature map <-> [N=H*W, D=C] token matrix.
template <class T>
BasicTensor<T> feature_to_tokens(const BasicTensor<T>& x) {
  if (x.rank() != 3) throw ShapeError("feature_to_tokens expects [C,H,W], got " + shape_string(x.shape()));
  const std::size_t c = x.dim(0), n = x.dim(1) * x.dim(2);
  BasicTensor<T> out({n, c});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < n; ++i) out[i * c + ch] = x[ch * n + i];
  return out;
}

template <class T>
BasicTensor<T> tokens_to_feature(const BasicTensor<T>& x, std::size_t h, std::size_t w) {
  if (x.rank() != 2 || x.dim(0) != h * w) {
    throw ShapeError("tokens_to_feature: " + shape_string(x.shape()) + " is not [" + std::to_string(h * w) + ", D]");
  }
  const std::size_t c = x.dim(1), n = h * w;
  BasicTensor<T> out({c, h, w});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) out[ch * n + i] = x[i * c + ch];
  return out;
}

}  // namespace tinyode
