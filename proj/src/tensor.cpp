#include "tinyode/tensor.hpp"

#include <cmath>

namespace tinyode {

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

FixedTensor FixedTensor::from_float(const FloatTensor& x, FixedFormat fmt) {
  fmt.validate();
  BasicTensor<std::int32_t> raw(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) raw[i] = static_cast<std::int32_t>(quantize_to_fixed(x[i], fmt).raw);
  return {std::move(raw), fmt};
}

FloatTensor FixedTensor::to_float() const {
  FloatTensor out(raw.shape());
  const int frac = format.frac_bits();
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = std::ldexp(static_cast<double>(raw[i]), -frac);
  return out;
}

void FixedTensor::check_representable() const {
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] > format.max_raw() || raw[i] < format.min_raw()) {
      throw std::out_of_range("element " + std::to_string(i) + " not representable in " + format.name());
    }
  }
}

FloatTensor IntTensor::dequantize() const {
  FloatTensor out(codes.shape());
  for (std::size_t i = 0; i < codes.size(); ++i) out[i] = codes[i] * step;
  return out;
}

double max_abs_diff(const FloatTensor& a, const FloatTensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

double max_abs(const FloatTensor& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::fabs(v));
  return m;
}

}  // namespace tinyode
