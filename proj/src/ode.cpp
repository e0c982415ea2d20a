#include "tinyode/ode.hpp"

namespace tinyode {

double euler_update(double z, double f, double h) { return z + h * f; }

FloatTensor euler_update(const FloatTensor& z, const FloatTensor& f, double h) {
  if (z.shape() != f.shape()) {
    throw ShapeError("ODE right-hand side returned " + shape_string(f.shape()) + " for state " +
                     shape_string(z.shape()));
  }
  FloatTensor out(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] + h * f[i];
  return out;
}

FixedTensor euler_update(const FixedTensor& z, const FixedTensor& f, const FixedScalar& h) {
  if (z.shape() != f.shape()) {
    throw ShapeError("ODE right-hand side returned " + shape_string(f.shape()) + " for state " +
                     shape_string(z.shape()));
  }
  if (z.format != f.format) throw std::invalid_argument("ODE state and derivative formats differ");
  const int hf = h.format.frac_bits();
  const int acc_frac = z.format.frac_bits() + hf;
  FixedTensor out{BasicTensor<std::int32_t>(z.shape()), z.format};
  for (std::size_t i = 0; i < z.size(); ++i) {
    const std::int64_t acc = static_cast<std::int64_t>(z.raw[i]) * (std::int64_t{1} << hf) +
                             static_cast<std::int64_t>(f.raw[i]) * h.raw;
    out.raw[i] = static_cast<std::int32_t>(requantize_raw(acc, acc_frac, z.format));
  }
  return out;
}

}  // namespace tinyode
