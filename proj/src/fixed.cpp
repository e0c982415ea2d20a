#include "tinyode/fixed.hpp"

#include <cmath>
#include <limits>

namespace tinyode {

double FixedFormat::resolution() const { return std::ldexp(1.0, -frac_bits()); }

double FixedFormat::max_value() const { return std::ldexp(static_cast<double>(max_raw()), -frac_bits()); }

double FixedFormat::min_value() const { return std::ldexp(static_cast<double>(min_raw()), -frac_bits()); }

bool FixedFormat::valid() const {
  return total_bits >= 4 && total_bits <= 32 && integer_bits > 0 && integer_bits < total_bits;
}

void FixedFormat::validate() const {
  if (!valid()) {
    throw std::invalid_argument("invalid fixed-point format: total_bits=" + std::to_string(total_bits) +
                                " integer_bits=" + std::to_string(integer_bits));
  }
}

std::string FixedFormat::name() const {
  return "Q" + std::to_string(integer_bits) + "." + std::to_string(frac_bits());
}

double FixedScalar::value() const { return std::ldexp(static_cast<double>(raw), -format.frac_bits()); }

std::int64_t saturate(std::int64_t raw, FixedFormat fmt) {
  if (raw > fmt.max_raw()) return fmt.max_raw();
  if (raw < fmt.min_raw()) return fmt.min_raw();
  return raw;
}

FixedScalar quantize_to_fixed(double x, FixedFormat fmt) {
  fmt.validate();
  if (std::isnan(x)) return {0, fmt};
  // Scaling by a power of two is exact, so nearbyint (ties-to-even under the
  // default rounding mode) is the only rounding step.
  const double scaled = std::ldexp(x, fmt.frac_bits());
  if (scaled >= static_cast<double>(fmt.max_raw())) return {fmt.max_raw(), fmt};
  if (scaled <= static_cast<double>(fmt.min_raw())) return {fmt.min_raw(), fmt};
  return {static_cast<std::int64_t>(std::nearbyint(scaled)), fmt};
}

std::int64_t shift_round_even(__int128 v, int shift) {
  if (shift <= 0) return static_cast<std::int64_t>(v * (static_cast<__int128>(1) << -shift));
  const __int128 one = 1;
  __int128 q = v >> shift;  // floor
  const __int128 r = v - (q << shift);
  const __int128 half = one << (shift - 1);
  if (r > half || (r == half && (q & 1) != 0)) ++q;
  return static_cast<std::int64_t>(q);
}

std::int64_t shift_round_even(std::int64_t v, int shift) { return shift_round_even(static_cast<__int128>(v), shift); }

std::int64_t shift_round_away(__int128 v, int shift) {
  if (shift <= 0) return static_cast<std::int64_t>(v * (static_cast<__int128>(1) << -shift));
  const __int128 half = static_cast<__int128>(1) << (shift - 1);
  if (v >= 0) return static_cast<std::int64_t>((v + half) >> shift);
  return -static_cast<std::int64_t>((-v + half) >> shift);
}

std::int64_t requantize_raw(std::int64_t raw, int frac_bits, FixedFormat fmt) {
  return saturate(shift_round_even(raw, frac_bits - fmt.frac_bits()), fmt);
}

bool AccumulatorSpec::fits(std::uint64_t terms, std::uint64_t a_max, std::uint64_t b_max) {
  const unsigned __int128 bound = static_cast<unsigned __int128>(terms) * a_max * b_max;
  return bound <= static_cast<unsigned __int128>(kMax);
}

bool AccumulatorSpec::fits(std::uint64_t terms, FixedFormat a, FixedFormat b) {
  return fits(terms, static_cast<std::uint64_t>(-a.min_raw()), static_cast<std::uint64_t>(-b.min_raw()));
}

double Accumulator::value() const { return std::ldexp(static_cast<double>(raw_), -frac_bits_); }

void Accumulator::add_raw(std::int64_t term) {
  std::int64_t next = 0;
  if (__builtin_add_overflow(raw_, term, &next) || next > AccumulatorSpec::kMax || next < AccumulatorSpec::kMin) {
    throw AccumulatorOverflow("fixed-point accumulator exceeded " + std::to_string(AccumulatorSpec::kWidthBits) +
                              " bits");
  }
  raw_ = next;
}

void Accumulator::mac(const FixedScalar& a, const FixedScalar& b) {
  if (a.format.frac_bits() + b.format.frac_bits() != frac_bits_) {
    throw std::invalid_argument("accumulator fraction bits do not match operand formats");
  }
  add_raw(a.raw * b.raw);
}

FixedScalar Accumulator::to_format(FixedFormat fmt) const { return {requantize_raw(raw_, frac_bits_, fmt), fmt}; }

Accumulator fixed_mul_acc(Accumulator acc, const FixedScalar& a, const FixedScalar& b) {
  acc.mac(a, b);
  return acc;
}

Requantizer::Requantizer(double factor) : factor_(factor) {
  if (!std::isfinite(factor)) throw std::invalid_argument("requantizer factor must be finite");
  if (factor == 0.0) {
    multiplier_ = 0;
    shift_ = 0;
    return;
  }
  int exponent = 0;
  const double mantissa = std::frexp(std::fabs(factor), &exponent);  // [0.5, 1)
  std::int64_t m = static_cast<std::int64_t>(std::llround(std::ldexp(mantissa, 31)));
  int shift = 31 - exponent;
  if (m == (std::int64_t{1} << 31)) {
    m >>= 1;
    --shift;
  }
  multiplier_ = factor < 0 ? -m : m;
  shift_ = shift;
}

std::int64_t Requantizer::apply_even(std::int64_t v) const {
  return shift_round_even(static_cast<__int128>(v) * multiplier_, shift_);
}

std::int64_t Requantizer::apply_away(std::int64_t v) const {
  return shift_round_away(static_cast<__int128>(v) * multiplier_, shift_);
}

}  // namespace tinyode
