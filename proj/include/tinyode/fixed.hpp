#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tinyode {

// Two's-complement Qm.n format: `integer_bits` includes the sign bit.
// Rounding is round-nearest-even, overflow saturates.
struct FixedFormat {
  int total_bits = 16;
  int integer_bits = 4;

  constexpr int frac_bits() const { return total_bits - integer_bits; }
  constexpr std::int64_t max_raw() const { return (std::int64_t{1} << (total_bits - 1)) - 1; }
  constexpr std::int64_t min_raw() const { return -(std::int64_t{1} << (total_bits - 1)); }

  double resolution() const;
  double max_value() const;
  double min_value() const;
  bool valid() const;
  // Throws std::invalid_argument when the format is outside 4..32 bits or
  // has no integer/fraction split.
  void validate() const;
  std::string name() const;  // "Q4.12"

  friend constexpr bool operator==(const FixedFormat&, const FixedFormat&) = default;
};

inline constexpr FixedFormat kWeightFormat{16, 4};       // on-chip weights
inline constexpr FixedFormat kActivationFormat{20, 10};  // feature maps
inline constexpr FixedFormat kStepFormat{16, 2};         // Euler step h
inline constexpr FixedFormat kInvStdFormat{32, 12};      // LayerNorm 1/sigma

struct FixedScalar {
  std::int64_t raw = 0;
  FixedFormat format = kWeightFormat;

  double value() const;
};

// Nearest representable value (ties to even); saturates out of range, NaN maps to 0.
FixedScalar quantize_to_fixed(double x, FixedFormat fmt);

// Saturating re-interpretation of an integer raw value with `frac_bits`
// fractional bits into `fmt` (single round-nearest-even step).
std::int64_t requantize_raw(std::int64_t raw, int frac_bits, FixedFormat fmt);

// v / 2^shift rounded to nearest, ties to even. Negative shifts multiply.
std::int64_t shift_round_even(std::int64_t v, int shift);
std::int64_t shift_round_even(__int128 v, int shift);

// v / 2^shift rounded to nearest, ties away from zero.
std::int64_t shift_round_away(__int128 v, int shift);

std::int64_t saturate(std::int64_t raw, FixedFormat fmt);

class AccumulatorOverflow : public std::overflow_error {
 public:
  using std::overflow_error::overflow_error;
};

// Wide accumulator used for every dot product of the fixed datapath.
// Terms are added in caller order; the only rounding happens in to_format().
struct AccumulatorSpec {
  static constexpr int kWidthBits = 48;
  static constexpr std::int64_t kMax = (std::int64_t{1} << (kWidthBits - 1)) - 1;
  static constexpr std::int64_t kMin = -(std::int64_t{1} << (kWidthBits - 1));

  // True when `terms` products of values bounded by |a| <= a_max and
  // |b| <= b_max can never leave the accumulator range.
  static bool fits(std::uint64_t terms, std::uint64_t a_max, std::uint64_t b_max);
  static bool fits(std::uint64_t terms, FixedFormat a, FixedFormat b);
};

class Accumulator {
 public:
  explicit Accumulator(int frac_bits) : frac_bits_(frac_bits) {}

  int frac_bits() const { return frac_bits_; }
  std::int64_t raw() const { return raw_; }
  double value() const;

  // Adds a raw term already expressed with frac_bits() fractional bits.
  void add_raw(std::int64_t term);
  // Exact product; a.frac + b.frac must equal frac_bits().
  void mac(const FixedScalar& a, const FixedScalar& b);

  FixedScalar to_format(FixedFormat fmt) const;

 private:
  int frac_bits_;
  std::int64_t raw_ = 0;
};

Accumulator fixed_mul_acc(Accumulator acc, const FixedScalar& a, const FixedScalar& b);

// Multiplies integers by a real constant with a fixed-point multiplier:
// out = round(v * multiplier / 2^shift).
class Requantizer {
 public:
  Requantizer() = default;
  explicit Requantizer(double factor);

  double factor() const { return factor_; }
  std::int64_t apply_even(std::int64_t v) const;
  std::int64_t apply_away(std::int64_t v) const;

 private:
  double factor_ = 1.0;
  std::int64_t multiplier_ = 1;
  int shift_ = 0;
};

}  // namespace tinyode
