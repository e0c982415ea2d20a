#include <cmath>
#include <cstdint>
#include <limits>
#include <random>

#include "doctest.h"
#include "tinyode/fixed.hpp"

using namespace tinyode;

namespace {

// Nearest raw value by exhaustive search; ties pick the even raw value.
std::int64_t brute_nearest(double x, FixedFormat fmt) {
  std::int64_t best = fmt.min_raw();
  double best_err = std::numeric_limits<double>::infinity();
  for (std::int64_t r = fmt.min_raw(); r <= fmt.max_raw(); ++r) {
    const double err = std::fabs(std::ldexp(static_cast<double>(r), -fmt.frac_bits()) - x);
    if (err < best_err || (err == best_err && (r % 2 == 0))) {
      best = r;
      best_err = err;
    }
  }
  return best;
}

}  // namespace

TEST_CASE("format ranges") {
  CHECK(kWeightFormat.frac_bits() == 12);
  CHECK(kActivationFormat.frac_bits() == 10);
  CHECK(kWeightFormat.max_value() == 8.0 - 1.0 / 4096);
  CHECK(kWeightFormat.min_value() == -8.0);
  CHECK(kActivationFormat.name() == "Q10.10");
  CHECK_THROWS_AS(FixedFormat({16, 0}).validate(), std::invalid_argument);
  CHECK_THROWS_AS(FixedFormat({16, 16}).validate(), std::invalid_argument);
  CHECK_THROWS_AS(FixedFormat({40, 8}).validate(), std::invalid_argument);
}

TEST_CASE("quantize_to_fixed examples") {
  CHECK(quantize_to_fixed(0.0, kWeightFormat).value() == 0.0);
  // 7.99 lies inside the Q4.12 range; its nearest neighbour is 32727 / 4096.
  CHECK(quantize_to_fixed(7.99, kWeightFormat).raw == brute_nearest(7.99, kWeightFormat));
  CHECK(quantize_to_fixed(7.99, kWeightFormat).value() == 7.989990234375);
  CHECK(quantize_to_fixed(7.9999, kWeightFormat).value() == 7.999755859375);
  CHECK(quantize_to_fixed(1e9, kWeightFormat).value() == std::ldexp(1.0, 3) - std::ldexp(1.0, -12));
  CHECK(quantize_to_fixed(-1e9, kWeightFormat).value() == -8.0);
  const auto tenth = quantize_to_fixed(0.1, kActivationFormat);
  CHECK(tenth.raw == brute_nearest(0.1, kActivationFormat));
  CHECK(tenth.value() == 0.099609375);
  CHECK(quantize_to_fixed(std::nan(""), kActivationFormat).raw == 0);
}

TEST_CASE("quantize_to_fixed agrees with exhaustive search on a small format") {
  const FixedFormat q{8, 3};
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> d(-5.0, 5.0);
  for (int i = 0; i < 2000; ++i) {
    const double x = d(rng);
    CHECK(quantize_to_fixed(x, q).raw == brute_nearest(x, q));
  }
  // Exact ties go to the even neighbour.
  CHECK(quantize_to_fixed(1.0 / 64, q).raw == 0);
  CHECK(quantize_to_fixed(3.0 / 64, q).raw == 2);
  CHECK(quantize_to_fixed(-1.0 / 64, q).raw == 0);
}

TEST_CASE("round trip, monotonicity and error bound") {
  for (const FixedFormat fmt : {kWeightFormat, kActivationFormat, FixedFormat{8, 3}}) {
    for (std::int64_t r = fmt.min_raw(); r <= fmt.max_raw(); r += 37) {
      const double v = std::ldexp(static_cast<double>(r), -fmt.frac_bits());
      CHECK(quantize_to_fixed(v, fmt).raw == r);
    }
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> d(fmt.min_value() * 1.2, fmt.max_value() * 1.2);
    for (int i = 0; i < 1000; ++i) {
      double a = d(rng), b = d(rng);
      if (a > b) std::swap(a, b);
      CHECK(quantize_to_fixed(a, fmt).raw <= quantize_to_fixed(b, fmt).raw);
      if (a >= fmt.min_value() && a <= fmt.max_value()) {
        CHECK(std::fabs(quantize_to_fixed(a, fmt).value() - a) <= std::ldexp(1.0, -(fmt.frac_bits() + 1)));
      }
    }
  }
}

TEST_CASE("fixed_mul_acc") {
  const auto one = quantize_to_fixed(1.0, kWeightFormat);
  const auto one_a = quantize_to_fixed(1.0, kActivationFormat);
  Accumulator acc(kWeightFormat.frac_bits() + kActivationFormat.frac_bits());
  CHECK(fixed_mul_acc(acc, one_a, one).to_format(kActivationFormat).value() == 1.0);
  const auto half = quantize_to_fixed(0.5, kActivationFormat);
  const auto quarter = quantize_to_fixed(0.25, kWeightFormat);
  CHECK(fixed_mul_acc(acc, half, quarter).value() == 0.125);

  // 64 * (102/1024)^2 as an exact rational: 64 * 102^2 / 2^20.
  const auto t = quantize_to_fixed(0.1, kActivationFormat);
  Accumulator sum(2 * kActivationFormat.frac_bits());
  for (int i = 0; i < 64; ++i) sum.mac(t, t);
  const std::int64_t numerator = 64 * 102 * 102;
  CHECK(sum.raw() == numerator);
  CHECK(sum.value() == 0.635009765625);
  CHECK(sum.to_format(kActivationFormat).value() == std::ldexp(std::nearbyint(0.635009765625 * 1024), -10));

  CHECK_THROWS_AS(acc.mac(one, one), std::invalid_argument);
}

TEST_CASE("accumulator overflow is a hard error") {
  Accumulator acc(0);
  acc.add_raw(AccumulatorSpec::kMax);
  CHECK_THROWS_AS(acc.add_raw(1), AccumulatorOverflow);
  Accumulator neg(0);
  neg.add_raw(AccumulatorSpec::kMin);
  CHECK_THROWS_AS(neg.add_raw(-1), AccumulatorOverflow);
}

TEST_CASE("accumulator width covers the widest layer") {
  // 257-input 1x1 conv (plus bias), 20-bit activations times 16-bit weights.
  CHECK(AccumulatorSpec::fits(258, kActivationFormat, kWeightFormat));
  // 3x3 convolution over 128 channels is the largest fan-in in the network.
  CHECK(AccumulatorSpec::fits(128 * 9 + 1, kActivationFormat, kWeightFormat));
  CHECK_FALSE(AccumulatorSpec::fits(std::uint64_t{1} << 20, kActivationFormat, kWeightFormat));
}

TEST_CASE("shift rounding helpers") {
  CHECK(shift_round_even(std::int64_t{3}, 1) == 2);   // 1.5 -> 2
  CHECK(shift_round_even(std::int64_t{5}, 1) == 2);   // 2.5 -> 2
  CHECK(shift_round_even(std::int64_t{-3}, 1) == -2);
  CHECK(shift_round_even(std::int64_t{-5}, 1) == -2);
  CHECK(shift_round_even(std::int64_t{3}, -2) == 12);
  CHECK(shift_round_away(static_cast<__int128>(5), 1) == 3);
  CHECK(shift_round_away(static_cast<__int128>(-5), 1) == -3);
  CHECK(requantize_raw(std::int64_t{1} << 40, 22, kActivationFormat) == kActivationFormat.max_raw());
}

TEST_CASE("requantizer matches exact scaling for dyadic factors") {
  const Requantizer r(2.25);
  for (std::int64_t v = -5000; v <= 5000; v += 7) {
    const double exact = static_cast<double>(v) * 2.25;
    CHECK(r.apply_away(v) == static_cast<std::int64_t>(std::round(exact)));
  }
  const Requantizer third(1.0 / 3.0);
  CHECK(third.apply_even(300) == 100);
  CHECK(Requantizer(0.0).apply_even(12345) == 0);
}
