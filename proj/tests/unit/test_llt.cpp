#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "tinyode/llt.hpp"

using namespace tinyode;

namespace {

// Sum of the 2^n step functions evaluated directly from the thresholds.
double step_sum(double a_hat, const std::vector<double>& thresholds, int bits) {
  double v = 0.0;
  for (double t : thresholds)
    if (a_hat >= t) v += std::ldexp(1.0, -bits);
  return v;
}

std::vector<int> random_switches(int bits, int k, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(1, k);
  std::vector<int> p(static_cast<std::size_t>(1 << bits));
  for (int i = 0; i < (1 << bits); ++i) p[static_cast<std::size_t>(i)] = i * k + d(rng);
  return p;
}

}  // namespace

TEST_CASE("clip_scale") {
  CHECK(clip_scale(0.5, 1.0, QuantKind::kActivation) == 0.5);
  CHECK(clip_scale(3.0, 2.0, QuantKind::kActivation) == 1.0);
  CHECK(clip_scale(-5.0, 2.0, QuantKind::kWeight) == -1.0);
  CHECK(clip_scale(-5.0, 2.0, QuantKind::kActivation) == 0.0);
  CHECK_THROWS_AS(clip_scale(1.0, 0.0, QuantKind::kWeight), std::invalid_argument);
  CHECK_THROWS_AS(clip_scale(1.0, -1.0, QuantKind::kWeight), std::invalid_argument);
}

TEST_CASE("build_ilut small example") {
  const double t[] = {1.0 / 4, 4.0 / 4};
  const auto q = build_ilut(t, 1, 2);
  CHECK(q.table() == std::vector<double>{0.0, 0.5, 0.5, 0.5});
  CHECK(q.thresholds() == std::vector<double>{0.25, 1.0});
  const double off_grid[] = {0.3, 1.0};
  CHECK_THROWS_AS(build_ilut(off_grid, 1, 2), LutInvariantError);
  const double outside[] = {0.0, 1.0};  // T_0 below its admissible range
  CHECK_THROWS_AS(build_ilut(outside, 1, 2), LutInvariantError);
  const double too_few[] = {0.25};
  CHECK_THROWS_AS(build_ilut(too_few, 1, 2), LutInvariantError);
}

TEST_CASE("lut_lookup examples") {
  const auto q2 = LutQuantizer::canonical(2, 9, 1.0, QuantKind::kActivation);
  CHECK(q2.size() == 36);
  CHECK(lut_lookup(0.0, q2) == 0.0);
  CHECK(q2.index(1.0) == 35);
  CHECK(lut_lookup(1.0, q2) == 1.0);
  const auto q8 = LutQuantizer::canonical(8, 9, 2.0, QuantKind::kActivation);
  CHECK(q8.size() == 2304);
  CHECK(q8.index(1.0) == 2303);
  CHECK(q8.index(-0.3) == 0);
  CHECK(lut_lookup(1.0, q8) == 2.0);
  // Ties round away from zero.
  CHECK(q2.index(0.5 / 36) == 1);
}

TEST_CASE("canonical tables reproduce uniform rounding on the grid") {
  for (int bits : {1, 2, 4, 8}) {
    const auto q = LutQuantizer::canonical(bits, 9, 1.0, QuantKind::kActivation);
    const int levels = 1 << bits;
    const std::size_t g = q.size();
    for (std::size_t idx = 0; idx < g; ++idx) {
      const double a_hat = static_cast<double>(idx) / static_cast<double>(g);
      const double uniform = std::floor(a_hat * levels + 0.5) / levels;
      REQUIRE(lut_lookup(a_hat, q) == uniform);
    }
  }
}

TEST_CASE("table invariants and monotonicity over random thresholds") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const int bits = 1 + trial % 8;
    const auto p = random_switches(bits, 9, rng);
    const auto q = LutQuantizer::from_switch_indices(p, bits, 9, 1.0, QuantKind::kActivation);
    CHECK(q.switch_indices() == p);
    const auto t = q.table();
    CHECK(std::is_sorted(t.begin(), t.end()));
    for (double v : t) {
      const double scaled = std::ldexp(v, bits);
      REQUIRE(scaled == std::floor(scaled));
      REQUIRE(scaled >= 0);
      REQUIRE(scaled <= (1 << bits));
    }
    const auto rebuilt = LutQuantizer::from_table(t, bits, 9, 1.0, QuantKind::kActivation);
    CHECK(rebuilt.switch_indices() == p);
  }
}

TEST_CASE("lookup equals direct step-function evaluation") {
  std::mt19937_64 rng(22);
  for (int bits : {1, 2, 4, 8}) {
    const auto q = LutQuantizer::from_switch_indices(random_switches(bits, 9, rng), bits, 9, 1.0,
                                                     QuantKind::kActivation);
    const auto th = q.thresholds();
    for (std::size_t idx = 0; idx < q.size(); ++idx) {
      const double a_hat = static_cast<double>(idx) / static_cast<double>(q.size());
      REQUIRE(lut_lookup(a_hat, q) == step_sum(a_hat, th, bits));
    }
  }
}

TEST_CASE("from_table rejects corrupted tables") {
  const auto q = LutQuantizer::canonical(2, 9, 1.0, QuantKind::kActivation);
  auto t = q.table();
  auto bad = t;
  bad[5] = 0.0;  // moving a switch point keeps the table valid
  CHECK(LutQuantizer::from_table(bad, 2, 9, 1.0, QuantKind::kActivation).switch_indices()[0] == 6);
  bad[3] = 0.25;  // high entry before a low one in segment 0
  CHECK_THROWS_AS(LutQuantizer::from_table(bad, 2, 9, 1.0, QuantKind::kActivation), LutInvariantError);
  bad = t;
  bad[10] = 0.0;  // level 0 inside segment 1
  CHECK_THROWS_AS(LutQuantizer::from_table(bad, 2, 9, 1.0, QuantKind::kActivation), LutInvariantError);
  bad = t;
  bad[0] = 0.3;  // off the level grid
  CHECK_THROWS_AS(LutQuantizer::from_table(bad, 2, 9, 1.0, QuantKind::kActivation), LutInvariantError);
  bad = t;
  for (int j = 0; j < 9; ++j) bad[static_cast<std::size_t>(9 + j)] = 0.5;  // segment 1 has no low entry
  CHECK_THROWS_AS(LutQuantizer::from_table(bad, 2, 9, 1.0, QuantKind::kActivation), LutInvariantError);
  t.pop_back();
  CHECK_THROWS_AS(LutQuantizer::from_table(t, 2, 9, 1.0, QuantKind::kActivation), LutInvariantError);
}

TEST_CASE("quantize_weights") {
  for (int bits : {4, 8}) {
    const double s = 0.75;
    const auto q = LutQuantizer::canonical(bits, 9, s, QuantKind::kWeight);
    const int limit = (1 << (bits - 1)) - 1;
    CHECK(quantize_weights(FloatTensor({1}, 0.0), q).codes[0] == 0);
    CHECK(quantize_weights(FloatTensor({1}, s), q).codes[0] == limit);
    CHECK(quantize_weights(FloatTensor({1}, -s), q).codes[0] == -limit);

    const std::size_t n = 4001;
    FloatTensor sweep({n});
    for (std::size_t i = 0; i < n; ++i) sweep[i] = -s + 2 * s * static_cast<double>(i) / (n - 1);
    const auto codes = quantize_weights(sweep, q);
    CHECK(codes.step == s / (1 << (bits - 1)));
    const auto deq = codes.dequantize();
    double worst = 0;
    for (std::size_t i = 0; i < n; ++i) {
      REQUIRE(codes.codes[i] >= -limit);
      REQUIRE(codes.codes[i] <= limit);
      REQUIRE(std::fabs(deq[i]) <= s);
      worst = std::max(worst, std::fabs(deq[i] - sweep[i]));
    }
    CHECK(worst <= s / (1 << (bits - 1)));
  }
  const auto act = LutQuantizer::canonical(4, 9, 1.0, QuantKind::kActivation);
  CHECK_THROWS_AS(quantize_weights(FloatTensor({1}), act), std::invalid_argument);
}

TEST_CASE("fixed activation index matches the float index") {
  for (double s : {1.0, 0.5, 4.0}) {
    for (int bits : {4, 8}) {
      const auto q = LutQuantizer::canonical(bits, 9, s, QuantKind::kActivation);
      const FixedActivationQuantizer fq(q, kActivationFormat);
      for (std::int32_t raw = -3000; raw < 6000; ++raw) {
        const double a = std::ldexp(static_cast<double>(raw), -10);
        REQUIRE(fq.level(raw) == q.activation_level(a));
      }
    }
  }
}

TEST_CASE("fake quantisation lands on the level grid") {
  const auto q = LutQuantizer::canonical(4, 9, 2.0, QuantKind::kActivation);
  FloatTensor a({50});
  for (std::size_t i = 0; i < 50; ++i) a[i] = -1.0 + 0.07 * static_cast<double>(i);
  const auto y = fake_quantize_activations(a, q);
  for (double v : y.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 2.0);
    CHECK(v * 8 == std::floor(v * 8));
  }
}

TEST_CASE("quantization budget") {
  CHECK(memory_reduction(8, 16448) == doctest::Approx(3.507).epsilon(1e-3));
  CHECK(memory_reduction(4, 16448) == doctest::Approx(7.923).epsilon(1e-3));
  CHECK(memory_reduction(8, 10'000'000) == doctest::Approx(4.0).epsilon(0.01));
  CHECK(memory_reduction(4, 10'000'000) == doctest::Approx(8.0).epsilon(0.01));

  // 32 * (2^n * 9 + 2) < (32 - n) * N_p
  CHECK(lut_overhead_bits(8, 9, LutStorage::kWordEntries) == 32.0 * 2306);
  CHECK(min_effective_params(8, 9) == 3075);
  CHECK(min_effective_params(4, 9) == 167);
  CHECK_FALSE(quant_budget(8, 9, 3074).effective);
  CHECK(quant_budget(8, 9, 3075).effective);
  // n bits per entry plus two 32-bit scales.
  CHECK(lut_overhead_bits(8, 9, LutStorage::kNBitEntries) == 8.0 * 2304 + 64);
  CHECK(min_effective_params(8, 9, LutStorage::kNBitEntries) == 771);
  CHECK(min_effective_params(4, 9, LutStorage::kNBitEntries) == 23);

  for (long long np : {16448LL, 73728LL, 8192LL, 294912LL}) {
    for (int n : {4, 8}) {
      const auto b = quant_budget(n, 9, np);
      if (b.effective) CHECK(b.reduction > 1.0);
    }
  }
}
