#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "tinyode/attention.hpp"
#include "tinyode/parallel.hpp"

using namespace tinyode;

namespace {

AttentionSpec random_spec(std::size_t d, std::size_t heads, std::mt19937_64& rng, AttentionActivation act) {
  const double a = 1.0 / std::sqrt(static_cast<double>(d));
  return {heads, oracle::random_tensor({d, d}, rng, -a, a), oracle::random_tensor({d, d}, rng, -a, a),
          oracle::random_tensor({d, d}, rng, -a, a), act};
}

std::vector<RelPosEncoding> random_rel(std::size_t h, std::size_t w, std::size_t dh, std::size_t heads,
                                       std::mt19937_64& rng, double amp = 0.5) {
  std::vector<RelPosEncoding> out;
  for (std::size_t i = 0; i < heads; ++i)
    out.push_back({oracle::random_tensor({h, dh}, rng, -amp, amp), oracle::random_tensor({w, dh}, rng, -amp, amp)});
  return out;
}

std::vector<RelPosEncoding> zero_rel(std::size_t h, std::size_t w, std::size_t dh, std::size_t heads) {
  return std::vector<RelPosEncoding>(heads, RelPosEncoding{FloatTensor({h, dh}), FloatTensor({w, dh})});
}

// Loop-level single head, written independently of the library helpers.
FloatTensor naive_head(const FloatTensor& x, const AttentionSpec& s, std::size_t head, const RelPosEncoding& rel) {
  const std::size_t n = x.dim(0), d = x.dim(1), dh = d / s.heads, w = rel.width();
  auto proj = [&](const FloatTensor& m, std::size_t i, std::size_t c) {
    double v = 0;
    for (std::size_t t = 0; t < d; ++t) v += x[i * d + t] * m[t * d + head * dh + c];
    return v;
  };
  FloatTensor q({n, dh}), k({n, dh}), v({n, dh});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < dh; ++c) {
      q[i * dh + c] = proj(s.wq, i, c);
      k[i * dh + c] = proj(s.wk, i, c);
      v[i * dh + c] = proj(s.wv, i, c);
    }
  FloatTensor out({n, dh});
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row(n);
    for (std::size_t j = 0; j < n; ++j) {
      double l = 0;
      for (std::size_t c = 0; c < dh; ++c) {
        const double r = rel.rel_h[(j / w) * dh + c] + rel.rel_w[(j % w) * dh + c];
        l += q[i * dh + c] * (k[j * dh + c] + r);
      }
      row[j] = l / std::sqrt(static_cast<double>(dh));
    }
    if (s.activation == AttentionActivation::kSoftmax) {
      double z = 0;
      for (auto& e : row) z += (e = std::exp(e));
      for (auto& e : row) e /= z;
    } else {
      for (auto& e : row) e = std::max(e, 0.0);
    }
    for (std::size_t c = 0; c < dh; ++c)
      for (std::size_t j = 0; j < n; ++j) out[i * dh + c] += row[j] * v[j * dh + c];
  }
  return out;
}

FloatTensor permute_rows(const FloatTensor& x, const std::vector<std::size_t>& perm) {
  FloatTensor out(x.shape());
  const std::size_t d = x.dim(1);
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t c = 0; c < d; ++c) out[i * d + c] = x[perm[i] * d + c];
  return out;
}

}  // namespace

TEST_CASE("hand-computed relu attention") {
  const FloatTensor q({2, 1}, std::vector<double>{1, -1});
  const FloatTensor k({2, 1}, std::vector<double>{1, 2});
  const FloatTensor v({2, 1}, std::vector<double>{3, 5});
  const auto a = attention_matrix(q, k, FloatTensor({2, 2}), AttentionActivation::kRelu);
  CHECK(a.values() == std::vector<double>{1, 2, 0, 0});
  CHECK(matmul(a, v).values() == std::vector<double>{13, 0});
}

TEST_CASE("relative logits") {
  const RelPosEncoding rel{FloatTensor({2, 1}, std::vector<double>{1, 2}),
                           FloatTensor({2, 1}, std::vector<double>{10, 20})};
  const auto l = build_relative_logits(FloatTensor({4, 1}, 1.0), rel);
  for (std::size_t r = 0; r < 4; ++r) {
    CHECK(l.at(r, 0) == 11);
    CHECK(l.at(r, 1) == 21);
    CHECK(l.at(r, 2) == 12);
    CHECK(l.at(r, 3) == 22);
  }
  std::mt19937_64 rng(1);
  CHECK(max_abs(build_relative_logits(oracle::random_tensor({4, 1}, rng), RelPosEncoding{FloatTensor({2, 1}),
                                                                                         FloatTensor({2, 1})})) == 0);
  CHECK(max_abs(build_relative_logits(FloatTensor({4, 1}), rel)) == 0);
  CHECK_THROWS_AS(build_relative_logits(FloatTensor({3, 1}), rel), ShapeError);
}

TEST_CASE("zero query") {
  std::mt19937_64 rng(2);
  auto spec = random_spec(8, 2, rng, AttentionActivation::kRelu);
  spec.wq = FloatTensor({8, 8});
  const auto x = oracle::random_tensor({6, 8}, rng);
  const auto rel = random_rel(2, 3, 4, 2, rng);
  CHECK(max_abs(self_attention_head(x, spec, 0, rel[0])) == 0.0);

  spec.activation = AttentionActivation::kSoftmax;
  const auto zr = zero_rel(2, 3, 4, 2);
  const auto out = self_attention_head(x, spec, 1, zr[1]);
  const auto v = matmul(x, head_slice(spec.wv, 1, 4));
  for (std::size_t c = 0; c < 4; ++c) {
    double mean = 0;
    for (std::size_t j = 0; j < 6; ++j) mean += v.at(j, c) / 6;
    for (std::size_t i = 0; i < 6; ++i) CHECK(out.at(i, c) == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("head matches a loop-level oracle") {
  std::mt19937_64 rng(3);
  for (auto act : {AttentionActivation::kRelu, AttentionActivation::kSoftmax}) {
    const auto spec = random_spec(12, 3, rng, act);
    const auto rel = random_rel(2, 4, 4, 3, rng);
    const auto x = oracle::random_tensor({8, 12}, rng);
    for (std::size_t h = 0; h < 3; ++h)
      CHECK(max_abs_diff(self_attention_head(x, spec, h, rel[h]), naive_head(x, spec, h, rel[h])) < 1e-12);
  }
}

TEST_CASE("attention matrix properties") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto q = oracle::random_tensor({9, 4}, rng, -2, 2);
    const auto k = oracle::random_tensor({9, 4}, rng, -2, 2);
    const auto r = oracle::random_tensor({9, 9}, rng, -2, 2);
    const auto a = attention_matrix(q, k, r, AttentionActivation::kRelu);
    for (double v : a.data()) REQUIRE(v >= 0.0);
    const auto s = attention_matrix(q, k, r, AttentionActivation::kSoftmax);
    for (std::size_t i = 0; i < 9; ++i) {
      double sum = 0;
      for (std::size_t j = 0; j < 9; ++j) sum += s.at(i, j);
      CHECK(std::fabs(sum - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("mhsa shape, single head and concatenation") {
  std::mt19937_64 rng(5);
  const auto spec = random_spec(64, 4, rng, AttentionActivation::kRelu);
  const auto rel = random_rel(6, 6, 16, 4, rng);
  const auto x = oracle::random_tensor({36, 64}, rng);
  const NormParams ln{FloatTensor({36, 64}, 1.0), FloatTensor({36, 64})};
  CHECK(mhsa(x, spec, rel, ln).shape() == Shape{36, 64});

  const auto one = random_spec(8, 1, rng, AttentionActivation::kRelu);
  const auto rel1 = random_rel(2, 2, 8, 1, rng);
  const auto x1 = oracle::random_tensor({4, 8}, rng);
  const NormParams ln1{oracle::random_tensor({4, 8}, rng), oracle::random_tensor({4, 8}, rng)};
  CHECK(mhsa(x1, one, rel1, ln1) == layernorm(self_attention_head(x1, one, 0, rel1[0]), ln1));

  // Head i equals attention on columns i*Dh..(i+1)*Dh of the full-width projections.
  const auto full = multi_head_attention(x, spec, rel);
  const auto qf = matmul(x, spec.wq), kf = matmul(x, spec.wk), vf = matmul(x, spec.wv);
  for (std::size_t h = 0; h < 4; ++h) {
    const auto cols = [&](const FloatTensor& m) {
      FloatTensor out({36, 16});
      for (std::size_t i = 0; i < 36; ++i)
        for (std::size_t c = 0; c < 16; ++c) out[i * 16 + c] = m.at(i, h * 16 + c);
      return out;
    };
    const auto q = cols(qf);
    const auto a = attention_matrix(q, cols(kf), build_relative_logits(q, rel[h]), spec.activation);
    CHECK(max_abs_diff(matmul(a, cols(vf)), cols(full)) <= 1e-6);
  }
  CHECK_THROWS_AS(multi_head_attention(x, spec, std::span(rel).first(3)), ShapeError);
  CHECK_THROWS_AS(multi_head_attention(oracle::random_tensor({36, 32}, rng), spec, rel), ShapeError);
}

TEST_CASE("permutation behaviour") {
  std::mt19937_64 rng(6);
  const auto spec = random_spec(16, 4, rng, AttentionActivation::kSoftmax);
  const auto x = oracle::random_tensor({12, 16}, rng);
  std::vector<std::size_t> perm(12);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto zr = zero_rel(3, 4, 4, 4);
  CHECK(max_abs_diff(multi_head_attention(permute_rows(x, perm), spec, zr),
                     permute_rows(multi_head_attention(x, spec, zr), perm)) <= 1e-6);
  const auto rel = random_rel(3, 4, 4, 4, rng, 1.0);
  std::vector<std::size_t> swap(12);
  std::iota(swap.begin(), swap.end(), 0);
  std::swap(swap[0], swap[7]);
  CHECK(max_abs_diff(multi_head_attention(permute_rows(x, swap), spec, rel),
                     permute_rows(multi_head_attention(x, spec, rel), swap)) > 1e-3);
}

TEST_CASE("every input token contributes under softmax") {
  std::mt19937_64 rng(7);
  const auto spec = random_spec(8, 2, rng, AttentionActivation::kSoftmax);
  const auto rel = random_rel(2, 3, 4, 2, rng);
  const auto x = oracle::random_tensor({6, 8}, rng);
  const auto base = multi_head_attention(x, spec, rel);
  for (std::size_t t = 0; t < 6; ++t) {
    FloatTensor z = x;
    for (std::size_t c = 0; c < 8; ++c) z.at(t, c) = 0.0;
    const auto y = multi_head_attention(z, spec, rel);
    for (std::size_t i = 0; i < 6; ++i) {
      double diff = 0;
      for (std::size_t c = 0; c < 8; ++c) diff = std::max(diff, std::fabs(y.at(i, c) - base.at(i, c)));
      CHECK(diff > 0.0);
    }
  }
}

TEST_CASE("fixed attention tracks the float reference") {
  std::mt19937_64 rng(8);
  for (auto act : {AttentionActivation::kRelu, AttentionActivation::kSoftmax}) {
    const auto spec = random_spec(64, 4, rng, act);
    const auto rel = random_rel(6, 6, 16, 4, rng, 0.2);
    const auto x = oracle::random_tensor({36, 64}, rng, 0, 1);
    const auto fspec = FixedAttentionSpec::from_float(spec, rel);
    const auto fx = FixedTensor::from_float(x, kActivationFormat);
    set_thread_count(1);
    const auto fy = multi_head_attention(fx, fspec);
    const auto y = multi_head_attention(x, spec, rel);
    CHECK(max_abs_diff(fy.to_float(), y) <= 0.02 * std::max(1.0, max_abs(y)));
    set_thread_count(4);
    CHECK(multi_head_attention(fx, fspec) == fy);
    set_thread_count(1);
  }
}

TEST_CASE("sinusoidal encoding") {
  const auto pe = sinusoidal_encoding(5, 6);
  CHECK(pe.at(0, 0) == 0.0);
  CHECK(pe.at(0, 1) == 1.0);
  CHECK(pe.at(3, 0) == doctest::Approx(std::sin(3.0)));
  CHECK(pe.at(2, 3) == doctest::Approx(std::cos(2.0 / std::pow(10000.0, 2.0 / 6))));
}
