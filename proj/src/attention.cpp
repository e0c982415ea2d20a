#include "tinyode/attention.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tinyode/parallel.hpp"

namespace tinyode {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

void check_tokens(const Shape& x, std::size_t dim) {
  require(x.size() == 2 && x[1] == dim,
          "attention input must be [N, " + std::to_string(dim) + "], got " + shape_string(x));
}

template <class T>
BasicTensor<T> column_slice(const BasicTensor<T>& w, std::size_t begin, std::size_t width) {
  const std::size_t rows = w.dim(0), cols = w.dim(1);
  require(begin + width <= cols, "column slice out of range");
  BasicTensor<T> out({rows, width});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < width; ++c) out[r * width + c] = w[r * cols + begin + c];
  return out;
}

template <class T>
void place_columns(BasicTensor<T>& dst, const BasicTensor<T>& src, std::size_t begin) {
  const std::size_t rows = src.dim(0), width = src.dim(1), cols = dst.dim(1);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < width; ++c) dst[r * cols + begin + c] = src[r * width + c];
}

void softmax_rows(FloatTensor& a) {
  const std::size_t n = a.dim(0), m = a.dim(1);
  for (std::size_t r = 0; r < n; ++r) {
    double* row = a.data().data() + r * m;
    const double mx = *std::max_element(row, row + m);
    double sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < m; ++j) row[j] /= sum;
  }
}

}  // namespace

void RelPosEncoding::validate() const {
  require(rel_h.rank() == 2 && rel_w.rank() == 2, "relative position tables must be rank 2");
  require(rel_h.dim(1) == rel_w.dim(1), "relative position tables disagree on head dimension");
}

FloatTensor RelPosEncoding::expanded() const {
  validate();
  const std::size_t h = height(), w = width(), d = head_dim();
  FloatTensor r({h * w, d});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t k = 0; k < d; ++k) r[(y * w + x) * d + k] = rel_h[y * d + k] + rel_w[x * d + k];
  return r;
}

void AttentionSpec::validate() const {
  require(heads > 0, "attention needs at least one head");
  require(wq.rank() == 2 && wq.dim(0) == wq.dim(1), "W_q must be square");
  require(wk.shape() == wq.shape() && wv.shape() == wq.shape(), "W_q, W_k, W_v must share one [D, D] shape");
  require(dim() % heads == 0,
          "model dimension " + std::to_string(dim()) + " is not divisible by " + std::to_string(heads) + " heads");
}

FloatTensor head_slice(const FloatTensor& w, std::size_t head, std::size_t head_dim) {
  return column_slice(w, head * head_dim, head_dim);
}

FloatTensor build_relative_logits(const FloatTensor& q, const RelPosEncoding& rel) {
  const FloatTensor r = rel.expanded();
  require(q.rank() == 2 && q.dim(1) == r.dim(1),
          "query " + shape_string(q.shape()) + " does not match position table " + shape_string(r.shape()));
  require(q.dim(0) == r.dim(0), "token count " + std::to_string(q.dim(0)) + " does not match H*W " +
                                    std::to_string(r.dim(0)));
  return matmul_transposed(q, r);
}

FloatTensor attention_matrix(const FloatTensor& q, const FloatTensor& k, const FloatTensor& rel_logits,
                             AttentionActivation activation) {
  require(q.shape() == k.shape(), "query and key shapes differ");
  FloatTensor a = matmul_transposed(q, k);
  require(rel_logits.shape() == a.shape(), "relative logits must be [N, N]");
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = (a[i] + rel_logits[i]) * inv;
  if (activation == AttentionActivation::kSoftmax) {
    softmax_rows(a);
  } else {
    for (auto& v : a.data()) v = v > 0.0 ? v : 0.0;
  }
  return a;
}

FloatTensor self_attention_head(const FloatTensor& x, const AttentionSpec& spec, std::size_t head,
                                const RelPosEncoding& rel) {
  spec.validate();
  check_tokens(x.shape(), spec.dim());
  require(head < spec.heads, "head index out of range");
  const std::size_t dh = spec.head_dim();
  require(rel.head_dim() == dh, "position table head dimension does not match D/k");
  const FloatTensor q = matmul(x, head_slice(spec.wq, head, dh));
  const FloatTensor k = matmul(x, head_slice(spec.wk, head, dh));
  const FloatTensor v = matmul(x, head_slice(spec.wv, head, dh));
  return matmul(attention_matrix(q, k, build_relative_logits(q, rel), spec.activation), v);
}

FloatTensor multi_head_attention(const FloatTensor& x, const AttentionSpec& spec, std::span<const RelPosEncoding> rel) {
  spec.validate();
  require(rel.size() == spec.heads, "need one position table per head");
  FloatTensor out({x.dim(0), spec.dim()});
  for (std::size_t h = 0; h < spec.heads; ++h) place_columns(out, self_attention_head(x, spec, h, rel[h]), h * spec.head_dim());
  return out;
}

FloatTensor mhsa(const FloatTensor& x, const AttentionSpec& spec, std::span<const RelPosEncoding> rel,
                 const NormParams& ln) {
  return layernorm(multi_head_attention(x, spec, rel), ln);
}

FloatTensor sinusoidal_encoding(std::size_t tokens, std::size_t dim) {
  FloatTensor pe({tokens, dim});
  for (std::size_t p = 0; p < tokens; ++p) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, static_cast<double>(i - i % 2) / static_cast<double>(dim));
      const double angle = static_cast<double>(p) / freq;
      pe[p * dim + i] = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

FixedAttentionSpec FixedAttentionSpec::from_float(const AttentionSpec& spec, std::span<const RelPosEncoding> rel) {
  spec.validate();
  require(rel.size() == spec.heads, "need one position table per head");
  FixedAttentionSpec out;
  out.heads = spec.heads;
  out.wq = FixedTensor::from_float(spec.wq, kWeightFormat);
  out.wk = FixedTensor::from_float(spec.wk, kWeightFormat);
  out.wv = FixedTensor::from_float(spec.wv, kWeightFormat);
  out.activation = spec.activation;
  for (const auto& r : rel) {
    require(r.head_dim() == spec.head_dim(), "position table head dimension does not match D/k");
    out.rel.push_back(FixedTensor::from_float(r.expanded(), kWeightFormat));
  }
  return out;
}

FixedTensor self_attention_head(const FixedTensor& x, const FixedAttentionSpec& spec, std::size_t head) {
  check_tokens(x.shape(), spec.dim());
  require(head < spec.heads && head < spec.rel.size(), "head index out of range");
  const std::size_t n = x.shape()[0], dh = spec.head_dim();
  const FixedTensor& r = spec.rel[head];
  require(r.shape() == Shape({n, dh}), "position table " + shape_string(r.shape()) + " does not match [N, Dh]");

  auto slice = [&](const FixedTensor& w) { return FixedTensor{column_slice(w.raw, head * dh, dh), w.format}; };
  const FixedTensor q = matmul(x, slice(spec.wq), x.format);
  const FixedTensor k = matmul(x, slice(spec.wk), x.format);
  const FixedTensor v = matmul(x, slice(spec.wv), x.format);

  const int qk_frac = q.format.frac_bits() + k.format.frac_bits();
  const int qr_frac = q.format.frac_bits() + r.format.frac_bits();
  const int acc_frac = std::max(qk_frac, qr_frac);
  const int qk_up = acc_frac - qk_frac, qr_up = acc_frac - qr_frac;
  // 1/sqrt(Dh) and the move to the activation format in one multiplier.
  const Requantizer scale(std::ldexp(1.0 / std::sqrt(static_cast<double>(dh)),
                                     x.format.frac_bits() - acc_frac));
  const auto key_max = std::max(static_cast<std::uint64_t>(-k.format.min_raw()) << qk_up,
                                 static_cast<std::uint64_t>(-r.format.min_raw()) << qr_up);
  const bool safe = AccumulatorSpec::fits(2 * dh, static_cast<std::uint64_t>(-q.format.min_raw()), key_max);

  FixedTensor a{BasicTensor<std::int32_t>({n, n}), x.format};
  parallel_for(n, [&](std::size_t i) {
    for (std::size_t j = 0; j < n; ++j) {
      std::int64_t acc = 0;
      if (safe) {
        for (std::size_t t = 0; t < dh; ++t) acc += std::int64_t{q.raw[i * dh + t]} * k.raw[j * dh + t] << qk_up;
        for (std::size_t t = 0; t < dh; ++t) acc += std::int64_t{q.raw[i * dh + t]} * r.raw[j * dh + t] << qr_up;
      } else {
        Accumulator wide(acc_frac);
        for (std::size_t t = 0; t < dh; ++t) wide.add_raw(std::int64_t{q.raw[i * dh + t]} * k.raw[j * dh + t] << qk_up);
        for (std::size_t t = 0; t < dh; ++t) wide.add_raw(std::int64_t{q.raw[i * dh + t]} * r.raw[j * dh + t] << qr_up);
        acc = wide.raw();
      }
      a.raw[i * n + j] = static_cast<std::int32_t>(saturate(scale.apply_even(acc), x.format));
    }
  });

  if (spec.activation == AttentionActivation::kSoftmax) {
    FloatTensor p = a.to_float();
    softmax_rows(p);
    a = FixedTensor::from_float(p, x.format);
  } else {
    for (auto& e : a.raw.data()) e = e > 0 ? e : 0;
  }
  return matmul(a, v, x.format);
}

FixedTensor multi_head_attention(const FixedTensor& x, const FixedAttentionSpec& spec) {
  check_tokens(x.shape(), spec.dim());
  FixedTensor out{BasicTensor<std::int32_t>({x.shape()[0], spec.dim()}), x.format};
  for (std::size_t h = 0; h < spec.heads; ++h) place_columns(out.raw, self_attention_head(x, spec, h).raw, h * spec.head_dim());
  return out;
}

FixedTensor mhsa(const FixedTensor& x, const FixedAttentionSpec& spec, const FixedNormParams& ln) {
  return layernorm(multi_head_attention(x, spec), ln);
}

}  // namespace tinyode
