#include "tinyode/layers.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "tinyode/detail/conv_core.hpp"
#include "tinyode/parallel.hpp"

namespace tinyode {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

void require_chw(const Shape& s, const char* op) {
  require(s.size() == 3, std::string(op) + " expects [C,H,W], got " + shape_string(s));
}

// num / den rounded to nearest, ties to even (den > 0).
std::int64_t div_round_even(__int128 num, __int128 den) {
  __int128 q = num / den;
  __int128 r = num - q * den;
  if (r < 0) {  // floor
    --q;
    r += den;
  }
  const __int128 twice = 2 * r;
  if (twice > den || (twice == den && (q & 1) != 0)) ++q;
  return static_cast<std::int64_t>(q);
}

}  // namespace

void ConvGeometry::validate() const {
  require(in_ch > 0 && out_ch > 0, "convolution needs non-zero channel counts");
  require(kernel > 0 && stride > 0, "convolution needs non-zero kernel and stride");
  require(!depthwise || in_ch == out_ch, "depth-wise convolution needs in_ch == out_ch");
}

void ConvGeometry::check_input(const Shape& x) const {
  require_chw(x, "conv2d");
  require(x[0] == in_ch, "conv2d expects " + std::to_string(in_ch) + " input channels, got " + shape_string(x));
  require(x[1] + 2 * padding >= kernel && x[2] + 2 * padding >= kernel, "conv2d input smaller than kernel");
}

void ConvSpec::validate() const {
  geometry.validate();
  require(weight.shape() == geometry.weight_shape(), "conv weight shape " + shape_string(weight.shape()) +
                                                         " does not match " + shape_string(geometry.weight_shape()));
  if (bias) require(bias->shape() == Shape{geometry.out_ch}, "conv bias must be [out_ch]");
}

FixedConvSpec FixedConvSpec::from_float(const ConvSpec& spec, FixedFormat fmt) {
  spec.validate();
  FixedConvSpec out{spec.geometry, FixedTensor::from_float(spec.weight, fmt), std::nullopt};
  if (spec.bias) out.bias = FixedTensor::from_float(*spec.bias, fmt);
  return out;
}

FloatTensor conv2d(const FloatTensor& x, const ConvSpec& spec) {
  spec.validate();
  const ConvGeometry& g = spec.geometry;
  g.check_input(x.shape());
  const std::size_t h = x.dim(1), w = x.dim(2), oh = g.out_size(h), ow = g.out_size(w);
  FloatTensor out({g.out_ch, oh, ow});
  detail::conv_planes<double, double>(g, h, w, x.data(), spec.weight.data(),
                                      [&](std::size_t oc, std::span<const double> plane) {
                                        const double b = spec.bias ? (*spec.bias)[oc] : 0.0;
                                        double* dst = out.data().data() + oc * oh * ow;
                                        for (std::size_t i = 0; i < plane.size(); ++i) dst[i] = plane[i] + b;
                                      });
  return out;
}

FixedTensor conv2d(const FixedTensor& x, const FixedConvSpec& spec, FixedFormat out_format) {
  const ConvGeometry& g = spec.geometry;
  g.validate();
  g.check_input(x.shape());
  require(spec.weight.shape() == g.weight_shape(), "fixed conv weight shape mismatch");
  out_format.validate();
  const std::size_t h = x.shape()[1], w = x.shape()[2], oh = g.out_size(h), ow = g.out_size(w);
  const int acc_frac = x.format.frac_bits() + spec.weight.format.frac_bits();
  FixedTensor out{BasicTensor<std::int32_t>({g.out_ch, oh, ow}), out_format};
  auto finish = [&](std::size_t oc, auto plane) {
    std::int64_t b = 0;
    if (spec.bias) b = spec.bias->raw[oc] * (std::int64_t{1} << (acc_frac - spec.bias->format.frac_bits()));
    std::int32_t* dst = out.raw.data().data() + oc * oh * ow;
    for (std::size_t i = 0; i < plane.size(); ++i) {
      dst[i] = static_cast<std::int32_t>(requantize_raw(detail::acc_value(plane[i]) + b, acc_frac, out_format));
    }
  };
  if (AccumulatorSpec::fits(g.fan_in() + 1, x.format, spec.weight.format)) {
    detail::conv_planes<std::int64_t, std::int64_t>(g, h, w, x.raw.data(), spec.weight.raw.data(), finish);
  } else {
    detail::conv_planes<std::int64_t, detail::CheckedAcc>(g, h, w, x.raw.data(), spec.weight.raw.data(), finish);
  }
  return out;
}

ConvSpec DscSpec::depthwise_spec() const {
  const std::size_t c = in_ch();
  return ConvSpec{ConvGeometry{c, c, 3, 1, 1, true}, depthwise, std::nullopt};
}

ConvSpec DscSpec::pointwise_spec() const {
  return ConvSpec{ConvGeometry{in_ch(), out_ch(), 1, 1, 0, false}, pointwise, std::nullopt};
}

std::size_t DscSpec::parameter_count() const { return dsc_parameter_count(in_ch(), out_ch()); }

std::size_t dsc_parameter_count(std::size_t in_ch, std::size_t out_ch, std::size_t kernel) {
  return in_ch * kernel * kernel + out_ch * in_ch;
}

FloatTensor dsc(const FloatTensor& x, const DscSpec& spec) {
  require(spec.depthwise.rank() == 4 && spec.pointwise.rank() == 4, "dsc weights must be rank 4");
  require(spec.pointwise.dim(1) == spec.in_ch(), "dsc point-wise input channels must match depth-wise channels");
  return conv2d(conv2d(x, spec.depthwise_spec()), spec.pointwise_spec());
}

FixedNormParams FixedNormParams::from_float(const NormParams& p, FixedFormat fmt) {
  return {FixedTensor::from_float(p.scale, fmt), FixedTensor::from_float(p.shift, fmt)};
}

NormParams batchnorm_fold(std::span<const double> gamma, std::span<const double> beta, std::span<const double> mean,
                          std::span<const double> var, double eps) {
  const std::size_t c = gamma.size();
  require(beta.size() == c && mean.size() == c && var.size() == c, "batchnorm_fold: vector lengths differ");
  NormParams p{FloatTensor({c}), FloatTensor({c})};
  for (std::size_t i = 0; i < c; ++i) {
    if (var[i] < 0) throw std::invalid_argument("batchnorm_fold: negative variance");
    p.scale[i] = gamma[i] / std::sqrt(var[i] + eps);
    p.shift[i] = beta[i] - mean[i] * p.scale[i];
  }
  return p;
}

FloatTensor batchnorm(const FloatTensor& x, const NormParams& p) {
  require_chw(x.shape(), "batchnorm");
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  require(p.scale.size() == c && p.shift.size() == c, "batchnorm parameter count does not match channels");
  FloatTensor out(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < plane; ++i) out[ch * plane + i] = p.scale[ch] * x[ch * plane + i] + p.shift[ch];
  return out;
}

FixedTensor batchnorm(const FixedTensor& x, const FixedNormParams& p) {
  require_chw(x.shape(), "batchnorm");
  const std::size_t c = x.shape()[0], plane = x.shape()[1] * x.shape()[2];
  require(p.scale.size() == c && p.shift.size() == c, "batchnorm parameter count does not match channels");
  const int acc_frac = x.format.frac_bits() + p.scale.format.frac_bits();
  const int shift_up = acc_frac - p.shift.format.frac_bits();
  FixedTensor out{BasicTensor<std::int32_t>(x.shape()), x.format};
  for (std::size_t ch = 0; ch < c; ++ch) {
    const std::int64_t s = p.scale.raw[ch];
    const std::int64_t b = static_cast<std::int64_t>(p.shift.raw[ch]) * (std::int64_t{1} << shift_up);
    for (std::size_t i = 0; i < plane; ++i) {
      const std::int64_t v = x.raw[ch * plane + i] * s + b;
      out.raw[ch * plane + i] = static_cast<std::int32_t>(requantize_raw(v, acc_frac, x.format));
    }
  }
  return out;
}

FloatTensor relu(const FloatTensor& x) {
  FloatTensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

FixedTensor relu(const FixedTensor& x) {
  FixedTensor out{BasicTensor<std::int32_t>(x.shape()), x.format};
  for (std::size_t i = 0; i < x.size(); ++i) out.raw[i] = x.raw[i] > 0 ? x.raw[i] : 0;
  return out;
}

namespace {

template <class T>
BasicTensor<T> maxpool_impl(const BasicTensor<T>& x, T lowest) {
  require_chw(x.shape(), "maxpool3x3s2");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const ConvGeometry g{c, c, 3, 2, 1, true};
  const std::size_t oh = g.out_size(h), ow = g.out_size(w);
  BasicTensor<T> out({c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T best = lowest;
        for (std::size_t ky = 0; ky < 3; ++ky) {
          const long long iy = static_cast<long long>(oy * 2 + ky) - 1;
          if (iy < 0 || iy >= static_cast<long long>(h)) continue;
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const long long ix = static_cast<long long>(ox * 2 + kx) - 1;
            if (ix < 0 || ix >= static_cast<long long>(w)) continue;
            best = std::max(best, x.at(ch, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)));
          }
        }
        out.at(ch, oy, ox) = best;
      }
    }
  }
  return out;
}

}  // namespace

FloatTensor maxpool3x3s2(const FloatTensor& x) { return maxpool_impl(x, -std::numeric_limits<double>::infinity()); }

FixedTensor maxpool3x3s2(const FixedTensor& x) {
  return {maxpool_impl(x.raw, std::numeric_limits<std::int32_t>::min()), x.format};
}

FloatTensor avgpool_global(const FloatTensor& x) {
  require_chw(x.shape(), "avgpool_global");
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  FloatTensor out({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += x[ch * plane + i];
    out[ch] = s / static_cast<double>(plane);
  }
  return out;
}

FloatTensor linear(const FloatTensor& x, const FloatTensor& weight, const std::optional<FloatTensor>& bias) {
  require(weight.rank() == 2, "linear weight must be [O, D]");
  const std::size_t o = weight.dim(0), d = weight.dim(1);
  if (bias) require(bias->shape() == Shape{o}, "linear bias must be [O]");
  const bool vector_input = x.rank() == 1;
  require(vector_input || x.rank() == 2, "linear input must be [D] or [N, D]");
  const std::size_t n = vector_input ? 1 : x.dim(0);
  require((vector_input ? x.dim(0) : x.dim(1)) == d, "linear input width does not match weight");
  FloatTensor out(vector_input ? Shape{o} : Shape{n, o});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < o; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) acc += x[r * d + k] * weight[j * d + k];
      out[r * o + j] = acc + (bias ? (*bias)[j] : 0.0);
    }
  }
  return out;
}

namespace {

template <class T>
BasicTensor<T> add_plane(const BasicTensor<T>& x, T value) {
  require_chw(x.shape(), "add_time");
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  BasicTensor<T> out({c + 1, x.dim(1), x.dim(2)});
  std::copy(x.data().begin(), x.data().end(), out.data().begin());
  std::fill(out.data().begin() + static_cast<std::ptrdiff_t>(c * plane), out.data().end(), value);
  return out;
}

}  // namespace

FloatTensor add_time(const FloatTensor& x, double t) { return add_plane(x, t); }

FixedTensor add_time(const FixedTensor& x, double t) {
  return {add_plane(x.raw, static_cast<std::int32_t>(quantize_to_fixed(t, x.format).raw)), x.format};
}

FloatTensor layernorm(const FloatTensor& x, const NormParams& p, double eps) {
  require(x.rank() == 2, "layernorm expects [N, D]");
  require(p.scale.shape() == x.shape() && p.shift.shape() == x.shape(),
          "layernorm parameters must be per element " + shape_string(x.shape()));
  const std::size_t n = x.dim(0), d = x.dim(1);
  FloatTensor out(x.shape());
  for (std::size_t r = 0; r < n; ++r) {
    double mean = 0.0;
    for (std::size_t k = 0; k < d; ++k) mean += x[r * d + k];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t k = 0; k < d; ++k) var += (x[r * d + k] - mean) * (x[r * d + k] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t k = 0; k < d; ++k) {
      const std::size_t i = r * d + k;
      out[i] = (x[i] - mean) * inv * p.scale[i] + p.shift[i];
    }
  }
  return out;
}

FixedTensor layernorm(const FixedTensor& x, const FixedNormParams& p, double eps) {
  require(x.shape().size() == 2, "layernorm expects [N, D]");
  require(p.scale.shape() == x.shape() && p.shift.shape() == x.shape(),
          "layernorm parameters must be per element " + shape_string(x.shape()));
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  const int f = x.format.frac_bits();
  const int inv_frac = kInvStdFormat.frac_bits();
  const int acc_frac = f + p.scale.format.frac_bits();
  const int shift_up = acc_frac - p.shift.format.frac_bits();
  const auto dd = static_cast<std::int64_t>(d);
  FixedTensor out{BasicTensor<std::int32_t>(x.shape()), x.format};
  std::vector<std::int64_t> centered(d);
  for (std::size_t r = 0; r < n; ++r) {
    std::int64_t sum = 0;
    for (std::size_t k = 0; k < d; ++k) sum += x.raw[r * d + k];
    // centered[k] = (x_k - mean) * d, exact in units of 2^-f.
    __int128 sq = 0;
    for (std::size_t k = 0; k < d; ++k) {
      centered[k] = x.raw[r * d + k] * dd - sum;
      sq += static_cast<__int128>(centered[k]) * centered[k];
    }
    const double var = std::ldexp(static_cast<double>(sq), -2 * f) / (static_cast<double>(d) * d * d);
    const std::int64_t inv_raw = quantize_to_fixed(1.0 / std::sqrt(var + eps), kInvStdFormat).raw;
    for (std::size_t k = 0; k < d; ++k) {
      const std::size_t i = r * d + k;
      const __int128 num = static_cast<__int128>(centered[k]) * inv_raw;
      const std::int64_t normed = saturate(div_round_even(num, static_cast<__int128>(dd) << inv_frac), x.format);
      const std::int64_t v = normed * p.scale.raw[i] + static_cast<std::int64_t>(p.shift.raw[i]) * (std::int64_t{1} << shift_up);
      out.raw[i] = static_cast<std::int32_t>(requantize_raw(v, acc_frac, x.format));
    }
  }
  return out;
}

FloatTensor matmul(const FloatTensor& a, const FloatTensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          "matmul shape mismatch " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  FloatTensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += a[i * k + t] * b[t * m + j];
      out[i * m + j] = acc;
    }
  }
  return out;
}

FloatTensor matmul_transposed(const FloatTensor& a, const FloatTensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1),
          "matmul_transposed shape mismatch " + shape_string(a.shape()) + " x " + shape_string(b.shape()) + "^T");
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(0);
  FloatTensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += a[i * k + t] * b[j * k + t];
      out[i * m + j] = acc;
    }
  }
  return out;
}

FixedTensor matmul(const FixedTensor& a, const FixedTensor& b, FixedFormat out_format) {
  require(a.shape().size() == 2 && b.shape().size() == 2 && a.shape()[1] == b.shape()[0],
          "matmul shape mismatch " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  const int acc_frac = a.format.frac_bits() + b.format.frac_bits();
  const bool safe = AccumulatorSpec::fits(k, a.format, b.format);
  FixedTensor out{BasicTensor<std::int32_t>({n, m}), out_format};
  parallel_for(n, [&](std::size_t i) {
    for (std::size_t j = 0; j < m; ++j) {
      std::int64_t v = 0;
      if (safe) {
        for (std::size_t t = 0; t < k; ++t) v += static_cast<std::int64_t>(a.raw[i * k + t]) * b.raw[t * m + j];
      } else {
        Accumulator acc(acc_frac);
        for (std::size_t t = 0; t < k; ++t) acc.add_raw(static_cast<std::int64_t>(a.raw[i * k + t]) * b.raw[t * m + j]);
        v = acc.raw();
      }
      out.raw[i * m + j] = static_cast<std::int32_t>(requantize_raw(v, acc_frac, out_format));
    }
  });
  return out;
}

FloatTensor add(const FloatTensor& a, const FloatTensor& b) {
  require(a.shape() == b.shape(), "add shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  FloatTensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

FixedTensor add(const FixedTensor& a, const FixedTensor& b) {
  require(a.shape() == b.shape(), "add shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  require(a.format == b.format, "add needs operands in the same fixed-point format");
  FixedTensor out{BasicTensor<std::int32_t>(a.shape()), a.format};
  for (std::size_t i = 0; i < a.size(); ++i) {
    out.raw[i] = static_cast<std::int32_t>(saturate(static_cast<std::int64_t>(a.raw[i]) + b.raw[i], a.format));
  }
  return out;
}

}  // namespace tinyode
