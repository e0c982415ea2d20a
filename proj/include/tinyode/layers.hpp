#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "tinyode/fixed.hpp"
#include "tinyode/tensor.hpp"

namespace tinyode {

struct ConvGeometry {
  std::size_t in_ch = 0;
  std::size_t out_ch = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool depthwise = false;  // one filter per input channel, out_ch == in_ch

  std::size_t out_size(std::size_t in) const { return (in + 2 * padding - kernel) / stride + 1; }
  std::size_t fan_in() const { return (depthwise ? 1 : in_ch) * kernel * kernel; }
  std::size_t weight_count() const { return out_ch * fan_in(); }
  Shape weight_shape() const { return {out_ch, depthwise ? 1 : in_ch, kernel, kernel}; }
  void validate() const;
  // Throws ShapeError unless x is [in_ch, H, W] with H, W large enough.
  void check_input(const Shape& x) const;
};

struct ConvSpec {
  ConvGeometry geometry;
  FloatTensor weight;  // [out_ch, in_ch or 1, k, k]
  std::optional<FloatTensor> bias;

  void validate() const;
};

struct FixedConvSpec {
  ConvGeometry geometry;
  FixedTensor weight;  // kWeightFormat
  std::optional<FixedTensor> bias;

  static FixedConvSpec from_float(const ConvSpec& spec, FixedFormat fmt = kWeightFormat);
};

// Zero-padded cross-correlation. Each output element is reduced over
// (input channel, kernel row, kernel column) in ascending order.
FloatTensor conv2d(const FloatTensor& x, const ConvSpec& spec);
FixedTensor conv2d(const FixedTensor& x, const FixedConvSpec& spec, FixedFormat out_format = kActivationFormat);

// Depth-wise 3x3 (pad 1, stride 1) followed by a point-wise 1x1 convolution.
struct DscSpec {
  FloatTensor depthwise;  // [in_ch, 1, 3, 3]
  FloatTensor pointwise;  // [out_ch, in_ch, 1, 1]

  std::size_t in_ch() const { return depthwise.dim(0); }
  std::size_t out_ch() const { return pointwise.dim(0); }
  ConvSpec depthwise_spec() const;
  ConvSpec pointwise_spec() const;
  // in_ch*9 + out_ch*in_ch
  std::size_t parameter_count() const;
};

std::size_t dsc_parameter_count(std::size_t in_ch, std::size_t out_ch, std::size_t kernel = 3);

FloatTensor dsc(const FloatTensor& x, const DscSpec& spec);

// Folded normalisation y = scale * x + shift. BatchNorm holds one pair per
// channel, LayerNorm one pair per feature element.
struct NormParams {
  FloatTensor scale;
  FloatTensor shift;
};

struct FixedNormParams {
  FixedTensor scale;  // kWeightFormat
  FixedTensor shift;  // kWeightFormat

  static FixedNormParams from_float(const NormParams& p, FixedFormat fmt = kWeightFormat);
};

NormParams batchnorm_fold(std::span<const double> gamma, std::span<const double> beta, std::span<const double> mean,
                          std::span<const double> var, double eps);

FloatTensor batchnorm(const FloatTensor& x, const NormParams& p);
FixedTensor batchnorm(const FixedTensor& x, const FixedNormParams& p);

FloatTensor relu(const FloatTensor& x);
FixedTensor relu(const FixedTensor& x);

// 3x3 window, stride 2, pad 1 (padding never wins the max).
FloatTensor maxpool3x3s2(const FloatTensor& x);
FixedTensor maxpool3x3s2(const FixedTensor& x);

// [C,H,W] -> [C]
FloatTensor avgpool_global(const FloatTensor& x);

// x: [D] or [N, D]; weight: [O, D]; bias: [O] (optional). Returns x * W^T + b.
FloatTensor linear(const FloatTensor& x, const FloatTensor& weight, const std::optional<FloatTensor>& bias = {});

// Appends a constant plane holding t as the last channel: [C,H,W] -> [C+1,H,W].
FloatTensor add_time(const FloatTensor& x, double t);
FixedTensor add_time(const FixedTensor& x, double t);

inline constexpr double kLayerNormEps = 1e-5;

// Normalises each row of [N, D] over D, then applies per-element scale/shift [N, D].
FloatTensor layernorm(const FloatTensor& x, const NormParams& p, double eps = kLayerNormEps);
FixedTensor layernorm(const FixedTensor& x, const FixedNormParams& p, double eps = kLayerNormEps);

// [N, K] x [K, M] -> [N, M]
FloatTensor matmul(const FloatTensor& a, const FloatTensor& b);
FixedTensor matmul(const FixedTensor& a, const FixedTensor& b, FixedFormat out_format = kActivationFormat);
// [N, K] x [M, K]^T -> [N, M]
FloatTensor matmul_transposed(const FloatTensor& a, const FloatTensor& b);

FloatTensor add(const FloatTensor& a, const FloatTensor& b);
FixedTensor add(const FixedTensor& a, const FixedTensor& b);

}  // namespace tinyode
