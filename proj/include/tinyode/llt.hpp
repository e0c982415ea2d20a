#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "tinyode/fixed.hpp"
#include "tinyode/tensor.hpp"

namespace tinyode {

// Learnable lookup-table (LLT) quantization.
//
// A quantizer with bit width n and granularity K holds an integrated LUT of
// 2^n * K entries: segment i (entries iK .. iK+K-1) encodes the i-th step
// function and contains only the levels i/2^n and (i+1)/2^n. The threshold
// T_i is stored as an absolute switch index p_i = T_i * 2^n * K in
// [iK+1, iK+K]; the first p_i - iK entries of segment i hold i/2^n.
//
// Activations look up a_hat = clip(a / s_a) in [0, 1] directly. Weights use
// the same table on u = (w_hat + 1) / 2 and map level L to the signed code
// L - 2^(n-1), clamped to +-(2^(n-1) - 1); the dequantised weight is
// code * s_w / 2^(n-1).

enum class QuantKind { kWeight, kActivation };

inline constexpr int kDefaultGranularity = 9;

class LutInvariantError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class LutQuantizer {
 public:
  // Thresholds T_0..T_{2^n - 1}, each on its admissible grid.
  static LutQuantizer from_thresholds(std::span<const double> thresholds, int bits, int granularity, double scale,
                                      QuantKind kind);
  // Absolute switch indices p_i in [iK+1, iK+K].
  static LutQuantizer from_switch_indices(std::span<const int> switch_indices, int bits, int granularity, double scale,
                                          QuantKind kind);
  // Thresholds at the segment midpoints: reproduces round-half-up uniform quantization.
  static LutQuantizer canonical(int bits, int granularity, double scale, QuantKind kind);
  // Rebuilds a quantizer from a stored table, validating every invariant.
  static LutQuantizer from_table(std::span<const double> table, int bits, int granularity, double scale,
                                 QuantKind kind);

  int bits() const { return bits_; }
  int granularity() const { return granularity_; }
  double scale() const { return scale_; }
  QuantKind kind() const { return kind_; }
  std::size_t size() const { return levels_.size(); }
  int max_level() const { return 1 << bits_; }

  // Table entries as values i / 2^n.
  std::vector<double> table() const;
  int level(std::size_t index) const { return levels_[index]; }
  std::span<const int> levels() const { return levels_; }
  std::vector<int> switch_indices() const;
  std::vector<double> thresholds() const;

  // round(a_hat * 2^n K), ties away from zero, clamped to [0, size - 1].
  std::size_t index(double a_hat) const;
  // Level code after clip_scale for an activation value.
  int activation_level(double a) const;
  // s * I-LUT[index(a_hat)]
  double lookup(double a_hat) const;

  static int admissible_low(int segment, int granularity) { return segment * granularity + 1; }
  static int admissible_high(int segment, int granularity) { return (segment + 1) * granularity; }

 private:
  LutQuantizer(int bits, int granularity, double scale, QuantKind kind, std::vector<int> levels);
  static void check_config(int bits, int granularity, double scale);

  int bits_ = 8;
  int granularity_ = kDefaultGranularity;
  double scale_ = 1.0;
  QuantKind kind_ = QuantKind::kActivation;
  std::vector<int> levels_;
};

// build_ilut: thresholds -> quantizer.
inline LutQuantizer build_ilut(std::span<const double> thresholds, int bits, int granularity = kDefaultGranularity,
                               double scale = 1.0, QuantKind kind = QuantKind::kActivation) {
  return LutQuantizer::from_thresholds(thresholds, bits, granularity, scale, kind);
}

// Scales and clips into [-1, 1] (weights) or [0, 1] (activations).
double clip_scale(double x, double scale, QuantKind kind);

double lut_lookup(double a_hat, const LutQuantizer& q);

// Signed n-bit weight codes; step = s_w / 2^(n-1).
IntTensor quantize_weights(const FloatTensor& w, const LutQuantizer& q);
double weight_step(int bits, double scale);

// Fake quantisation of an activation tensor on the floating-point path.
FloatTensor fake_quantize_activations(const FloatTensor& a, const LutQuantizer& q);

// Activation LUT front-end for the fixed datapath: raw fixed-point input ->
// integer level in [0, 2^n].
class FixedActivationQuantizer {
 public:
  FixedActivationQuantizer(const LutQuantizer& q, FixedFormat input_format);

  int level(std::int32_t raw) const;
  double step() const { return step_; }  // value of one level: s_a / 2^n
  FixedFormat input_format() const { return input_format_; }

 private:
  std::vector<int> levels_;
  FixedFormat input_format_;
  Requantizer to_index_;
  double step_;
};

// Memory budget of quantizing one layer of n_params weights.
enum class LutStorage {
  kWordEntries,  // 32 bits per LUT entry and scale: 32 * (2^n K + 2)
  kNBitEntries,  // n bits per LUT entry, 32-bit scales: n * 2^n K + 64
};

struct QuantBudget {
  bool effective = false;
  double reduction = 1.0;
};

double lut_overhead_bits(int bits, int granularity, LutStorage storage);
// 32 * N_p / (n * N_p + n * 2^n * K + 64)
double memory_reduction(int bits, long long n_params, int granularity = kDefaultGranularity);
QuantBudget quant_budget(int bits, int granularity, long long n_params, LutStorage storage = LutStorage::kWordEntries);
// Smallest N_p for which quantization is effective under `storage`.
long long min_effective_params(int bits, int granularity, LutStorage storage = LutStorage::kWordEntries);

}  // namespace tinyode
