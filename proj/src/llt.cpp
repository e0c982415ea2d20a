#include "tinyode/llt.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tinyode {

namespace {

constexpr int kMaxBits = 12;

long long table_size_for(int bits, int granularity) { return (1LL << bits) * granularity; }

}  // namespace

void LutQuantizer::check_config(int bits, int granularity, double scale) {
  if (bits < 1 || bits > kMaxBits) {
    throw std::invalid_argument("LUT bit width must be in [1, " + std::to_string(kMaxBits) + "], got " +
                                std::to_string(bits));
  }
  if (granularity < 1) throw std::invalid_argument("LUT granularity must be positive");
  if (!(scale > 0.0) || !std::isfinite(scale)) throw std::invalid_argument("quantizer scale must be positive");
}

LutQuantizer::LutQuantizer(int bits, int granularity, double scale, QuantKind kind, std::vector<int> levels)
    : bits_(bits), granularity_(granularity), scale_(scale), kind_(kind), levels_(std::move(levels)) {}

LutQuantizer LutQuantizer::from_switch_indices(std::span<const int> switch_indices, int bits, int granularity,
                                               double scale, QuantKind kind) {
  check_config(bits, granularity, scale);
  const int segments = 1 << bits;
  if (switch_indices.size() != static_cast<std::size_t>(segments)) {
    throw LutInvariantError("expected " + std::to_string(segments) + " thresholds, got " +
                            std::to_string(switch_indices.size()));
  }
  std::vector<int> levels(static_cast<std::size_t>(table_size_for(bits, granularity)));
  for (int i = 0; i < segments; ++i) {
    const int p = switch_indices[static_cast<std::size_t>(i)];
    if (p < admissible_low(i, granularity) || p > admissible_high(i, granularity)) {
      throw LutInvariantError("threshold " + std::to_string(i) + " switch index " + std::to_string(p) +
                              " outside [" + std::to_string(admissible_low(i, granularity)) + ", " +
                              std::to_string(admissible_high(i, granularity)) + "]");
    }
    for (int j = 0; j < granularity; ++j) {
      const int idx = i * granularity + j;
      levels[static_cast<std::size_t>(idx)] = idx < p ? i : i + 1;
    }
  }
  return LutQuantizer(bits, granularity, scale, kind, std::move(levels));
}

LutQuantizer LutQuantizer::from_thresholds(std::span<const double> thresholds, int bits, int granularity,
                                           double scale, QuantKind kind) {
  check_config(bits, granularity, scale);
  const double grid = static_cast<double>(table_size_for(bits, granularity));
  std::vector<int> switches;
  switches.reserve(thresholds.size());
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    const double p = thresholds[i] * grid;
    const double r = std::round(p);
    if (!std::isfinite(p) || std::fabs(p - r) > 1e-6) {
      throw LutInvariantError("threshold " + std::to_string(i) + " = " + std::to_string(thresholds[i]) +
                              " is not on the 1/(2^n K) grid");
    }
    switches.push_back(static_cast<int>(r));
  }
  return from_switch_indices(switches, bits, granularity, scale, kind);
}

LutQuantizer LutQuantizer::canonical(int bits, int granularity, double scale, QuantKind kind) {
  check_config(bits, granularity, scale);
  const int segments = 1 << bits;
  const int mid = (granularity + 1) / 2;
  std::vector<int> switches(static_cast<std::size_t>(segments));
  for (int i = 0; i < segments; ++i) switches[static_cast<std::size_t>(i)] = i * granularity + mid;
  return from_switch_indices(switches, bits, granularity, scale, kind);
}

LutQuantizer LutQuantizer::from_table(std::span<const double> table, int bits, int granularity, double scale,
                                      QuantKind kind) {
  check_config(bits, granularity, scale);
  const auto expected = static_cast<std::size_t>(table_size_for(bits, granularity));
  if (table.size() != expected) {
    throw LutInvariantError("LUT has " + std::to_string(table.size()) + " entries, expected 2^n*K = " +
                            std::to_string(expected));
  }
  const double levels_per_unit = std::ldexp(1.0, bits);
  std::vector<int> switches(static_cast<std::size_t>(1 << bits));
  for (int i = 0; i < (1 << bits); ++i) {
    int low = 0;
    bool seen_high = false;
    for (int j = 0; j < granularity; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i * granularity + j);
      const double scaled = table[idx] * levels_per_unit;
      const auto level = static_cast<long long>(std::llround(scaled));
      if (!std::isfinite(scaled) || std::fabs(scaled - static_cast<double>(level)) > 1e-9 ||
          (level != i && level != i + 1)) {
        throw LutInvariantError("entry " + std::to_string(idx) + " = " + std::to_string(table[idx]) +
                                " is not level " + std::to_string(i) + " or " + std::to_string(i + 1) + " of 2^" +
                                std::to_string(bits));
      }
      if (level == i) {
        if (seen_high) {
          throw LutInvariantError("entry " + std::to_string(idx) + " decreases inside segment " + std::to_string(i));
        }
        ++low;
      } else {
        seen_high = true;
      }
    }
    if (low == 0) throw LutInvariantError("segment " + std::to_string(i) + " has no low entry");
    switches[static_cast<std::size_t>(i)] = i * granularity + low;
  }
  return from_switch_indices(switches, bits, granularity, scale, kind);
}

std::vector<double> LutQuantizer::table() const {
  std::vector<double> out(levels_.size());
  for (std::size_t i = 0; i < levels_.size(); ++i) out[i] = std::ldexp(static_cast<double>(levels_[i]), -bits_);
  return out;
}

std::vector<int> LutQuantizer::switch_indices() const {
  std::vector<int> out(static_cast<std::size_t>(1 << bits_));
  for (int i = 0; i < (1 << bits_); ++i) {
    int p = i * granularity_;
    const int end = p + granularity_;
    while (p < end && levels_[static_cast<std::size_t>(p)] == i) ++p;
    out[static_cast<std::size_t>(i)] = p;
  }
  return out;
}

std::vector<double> LutQuantizer::thresholds() const {
  const auto switches = switch_indices();
  const double grid = static_cast<double>(levels_.size());
  std::vector<double> out(switches.size());
  for (std::size_t i = 0; i < switches.size(); ++i) out[i] = switches[i] / grid;
  return out;
}

std::size_t LutQuantizer::index(double a_hat) const {
  if (std::isnan(a_hat)) return 0;
  const double r = std::round(a_hat * static_cast<double>(levels_.size()));
  if (r <= 0.0) return 0;
  const double last = static_cast<double>(levels_.size() - 1);
  return r >= last ? levels_.size() - 1 : static_cast<std::size_t>(r);
}

int LutQuantizer::activation_level(double a) const {
  return levels_[index(clip_scale(a, scale_, QuantKind::kActivation))];
}

double LutQuantizer::lookup(double a_hat) const {
  return scale_ * std::ldexp(static_cast<double>(levels_[index(a_hat)]), -bits_);
}

double clip_scale(double x, double scale, QuantKind kind) {
  if (!(scale > 0.0)) throw std::invalid_argument("clip scale must be positive");
  const double lo = kind == QuantKind::kWeight ? -1.0 : 0.0;
  return std::clamp(x / scale, lo, 1.0);
}

double lut_lookup(double a_hat, const LutQuantizer& q) { return q.lookup(a_hat); }

double weight_step(int bits, double scale) { return std::ldexp(scale, -(bits - 1)); }

IntTensor quantize_weights(const FloatTensor& w, const LutQuantizer& q) {
  if (q.kind() != QuantKind::kWeight) throw std::invalid_argument("quantize_weights needs a weight quantizer");
  if (q.bits() < 2) throw std::invalid_argument("weight quantization needs at least 2 bits");
  const int half = 1 << (q.bits() - 1);
  const int limit = half - 1;
  BasicTensor<std::int32_t> codes(w.shape());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double u = (clip_scale(w[i], q.scale(), QuantKind::kWeight) + 1.0) / 2.0;
    codes[i] = std::clamp(q.level(q.index(u)) - half, -limit, limit);
  }
  return {std::move(codes), q.bits(), weight_step(q.bits(), q.scale())};
}

FloatTensor fake_quantize_activations(const FloatTensor& a, const LutQuantizer& q) {
  FloatTensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = q.lookup(clip_scale(a[i], q.scale(), QuantKind::kActivation));
  }
  return out;
}

FixedActivationQuantizer::FixedActivationQuantizer(const LutQuantizer& q, FixedFormat input_format)
    : levels_(q.levels().begin(), q.levels().end()),
      input_format_(input_format),
      to_index_(std::ldexp(static_cast<double>(q.size()) / q.scale(), -input_format.frac_bits())),
      step_(std::ldexp(q.scale(), -q.bits())) {
  input_format.validate();
}

int FixedActivationQuantizer::level(std::int32_t raw) const {
  const std::int64_t idx = to_index_.apply_away(raw);
  const auto last = static_cast<std::int64_t>(levels_.size()) - 1;
  return levels_[static_cast<std::size_t>(std::clamp<std::int64_t>(idx, 0, last))];
}

double lut_overhead_bits(int bits, int granularity, LutStorage storage) {
  const double entries = static_cast<double>(table_size_for(bits, granularity));
  switch (storage) {
    case LutStorage::kWordEntries:
      return 32.0 * (entries + 2.0);
    case LutStorage::kNBitEntries:
      return bits * entries + 64.0;
  }
  return 0.0;
}

double memory_reduction(int bits, long long n_params, int granularity) {
  const double np = static_cast<double>(n_params);
  return 32.0 * np / (bits * np + lut_overhead_bits(bits, granularity, LutStorage::kNBitEntries));
}

QuantBudget quant_budget(int bits, int granularity, long long n_params, LutStorage storage) {
  if (bits < 1 || bits >= 32) throw std::invalid_argument("quant_budget bit width must be in [1, 31]");
  if (n_params < 0) throw std::invalid_argument("parameter count must be non-negative");
  const double saved = (32.0 - bits) * static_cast<double>(n_params);
  return {saved > lut_overhead_bits(bits, granularity, storage), memory_reduction(bits, n_params, granularity)};
}

long long min_effective_params(int bits, int granularity, LutStorage storage) {
  const double bound = lut_overhead_bits(bits, granularity, storage) / (32.0 - bits);
  return static_cast<long long>(std::floor(bound)) + 1;
}

}  // namespace tinyode
