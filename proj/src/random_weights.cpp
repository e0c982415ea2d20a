#include <cmath>
#include <random>
#include <vector>

#include "tinyode/model.hpp"

namespace tinyode {

namespace {

// Portable uniform draw: std::uniform_real_distribution is not specified
// bit-for-bit across standard libraries.
class Uniform {
 public:
  explicit Uniform(std::uint64_t seed) : rng_(seed) {}
  double operator()(double lo, double hi) { return lo + (hi - lo) * (static_cast<double>(rng_() >> 11) * 0x1.0p-53); }
  FloatTensor tensor(const Shape& shape, double lo, double hi) {
    FloatTensor t(shape);
    for (double& v : t.data()) v = (*this)(lo, hi);
    return t;
  }

 private:
  std::mt19937_64 rng_;
};

constexpr double kBnEps = 1e-5;

std::size_t attention_dim(const BlockInfo& b) { return b.layer("mhsa.conv1").geometry.out_ch; }

}  // namespace

WeightContainer gen_random_weights(std::uint64_t seed, const ModelConfig& config) {
  config.validate();
  const ModelTopology topo = describe_model(config);
  WeightContainer out;
  out.metadata = config.to_metadata();
  Uniform u(seed);
  const int k = config.granularity;

  for (const BlockInfo& block : topo.blocks) {
    const bool float_block = block.role == BlockRole::kPre || block.role == BlockRole::kPost;
    auto emit = [&](const std::string& name, const FloatTensor& t) {
      out.add(float_block ? WeightEntry::from_f32(name, t) : WeightEntry::from_fixed(name, t, DType::kFx16_4));
    };
    // LLT weights are drawn over the full code range with unit scale; the
    // fan-in gain they skip is folded into the next BatchNorm.
    double pending_gain = 1.0;
    for (const LayerInfo& l : block.layers) {
      switch (l.kind) {
        case LayerKind::kConv: {
          const double bound = std::sqrt(3.0 / static_cast<double>(l.geometry.fan_in()));
          const Shape shape = l.geometry.weight_shape();
          if (l.bits == 0) {
            emit(l.name + ".weight", u.tensor(shape, -bound, bound));
            break;
          }
          const auto wq = LutQuantizer::canonical(l.bits, k, 1.0, QuantKind::kWeight);
          const IntTensor codes = quantize_weights(u.tensor(shape, -1.0, 1.0), wq);
          out.add(WeightEntry::from_codes(l.name + ".weight", codes.codes,
                                          l.bits == 8 ? DType::kI8 : DType::kI4Packed, 1.0f));
          const auto aq = LutQuantizer::canonical(l.bits, k, 1.0, QuantKind::kActivation);
          const std::vector<double> table = aq.table();
          FloatTensor lut({table.size()});
          std::copy(table.begin(), table.end(), lut.data().begin());
          WeightEntry e = WeightEntry::from_f32(l.name + ".act_lut", lut);
          e.scale = 1.0f;
          out.add(std::move(e));
          pending_gain *= bound;
          break;
        }
        case LayerKind::kBatchNorm: {
          const std::size_t ch = l.params / 2;
          std::vector<double> gamma(ch), beta(ch), mean(ch), var(ch);
          for (std::size_t i = 0; i < ch; ++i) {
            gamma[i] = u(0.8, 1.2) * pending_gain;
            beta[i] = u(-0.1, 0.1);
            mean[i] = u(-0.1, 0.1);
            var[i] = u(0.8, 1.2);
          }
          pending_gain = 1.0;
          const NormParams p = batchnorm_fold(gamma, beta, mean, var, kBnEps);
          emit(l.name + ".scale", p.scale);
          emit(l.name + ".shift", p.shift);
          break;
        }
        case LayerKind::kProjection: {
          const std::size_t d = attention_dim(block);
          const double bound = 1.0 / std::sqrt(static_cast<double>(d));
          emit(l.name, u.tensor({d, d}, -bound, bound));
          break;
        }
        case LayerKind::kPositionTable: {
          const std::size_t heads = config.heads, dh = attention_dim(block) / heads;
          emit("mhsa.attn.rel_h", u.tensor({heads, block.in_shape[1], dh}, -0.1, 0.1));
          emit("mhsa.attn.rel_w", u.tensor({heads, block.in_shape[2], dh}, -0.1, 0.1));
          break;
        }
        case LayerKind::kLayerNorm: {
          const Shape shape{block.in_shape[1] * block.in_shape[2], attention_dim(block)};
          emit(l.name + ".scale", u.tensor(shape, 0.8, 1.2));
          emit(l.name + ".shift", u.tensor(shape, -0.1, 0.1));
          break;
        }
        case LayerKind::kLinear: {
          const std::size_t ch = block.in_shape[0];
          const double bound = std::sqrt(6.0 / static_cast<double>(ch));
          emit(l.name + ".weight", u.tensor({config.classes, ch}, -bound, bound));
          emit(l.name + ".bias", u.tensor({config.classes}, -0.1, 0.1));
          break;
        }
        case LayerKind::kAttentionCore:
          break;
      }
    }
  }
  return out;
}

}  // namespace tinyode
