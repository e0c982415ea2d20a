#include "tinyode/verify.hpp"

#include <random>

namespace tinyode {

std::vector<LutCheck> check_luts(const WeightContainer& weights) {
  const ModelTopology topo = describe_model(ModelConfig::from_metadata(weights.metadata));
  std::vector<LutCheck> out;
  for (const BlockInfo& b : topo.blocks) {
    for (const LayerInfo& l : b.layers) {
      if (l.kind != LayerKind::kConv || l.bits == 0) continue;
      LutCheck c{l.name, true, ""};
      const std::string name = l.name + ".act_lut";
      try {
        const WeightEntry& e = weights.get(name);
        if (!e.scale) throw ContainerError("entry '" + name + "' has no scale");
        const FloatTensor t = e.to_float();
        LutQuantizer::from_table(t.data(), l.bits, topo.config.granularity, *e.scale, QuantKind::kActivation);
      } catch (const std::exception& err) {
        c.ok = false;
        c.message = err.what();
      }
      out.push_back(std::move(c));
    }
  }
  return out;
}

PathComparison compare_paths(const Model& model, NumericPath candidate, std::span<const FloatTensor> images) {
  PathComparison r;
  r.candidate = candidate;
  r.images = images.size();
  for (BlockRole role : kBlockRoles) r.blocks.push_back({role});
  std::vector<double> ref_scale(kBlockRoleCount, 0.0);
  for (const FloatTensor& img : images) {
    InferenceTrace ref, cand;
    model.infer(img, NumericPath::kFloat, &ref);
    model.infer(img, candidate, &cand);
    for (std::size_t i = 0; i < kBlockRoleCount; ++i) {
      BlockDeviation& d = r.blocks[i];
      const FloatTensor& expect = ref.blocks[i].output;
      const FloatTensor& input = i == 0 ? img : ref.blocks[i - 1].output;
      d.chained_max_abs = std::max(d.chained_max_abs, max_abs_diff(expect, cand.blocks[i].output));
      d.isolated_max_abs =
          std::max(d.isolated_max_abs, max_abs_diff(expect, model.run_block(kBlockRoles[i], input, candidate)));
      ref_scale[i] = std::max(ref_scale[i], max_abs(expect));
    }
    r.argmax_agree += argmax(ref.blocks.back().output) == argmax(cand.blocks.back().output);
  }
  for (std::size_t i = 0; i < kBlockRoleCount; ++i) {
    r.blocks[i].chained_rel = ref_scale[i] > 0.0 ? r.blocks[i].chained_max_abs / ref_scale[i] : 0.0;
  }
  return r;
}

FloatTensor random_input(std::uint64_t seed, const ModelConfig& config) {
  std::mt19937_64 rng(seed);
  const std::size_t s = config.image_size;
  FloatTensor rgb({3, s, s});
  for (double& v : rgb.data()) v = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return normalize_image(rgb, config);
}

}  // namespace tinyode
