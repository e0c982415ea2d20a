#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tinyode/model.hpp"

namespace tinyode {

struct LutCheck {
  std::string layer;
  bool ok = true;
  std::string message;
};

// Re-validates every stored activation LUT without building a model.
std::vector<LutCheck> check_luts(const WeightContainer& weights);

struct BlockDeviation {
  BlockRole role = BlockRole::kPre;
  double chained_max_abs = 0.0;   // candidate run end to end
  double chained_rel = 0.0;       // chained_max_abs / max |float output|
  double isolated_max_abs = 0.0;  // candidate block fed the float block input
};

struct PathComparison {
  NumericPath candidate = NumericPath::kFixed;
  std::size_t images = 0;
  std::size_t argmax_agree = 0;
  std::vector<BlockDeviation> blocks;  // one per role, max over images

  double logit_max_abs() const { return blocks.empty() ? 0.0 : blocks.back().chained_max_abs; }
};

// Runs the float path and `candidate` on every image and records per-block
// deviations.
PathComparison compare_paths(const Model& model, NumericPath candidate, std::span<const FloatTensor> images);

// Seeded RGB image drawn uniformly from [0, 1], normalised for `config`.
FloatTensor random_input(std::uint64_t seed, const ModelConfig& config);

}  // namespace tinyode
