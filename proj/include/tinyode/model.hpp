#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tinyode/attention.hpp"
#include "tinyode/layers.hpp"
#include "tinyode/llt.hpp"
#include "tinyode/topology.hpp"
#include "tinyode/weights_io.hpp"

namespace tinyode {

// A convolution as loaded for inference: either Q4.12 weights shared by both
// paths, or an LLT layer holding n-bit weight codes and the activation LUT
// applied to its input.
class ConvLayer {
 public:
  ConvLayer() = default;
  static ConvLayer plain(std::string name, ConvGeometry geometry, const FloatTensor& weight);
  static ConvLayer quantized(std::string name, ConvGeometry geometry, IntTensor codes, LutQuantizer activation);

  FloatTensor forward(const FloatTensor& x) const;
  FixedTensor forward(const FixedTensor& x) const;

  const std::string& name() const { return name_; }
  const ConvGeometry& geometry() const { return float_spec_.geometry; }
  bool is_quantized() const { return activation_.has_value(); }
  const std::optional<LutQuantizer>& activation_quantizer() const { return activation_; }
  // Effective weights used by the floating-point path.
  const FloatTensor& weight() const { return float_spec_.weight; }

 private:
  std::string name_;
  ConvSpec float_spec_;
  FixedConvSpec fixed_spec_;
  std::optional<LutQuantizer> activation_;
  std::optional<IntTensor> codes_;
  Requantizer requant_;
};

struct BatchNormLayer {
  NormParams params;
  FixedNormParams fixed;

  static BatchNormLayer from_params(const NormParams& p);
  FloatTensor forward(const FloatTensor& x) const { return batchnorm(x, params); }
  FixedTensor forward(const FixedTensor& x) const { return batchnorm(x, fixed); }
};

struct BlockTrace {
  BlockRole role;
  FloatTensor output;
};

struct InferenceTrace {
  std::vector<BlockTrace> blocks;
};

struct BuildOptions {
  std::optional<int> ode_iterations;  // overrides the container value
};

class Model {
 public:
  Model(const WeightContainer& weights, const BuildOptions& options = {});
  ~Model();
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;

  const ModelConfig& config() const { return topology_.config; }
  const ModelTopology& topology() const { return topology_; }
  std::vector<const ConvLayer*> conv_layers() const;

  // Runs one block. Pre- and post-processing always run in floating point;
  // on the fixed path other blocks see their input rounded to Q10.10.
  FloatTensor run_block(BlockRole role, const FloatTensor& x, NumericPath path) const;

  // image: normalised [3, 96, 96]. Returns the class logits.
  FloatTensor infer(const FloatTensor& image, NumericPath path, InferenceTrace* trace = nullptr) const;

 private:
  struct Blocks;
  ModelTopology topology_;
  std::unique_ptr<Blocks> blocks_;
};

inline Model build_model(const WeightContainer& weights, const BuildOptions& options = {}) {
  return Model(weights, options);
}

// (rgb in [0, 1] - mean) / std per channel.
FloatTensor normalize_image(const FloatTensor& rgb, const ModelConfig& config);

// Deterministic pseudorandom weights for `config`: fan-in scaled uniform
// weights, folded random BatchNorm statistics, canonical LUTs, unit scales.
WeightContainer gen_random_weights(std::uint64_t seed, const ModelConfig& config);

// Index of the largest logit (first on ties).
std::size_t argmax(const FloatTensor& logits);

}  // namespace tinyode
