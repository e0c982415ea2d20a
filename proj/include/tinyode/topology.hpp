#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "tinyode/attention.hpp"
#include "tinyode/layers.hpp"
#include "tinyode/weights_io.hpp"

namespace tinyode {

enum class BlockRole : int { kPre = 0, kOde1, kDs1, kOde2, kDs2, kMhsa, kPost };

inline constexpr std::array<BlockRole, kBlockRoleCount> kBlockRoles{
    BlockRole::kPre, BlockRole::kOde1, BlockRole::kDs1, BlockRole::kOde2,
    BlockRole::kDs2, BlockRole::kMhsa, BlockRole::kPost};

const char* role_name(BlockRole role);
inline std::size_t role_index(BlockRole role) { return static_cast<std::size_t>(role); }

enum class NumericPath { kFloat, kFixed };
const char* path_name(NumericPath p);
NumericPath parse_path(std::string_view s);

enum class QuantMode { kNone, kLlt4, kLlt8 };
const char* quant_mode_name(QuantMode m);
QuantMode parse_quant_mode(std::string_view s);

// LLT bit width per block role; 0 leaves the block in Q4.12.
struct QuantConfig {
  std::array<int, kBlockRoleCount> bits{};

  static QuantConfig none() { return {}; }
  // Both down-sampling blocks and the attention block.
  static QuantConfig ds_block3(int n);
  static QuantConfig from_mode(QuantMode mode);

  int for_role(BlockRole r) const { return bits[role_index(r)]; }
  bool any() const;
  // Only ODE, DS and MHSA blocks may be quantized, with 4 or 8 bits.
  void validate() const;
  // QuantMode for the DS+Block3 pattern, or throws when bits follow another pattern.
  QuantMode mode() const;

  friend bool operator==(const QuantConfig&, const QuantConfig&) = default;
};

struct ModelConfig {
  int ode_iterations = 10;
  std::size_t heads = 4;
  std::size_t classes = 10;
  std::size_t image_size = 96;
  int granularity = 9;
  QuantConfig quant = QuantConfig::ds_block3(8);
  AttentionActivation attention = AttentionActivation::kRelu;
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> stddev{0.25, 0.25, 0.25};

  void validate() const;
  ContainerMetadata to_metadata() const;
  static ModelConfig from_metadata(const ContainerMetadata& m);
};

enum class LayerKind { kConv, kBatchNorm, kProjection, kPositionTable, kAttentionCore, kLayerNorm, kLinear };

struct LayerInfo {
  std::string name;  // container entry prefix, e.g. "ds1.conv1"
  LayerKind kind = LayerKind::kConv;
  ConvGeometry geometry;  // kConv only
  std::size_t in_h = 0, in_w = 0, out_h = 0, out_w = 0;
  std::size_t params = 0;
  std::uint64_t macs = 0;  // per execution of the layer
  int bits = 0;            // LLT bit width, 0 = none
  std::string input_id;    // activation tensor feeding the layer
  std::size_t input_elements = 0;
};

struct BlockInfo {
  BlockRole role = BlockRole::kPre;
  Shape in_shape;
  Shape out_shape;
  int repeats = 1;  // Euler iterations for ODE blocks
  std::vector<LayerInfo> layers;

  std::string name() const { return role_name(role); }
  std::size_t params() const;
  std::uint64_t macs_per_pass() const;
  const LayerInfo& layer(const std::string& name) const;
};

struct ModelTopology {
  ModelConfig config;
  std::vector<BlockInfo> blocks;

  const BlockInfo& block(BlockRole role) const { return blocks.at(role_index(role)); }
};

// Table of blocks, layers and shapes for the 96x96 network.
ModelTopology describe_model(const ModelConfig& config);

}  // namespace tinyode
