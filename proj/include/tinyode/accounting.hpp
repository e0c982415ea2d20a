#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tinyode/llt.hpp"
#include "tinyode/topology.hpp"

namespace tinyode {

class Model;

// Published reference figures the report is compared against.
namespace reference {
inline constexpr std::size_t kFeatureBufferTotal = 1'272'899;
inline constexpr double kParameterTotal = 1.26e6;
inline constexpr std::size_t kActivationBuffer = 261'648;
inline constexpr double kFootprintMb8 = 1.88;
inline constexpr double kFootprintMb4 = 1.23;
inline constexpr double kGflops = 0.21;
std::optional<std::size_t> block_buffer(BlockRole role);
}  // namespace reference

struct BlockAccount {
  BlockRole role = BlockRole::kPre;
  std::size_t weights = 0;       // formula element count of the block's parameters
  std::size_t lut_elements = 0;  // 2^n K + 2 per LLT layer
  std::optional<std::size_t> paper;
  std::uint64_t weight_bits = 0;  // stored weight bits incl. LUT and scale overhead
  std::uint64_t macs_per_pass = 0;
  int repeats = 1;

  std::size_t buffer_elements() const { return weights + lut_elements; }
  bool mismatch() const { return paper && *paper != buffer_elements(); }
  std::uint64_t macs() const { return macs_per_pass * static_cast<std::uint64_t>(repeats); }
};

struct LayerBudget {
  std::string name;
  int bits = 0;
  std::size_t params = 0;
  QuantBudget word;  // 32-bit LUT entries
  QuantBudget nbit;  // n-bit LUT entries
};

// On-chip memory of the feature-extraction blocks. Non-LLT weights use
// `plain_weight_bits`; LLT weights n bits plus n * 2^n K + 64 bits per
// layer. Of the activation buffer, the inputs of LLT layers are n-bit and
// everything else is Q10.10.
struct Footprint {
  int plain_weight_bits = 16;
  std::uint64_t weight_bits = 0;
  std::uint64_t lut_bits = 0;
  std::size_t activation_elements = reference::kActivationBuffer;
  std::size_t quantized_activation_elements = 0;
  std::uint64_t activation_bits = 0;

  std::uint64_t total_bits() const { return weight_bits + lut_bits + activation_bits; }
  double megabytes() const { return static_cast<double>(total_bits()) / 8e6; }
};

struct AccountingReport {
  ModelConfig config;
  std::vector<BlockAccount> blocks;  // all seven roles
  std::size_t feature_buffer_total = 0;  // ode1..mhsa buffer elements
  std::size_t parameter_total = 0;       // every block, without LUT overhead
  Footprint footprint;
  std::uint64_t macs = 0;
  double flops = 0.0;  // 2 * MACs, ODE blocks counted C times
  std::vector<LayerBudget> llt_layers;

  const BlockAccount& block(BlockRole r) const { return blocks.at(role_index(r)); }
};

AccountingReport account(const ModelConfig& config);
AccountingReport account(const Model& model);

Footprint footprint(const ModelTopology& topology, int plain_weight_bits = 16);

std::uint64_t macs(const ModelConfig& config);
double flops(const ModelConfig& config);
double flops(const Model& model);

// Human-readable table and JSON document (schema documented in the README).
std::string format_report(const AccountingReport& report);
std::string report_json(const AccountingReport& report);

}  // namespace tinyode
