#include "tinyode/accounting.hpp"

#include <cstdio>
#include <set>

#include <json.hpp>

#include "tinyode/model.hpp"

namespace tinyode {

std::optional<std::size_t> reference::block_buffer(BlockRole role) {
  switch (role) {
    case BlockRole::kOde1: return 9'618;
    case BlockRole::kDs1: return 237'047;
    case BlockRole::kOde2: return 35'858;
    case BlockRole::kDs2: return 925'943;
    case BlockRole::kMhsa: return 64'433;
    default: return std::nullopt;
  }
}

namespace {

std::optional<QuantMode> known_mode(const QuantConfig& q) {
  try {
    return q.mode();
  } catch (const std::invalid_argument&) {
    return std::nullopt;
  }
}

const char* quant_label(const QuantConfig& q) {
  const auto m = known_mode(q);
  return m ? quant_mode_name(*m) : "custom";
}

bool is_feature(BlockRole r) { return r != BlockRole::kPre && r != BlockRole::kPost; }

std::size_t lut_entries(int bits, int granularity) { return (std::size_t{1} << bits) * granularity; }

std::uint64_t block_weight_bits(const BlockInfo& b, int granularity, int plain_bits) {
  std::uint64_t total = 0;
  for (const LayerInfo& l : b.layers) {
    if (l.bits == 0) {
      total += static_cast<std::uint64_t>(plain_bits) * l.params;
    } else {
      total += static_cast<std::uint64_t>(l.bits) * l.params +
               static_cast<std::uint64_t>(lut_overhead_bits(l.bits, granularity, LutStorage::kNBitEntries));
    }
  }
  return total;
}

}  // namespace

Footprint footprint(const ModelTopology& topology, int plain_weight_bits) {
  Footprint f;
  f.plain_weight_bits = plain_weight_bits;
  const int k = topology.config.granularity;
  std::set<std::string> seen;
  std::uint64_t quantized_bits = 0;
  for (const BlockInfo& b : topology.blocks) {
    if (!is_feature(b.role)) continue;
    for (const LayerInfo& l : b.layers) {
      if (l.bits == 0) {
        f.weight_bits += static_cast<std::uint64_t>(plain_weight_bits) * l.params;
        continue;
      }
      f.weight_bits += static_cast<std::uint64_t>(l.bits) * l.params;
      f.lut_bits += static_cast<std::uint64_t>(lut_overhead_bits(l.bits, k, LutStorage::kNBitEntries));
      if (seen.insert(l.input_id).second) {
        f.quantized_activation_elements += l.input_elements;
        quantized_bits += static_cast<std::uint64_t>(l.bits) * l.input_elements;
      }
    }
  }
  const std::size_t rest = f.activation_elements - f.quantized_activation_elements;
  f.activation_bits = quantized_bits + static_cast<std::uint64_t>(kActivationFormat.total_bits) * rest;
  return f;
}

AccountingReport account(const ModelConfig& config) {
  AccountingReport r;
  r.config = config;
  const ModelTopology topo = describe_model(config);
  const int k = config.granularity;
  for (const BlockInfo& b : topo.blocks) {
    BlockAccount a;
    a.role = b.role;
    a.weights = b.params();
    for (const LayerInfo& l : b.layers) {
      if (l.bits == 0) continue;
      a.lut_elements += lut_entries(l.bits, k) + 2;
      r.llt_layers.push_back({l.name, l.bits, l.params,
                              quant_budget(l.bits, k, static_cast<long long>(l.params), LutStorage::kWordEntries),
                              quant_budget(l.bits, k, static_cast<long long>(l.params), LutStorage::kNBitEntries)});
    }
    a.paper = reference::block_buffer(b.role);
    // Pre- and post-processing stay in binary32 on the host.
    a.weight_bits = is_feature(b.role) ? block_weight_bits(b, k, kWeightFormat.total_bits)
                                       : std::uint64_t{32} * b.params();
    a.macs_per_pass = b.macs_per_pass();
    a.repeats = b.repeats;
    if (is_feature(b.role)) r.feature_buffer_total += a.buffer_elements();
    r.parameter_total += a.weights;
    r.macs += a.macs();
    r.blocks.push_back(a);
  }
  r.footprint = footprint(topo, kWeightFormat.total_bits);
  r.flops = 2.0 * static_cast<double>(r.macs);
  return r;
}

AccountingReport account(const Model& model) { return account(model.config()); }

std::uint64_t macs(const ModelConfig& config) {
  std::uint64_t total = 0;
  for (const BlockInfo& b : describe_model(config).blocks) total += b.macs_per_pass() * static_cast<std::uint64_t>(b.repeats);
  return total;
}

double flops(const ModelConfig& config) { return 2.0 * static_cast<double>(macs(config)); }
double flops(const Model& model) { return flops(model.config()); }

namespace {

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double rel_diff(double computed, double paper) { return (computed - paper) / paper; }

}  // namespace

std::string format_report(const AccountingReport& r) {
  std::string s;
  s += fmt("config: C=%d quant=%s K=%d heads=%zu\n\n", r.config.ode_iterations,
           quant_label(r.config.quant), r.config.granularity, r.config.heads);
  s += fmt("%-6s %12s %10s %12s %12s %9s %14s\n", "block", "weights", "lut", "buffer", "paper", "flag", "MACs");
  for (const BlockAccount& b : r.blocks) {
    const std::string paper = b.paper ? std::to_string(*b.paper) : "-";
    const char* flag = !b.paper ? "" : b.mismatch() ? "MISMATCH" : "ok";
    s += fmt("%-6s %12zu %10zu %12zu %12s %9s %14llu\n", role_name(b.role), b.weights, b.lut_elements,
             b.buffer_elements(), paper.c_str(), flag, static_cast<unsigned long long>(b.macs()));
  }
  s += fmt("\nweight buffer (ode1..mhsa): %zu computed, %zu paper (%+.2f%%)\n", r.feature_buffer_total,
           reference::kFeatureBufferTotal,
           100.0 * rel_diff(static_cast<double>(r.feature_buffer_total), reference::kFeatureBufferTotal));
  s += fmt("parameters (all blocks):    %zu computed, %.2fM paper (%+.2f%%)\n", r.parameter_total,
           reference::kParameterTotal / 1e6, 100.0 * rel_diff(static_cast<double>(r.parameter_total), reference::kParameterTotal));
  const Footprint& f = r.footprint;
  s += fmt("\nlocal memory: weights %llu bits, lut+scales %llu bits, activations %llu bits (%zu of %zu elements n-bit)\n",
           static_cast<unsigned long long>(f.weight_bits), static_cast<unsigned long long>(f.lut_bits),
           static_cast<unsigned long long>(f.activation_bits), f.quantized_activation_elements, f.activation_elements);
  s += fmt("local memory: %.3f MB (10^6 bytes)", f.megabytes());
  const auto mode = known_mode(r.config.quant);
  if (mode && *mode != QuantMode::kNone) {
    const double paper = *mode == QuantMode::kLlt8 ? reference::kFootprintMb8 : reference::kFootprintMb4;
    s += fmt(", paper %.2f MB (%+.2f%%)", paper, 100.0 * rel_diff(f.megabytes(), paper));
  }
  s += fmt("\n\nMACs %.4f G, FLOPs %.4f G (2 x MACs, ODE blocks x C), paper %.2f G (%+.1f%%)\n",
           static_cast<double>(r.macs) / 1e9, r.flops / 1e9, reference::kGflops,
           100.0 * rel_diff(r.flops / 1e9, reference::kGflops));
  if (!r.llt_layers.empty()) {
    s += fmt("\n%-18s %4s %8s %22s %22s\n", "llt layer", "n", "N_p", "effective/red (32b)", "effective/red (n-bit)");
    for (const LayerBudget& l : r.llt_layers) {
      s += fmt("%-18s %4d %8zu %12s %8.3f %12s %8.3f\n", l.name.c_str(), l.bits, l.params,
               l.word.effective ? "yes" : "no", l.word.reduction, l.nbit.effective ? "yes" : "no", l.nbit.reduction);
    }
  }
  return s;
}

std::string report_json(const AccountingReport& r) {
  using nlohmann::json;
  json blocks = json::array();
  for (const BlockAccount& b : r.blocks) {
    blocks.push_back({{"block", role_name(b.role)},
                      {"weights", b.weights},
                      {"lut_elements", b.lut_elements},
                      {"buffer_elements", b.buffer_elements()},
                      {"paper", b.paper ? json(*b.paper) : json(nullptr)},
                      {"mismatch", b.mismatch()},
                      {"weight_bits", b.weight_bits},
                      {"macs_per_pass", b.macs_per_pass},
                      {"repeats", b.repeats},
                      {"macs", b.macs()}});
  }
  json layers = json::array();
  for (const LayerBudget& l : r.llt_layers) {
    layers.push_back({{"layer", l.name},
                      {"bits", l.bits},
                      {"params", l.params},
                      {"effective_word_lut", l.word.effective},
                      {"reduction_word_lut", l.word.reduction},
                      {"effective_nbit_lut", l.nbit.effective},
                      {"reduction_nbit_lut", l.nbit.reduction}});
  }
  const Footprint& f = r.footprint;
  json doc = {
      {"schema", "tinyode.accounting/1"},
      {"config",
       {{"ode_iterations", r.config.ode_iterations},
        {"quant", quant_label(r.config.quant)},
        {"granularity", r.config.granularity},
        {"heads", r.config.heads}}},
      {"blocks", blocks},
      {"totals",
       {{"feature_buffer", r.feature_buffer_total},
        {"feature_buffer_paper", reference::kFeatureBufferTotal},
        {"parameters", r.parameter_total},
        {"parameters_paper", reference::kParameterTotal}}},
      {"footprint",
       {{"plain_weight_bits", f.plain_weight_bits},
        {"weight_bits", f.weight_bits},
        {"lut_bits", f.lut_bits},
        {"activation_elements", f.activation_elements},
        {"quantized_activation_elements", f.quantized_activation_elements},
        {"activation_bits", f.activation_bits},
        {"total_bits", f.total_bits()},
        {"megabytes", f.megabytes()}}},
      {"compute", {{"macs", r.macs}, {"flops", r.flops}, {"flops_paper", reference::kGflops * 1e9}}},
      {"llt_layers", layers},
  };
  return doc.dump(2);
}

}  // namespace tinyode
