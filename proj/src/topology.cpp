#include "tinyode/topology.hpp"

#include <stdexcept>

namespace tinyode {

namespace {

constexpr std::size_t kStemChannels = 64;
constexpr std::size_t kAttentionDim = 64;

struct Builder {
  BlockInfo& block;
  int bits = 0;

  LayerInfo& conv(const std::string& name, ConvGeometry g, std::size_t in_hw, const std::string& input_id,
                  bool quantizable = true) {
    LayerInfo l;
    l.name = block.name() + "." + name;
    l.kind = LayerKind::kConv;
    l.geometry = g;
    l.in_h = l.in_w = in_hw;
    l.out_h = l.out_w = g.out_size(in_hw);
    l.params = g.weight_count();
    l.macs = static_cast<std::uint64_t>(g.weight_count()) * l.out_h * l.out_w;
    l.bits = quantizable ? bits : 0;
    l.input_id = input_id;
    l.input_elements = g.in_ch * in_hw * in_hw;
    block.layers.push_back(l);
    return block.layers.back();
  }

  void other(const std::string& name, LayerKind kind, std::size_t params, std::uint64_t macs = 0) {
    LayerInfo l;
    l.name = block.name() + "." + name;
    l.kind = kind;
    l.params = params;
    l.macs = macs;
    block.layers.push_back(l);
  }
};

BlockInfo pre_block(std::size_t image) {
  BlockInfo b{BlockRole::kPre, {3, image, image}, {}, 1, {}};
  Builder x{b};
  const LayerInfo conv = x.conv("conv", {3, kStemChannels, 7, 2, 3, false}, image, "image", false);
  x.other("bn", LayerKind::kBatchNorm, 2 * kStemChannels);
  const std::size_t pooled = ConvGeometry{kStemChannels, kStemChannels, 3, 2, 1, true}.out_size(conv.out_h);
  b.out_shape = {kStemChannels, pooled, pooled};
  return b;
}

BlockInfo ode_block(BlockRole role, std::size_t ch, std::size_t hw, int iterations, int bits) {
  BlockInfo b{role, {ch, hw, hw}, {ch, hw, hw}, iterations, {}};
  Builder x{b, bits};
  const std::string prefix = b.name();
  for (const char* stage : {"1", "2"}) {
    const std::string dsc = std::string("dsc") + stage;
    const std::string in = prefix + ".time" + stage;
    x.conv(dsc + ".dw", {ch + 1, ch + 1, 3, 1, 1, true}, hw, in);
    x.conv(dsc + ".pw", {ch + 1, ch, 1, 1, 0, false}, hw, prefix + "." + dsc + ".dw");
    x.other(std::string("bn") + stage, LayerKind::kBatchNorm, 2 * ch);
  }
  return b;
}

BlockInfo ds_block(BlockRole role, std::size_t in_ch, std::size_t hw, const std::string& input_id, int bits) {
  const std::size_t out_ch = 2 * in_ch;
  BlockInfo b{role, {in_ch, hw, hw}, {}, 1, {}};
  Builder x{b, bits};
  const std::string prefix = b.name();
  const LayerInfo c1 = x.conv("conv1", {in_ch, out_ch, 3, 2, 1, false}, hw, input_id);
  x.other("bn1", LayerKind::kBatchNorm, 2 * out_ch);
  x.conv("conv2", {out_ch, out_ch, 3, 1, 1, false}, c1.out_h, prefix + ".relu1");
  x.other("bn2", LayerKind::kBatchNorm, 2 * out_ch);
  x.conv("shortcut", {in_ch, out_ch, 1, 2, 0, false}, hw, input_id);
  x.other("shortcut_bn", LayerKind::kBatchNorm, 2 * out_ch);
  b.out_shape = {out_ch, c1.out_h, c1.out_h};
  return b;
}

BlockInfo mhsa_block(std::size_t ch, std::size_t hw, int bits) {
  BlockInfo b{BlockRole::kMhsa, {ch, hw, hw}, {ch, hw, hw}, 1, {}};
  Builder x{b, bits};
  const std::size_t d = kAttentionDim, n = hw * hw;
  x.conv("conv1", {ch + 1, d, 1, 1, 0, false}, hw, "mhsa.time1");
  x.other("bn1", LayerKind::kBatchNorm, 2 * d);
  for (const char* w : {"attn.wq", "attn.wk", "attn.wv"}) {
    x.other(w, LayerKind::kProjection, d * d, static_cast<std::uint64_t>(n) * d * d);
  }
  x.other("attn.rel", LayerKind::kPositionTable, d * n);
  // Q K^T, Q R^T and A V over all heads.
  x.other("attn.core", LayerKind::kAttentionCore, 0, 3 * static_cast<std::uint64_t>(n) * n * d);
  x.other("ln", LayerKind::kLayerNorm, 2 * d * n);
  x.conv("conv2", {d + 1, ch, 1, 1, 0, false}, hw, "mhsa.time2");
  return b;
}

BlockInfo post_block(std::size_t ch, std::size_t hw, std::size_t classes) {
  BlockInfo b{BlockRole::kPost, {ch, hw, hw}, {classes}, 1, {}};
  Builder x{b};
  x.other("linear", LayerKind::kLinear, classes * ch + classes, static_cast<std::uint64_t>(classes) * ch);
  return b;
}

}  // namespace

const char* role_name(BlockRole role) {
  switch (role) {
    case BlockRole::kPre: return "pre";
    case BlockRole::kOde1: return "ode1";
    case BlockRole::kDs1: return "ds1";
    case BlockRole::kOde2: return "ode2";
    case BlockRole::kDs2: return "ds2";
    case BlockRole::kMhsa: return "mhsa";
    case BlockRole::kPost: return "post";
  }
  return "?";
}

const char* path_name(NumericPath p) { return p == NumericPath::kFloat ? "float" : "fixed"; }

NumericPath parse_path(std::string_view s) {
  if (s == "float") return NumericPath::kFloat;
  if (s == "fixed") return NumericPath::kFixed;
  throw std::invalid_argument("unknown numeric path '" + std::string(s) + "' (expected float or fixed)");
}

const char* quant_mode_name(QuantMode m) {
  switch (m) {
    case QuantMode::kNone: return "none";
    case QuantMode::kLlt4: return "llt4";
    case QuantMode::kLlt8: return "llt8";
  }
  return "?";
}

QuantMode parse_quant_mode(std::string_view s) {
  if (s == "none") return QuantMode::kNone;
  if (s == "llt4") return QuantMode::kLlt4;
  if (s == "llt8") return QuantMode::kLlt8;
  throw std::invalid_argument("unknown quantization mode '" + std::string(s) + "' (expected none, llt4 or llt8)");
}

QuantConfig QuantConfig::ds_block3(int n) {
  QuantConfig q;
  for (BlockRole r : {BlockRole::kDs1, BlockRole::kDs2, BlockRole::kMhsa}) q.bits[role_index(r)] = n;
  q.validate();
  return q;
}

QuantConfig QuantConfig::from_mode(QuantMode mode) {
  switch (mode) {
    case QuantMode::kNone: return none();
    case QuantMode::kLlt4: return ds_block3(4);
    case QuantMode::kLlt8: return ds_block3(8);
  }
  return none();
}

bool QuantConfig::any() const {
  for (int b : bits)
    if (b != 0) return true;
  return false;
}

void QuantConfig::validate() const {
  for (BlockRole r : kBlockRoles) {
    const int b = for_role(r);
    if (b == 0) continue;
    if (r == BlockRole::kPre || r == BlockRole::kPost) {
      throw std::invalid_argument(std::string(role_name(r)) + " runs in floating point and cannot be quantized");
    }
    if (b != 4 && b != 8) {
      throw std::invalid_argument("quantization bit width for " + std::string(role_name(r)) + " must be 4 or 8, got " +
                                  std::to_string(b));
    }
  }
}

QuantMode QuantConfig::mode() const {
  if (*this == none()) return QuantMode::kNone;
  if (*this == ds_block3(4)) return QuantMode::kLlt4;
  if (*this == ds_block3(8)) return QuantMode::kLlt8;
  throw std::invalid_argument("quantization configuration is not one of none, llt4, llt8");
}

void ModelConfig::validate() const {
  if (ode_iterations < 1) throw std::invalid_argument("ODE iterations must be at least 1");
  if (heads == 0 || kAttentionDim % heads != 0) {
    throw std::invalid_argument("head count must divide the attention width " + std::to_string(kAttentionDim));
  }
  if (classes == 0) throw std::invalid_argument("class count must be positive");
  if (image_size != 96) throw std::invalid_argument("only 96x96 inputs are supported");
  if (granularity < 1) throw std::invalid_argument("LUT granularity must be positive");
  for (double s : stddev)
    if (!(s > 0)) throw std::invalid_argument("normalisation std must be positive");
  quant.validate();
}

ContainerMetadata ModelConfig::to_metadata() const {
  ContainerMetadata m;
  m.ode_iterations = static_cast<std::uint32_t>(ode_iterations);
  m.heads = static_cast<std::uint32_t>(heads);
  m.classes = static_cast<std::uint32_t>(classes);
  m.granularity = static_cast<std::uint32_t>(granularity);
  m.image_size = static_cast<std::uint32_t>(image_size);
  m.attention = attention == AttentionActivation::kSoftmax ? 1 : 0;
  for (std::size_t i = 0; i < kBlockRoleCount; ++i) m.quant_bits[i] = static_cast<std::uint8_t>(quant.bits[i]);
  for (std::size_t i = 0; i < 3; ++i) {
    m.mean[i] = static_cast<float>(mean[i]);
    m.stddev[i] = static_cast<float>(stddev[i]);
  }
  return m;
}

ModelConfig ModelConfig::from_metadata(const ContainerMetadata& m) {
  ModelConfig c;
  c.ode_iterations = static_cast<int>(m.ode_iterations);
  c.heads = m.heads;
  c.classes = m.classes;
  c.granularity = static_cast<int>(m.granularity);
  c.image_size = m.image_size;
  if (m.attention > 1) throw ContainerError("unknown attention activation code " + std::to_string(m.attention));
  c.attention = m.attention == 1 ? AttentionActivation::kSoftmax : AttentionActivation::kRelu;
  for (std::size_t i = 0; i < kBlockRoleCount; ++i) c.quant.bits[i] = m.quant_bits[i];
  for (std::size_t i = 0; i < 3; ++i) {
    c.mean[i] = m.mean[i];
    c.stddev[i] = m.stddev[i];
  }
  c.validate();
  return c;
}

std::size_t BlockInfo::params() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.params;
  return n;
}

std::uint64_t BlockInfo::macs_per_pass() const {
  std::uint64_t n = 0;
  for (const auto& l : layers) n += l.macs;
  return n;
}

const LayerInfo& BlockInfo::layer(const std::string& name) const {
  for (const auto& l : layers)
    if (l.name == name) return l;
  throw std::out_of_range("block " + this->name() + " has no layer " + name);
}

ModelTopology describe_model(const ModelConfig& config) {
  config.validate();
  ModelTopology t{config, {}};
  auto bits = [&](BlockRole r) { return config.quant.for_role(r); };
  t.blocks.push_back(pre_block(config.image_size));
  const std::size_t hw1 = t.blocks.back().out_shape[1];
  t.blocks.push_back(ode_block(BlockRole::kOde1, kStemChannels, hw1, config.ode_iterations, bits(BlockRole::kOde1)));
  t.blocks.push_back(ds_block(BlockRole::kDs1, kStemChannels, hw1, "ode1.out", bits(BlockRole::kDs1)));
  const std::size_t ch2 = t.blocks.back().out_shape[0], hw2 = t.blocks.back().out_shape[1];
  t.blocks.push_back(ode_block(BlockRole::kOde2, ch2, hw2, config.ode_iterations, bits(BlockRole::kOde2)));
  t.blocks.push_back(ds_block(BlockRole::kDs2, ch2, hw2, "ode2.out", bits(BlockRole::kDs2)));
  const std::size_t ch3 = t.blocks.back().out_shape[0], hw3 = t.blocks.back().out_shape[1];
  t.blocks.push_back(mhsa_block(ch3, hw3, bits(BlockRole::kMhsa)));
  t.blocks.push_back(post_block(ch3, hw3, config.classes));
  return t;
}

}  // namespace tinyode
