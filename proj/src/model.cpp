#include "tinyode/model.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

#include "tinyode/detail/conv_core.hpp"
#include "tinyode/ode.hpp"

namespace tinyode {

// ---------------------------------------------------------------- layers

ConvLayer ConvLayer::plain(std::string name, ConvGeometry geometry, const FloatTensor& weight) {
  ConvLayer l;
  l.name_ = std::move(name);
  const ConvSpec given{geometry, weight, std::nullopt};
  l.fixed_spec_ = FixedConvSpec::from_float(given, kWeightFormat);
  // Both paths use the Q4.12 values.
  l.float_spec_ = ConvSpec{geometry, l.fixed_spec_.weight.to_float(), std::nullopt};
  return l;
}

ConvLayer ConvLayer::quantized(std::string name, ConvGeometry geometry, IntTensor codes, LutQuantizer activation) {
  geometry.validate();
  if (codes.codes.shape() != geometry.weight_shape()) {
    throw ShapeError(name + ": weight codes " + shape_string(codes.codes.shape()) + " do not match " +
                     shape_string(geometry.weight_shape()));
  }
  if (activation.kind() != QuantKind::kActivation) {
    throw std::invalid_argument(name + ": input quantizer must be an activation quantizer");
  }
  ConvLayer l;
  l.name_ = std::move(name);
  l.float_spec_ = ConvSpec{geometry, codes.dequantize(), std::nullopt};
  // One level of the activation LUT times one weight step, landing in Q10.10.
  l.requant_ = Requantizer(std::ldexp(activation.scale(), -activation.bits()) * codes.step *
                           std::ldexp(1.0, kActivationFormat.frac_bits()));
  l.activation_ = std::move(activation);
  l.codes_ = std::move(codes);
  return l;
}

FloatTensor ConvLayer::forward(const FloatTensor& x) const {
  if (!activation_) return conv2d(x, float_spec_);
  return conv2d(fake_quantize_activations(x, *activation_), float_spec_);
}

FixedTensor ConvLayer::forward(const FixedTensor& x) const {
  if (!activation_) return conv2d(x, fixed_spec_, kActivationFormat);
  const ConvGeometry& g = float_spec_.geometry;
  g.check_input(x.shape());
  const FixedActivationQuantizer fq(*activation_, x.format);
  BasicTensor<std::int32_t> levels(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) levels[i] = fq.level(x.raw[i]);
  const std::size_t h = x.shape()[1], w = x.shape()[2], oh = g.out_size(h), ow = g.out_size(w);
  FixedTensor out{BasicTensor<std::int32_t>({g.out_ch, oh, ow}), kActivationFormat};
  detail::conv_planes<std::int64_t, std::int64_t>(
      g, h, w, std::span<const std::int32_t>(levels.data()), std::span<const std::int32_t>(codes_->codes.data()), [&](std::size_t oc, std::span<const std::int64_t> plane) {
        std::int32_t* dst = out.raw.data().data() + oc * oh * ow;
        for (std::size_t i = 0; i < plane.size(); ++i) {
          dst[i] = static_cast<std::int32_t>(saturate(requant_.apply_even(plane[i]), kActivationFormat));
        }
      });
  return out;
}

BatchNormLayer BatchNormLayer::from_params(const NormParams& p) {
  BatchNormLayer l;
  l.fixed = FixedNormParams::from_float(p, kWeightFormat);
  l.params = {l.fixed.scale.to_float(), l.fixed.shift.to_float()};
  return l;
}

// ---------------------------------------------------------------- blocks

namespace {

FixedTensor to_tokens(const FixedTensor& x) { return {feature_to_tokens(x.raw), x.format}; }
FloatTensor to_tokens(const FloatTensor& x) { return feature_to_tokens(x); }
FixedTensor from_tokens(const FixedTensor& x, std::size_t h, std::size_t w) {
  return {tokens_to_feature(x.raw, h, w), x.format};
}
FloatTensor from_tokens(const FloatTensor& x, std::size_t h, std::size_t w) { return tokens_to_feature(x, h, w); }

struct PreBlock {
  ConvSpec conv;
  NormParams bn;

  FloatTensor forward(const FloatTensor& x) const { return maxpool3x3s2(relu(batchnorm(conv2d(x, conv), bn))); }
};

struct OdeBlock {
  ConvLayer dw1, pw1, dw2, pw2;
  BatchNormLayer bn1, bn2;

  template <class T>
  T rhs(const T& z, double t) const {
    T h = relu(bn1.forward(pw1.forward(dw1.forward(add_time(z, t)))));
    return bn2.forward(pw2.forward(dw2.forward(add_time(h, t))));
  }

  template <class T>
  T forward(const T& z, int iterations) const {
    return ode_solve(z, OdeSchedule(iterations), [this](const T& x, double t) { return rhs(x, t); });
  }
};

struct DsBlock {
  ConvLayer conv1, conv2, shortcut;
  BatchNormLayer bn1, bn2, shortcut_bn;

  template <class T>
  T forward(const T& x) const {
    const T main = bn2.forward(conv2.forward(relu(bn1.forward(conv1.forward(x)))));
    return relu(add(main, shortcut_bn.forward(shortcut.forward(x))));
  }
};

struct MhsaBlock {
  ConvLayer conv1, conv2;
  BatchNormLayer bn1;
  AttentionSpec attention;
  std::vector<RelPosEncoding> rel;
  FixedAttentionSpec fixed_attention;
  NormParams ln;
  FixedNormParams fixed_ln;

  FloatTensor attend(const FloatTensor& tokens) const { return mhsa(tokens, attention, rel, ln); }
  FixedTensor attend(const FixedTensor& tokens) const { return mhsa(tokens, fixed_attention, fixed_ln); }

  // Executed once, so both time planes carry t = 0.
  template <class T>
  T forward(const T& x) const {
    const std::size_t h = x.shape()[1], w = x.shape()[2];
    const T a = relu(bn1.forward(conv1.forward(add_time(x, 0.0))));
    const T m = from_tokens(attend(to_tokens(a)), h, w);
    return relu(conv2.forward(add_time(m, 0.0)));
  }
};

struct PostBlock {
  FloatTensor weight, bias;

  FloatTensor forward(const FloatTensor& x) const { return linear(avgpool_global(x), weight, bias); }
};

// ---------------------------------------------------------------- loading

FloatTensor load_f32(const WeightContainer& c, const std::string& name, const Shape& shape) {
  return c.expect(name, shape).to_float();
}

// Block parameters are held in Q4.12; f32 entries are rounded on load.
FloatTensor load_q412(const WeightContainer& c, const std::string& name, const Shape& shape) {
  const WeightEntry& e = c.expect(name, shape);
  if (e.dtype != DType::kF32 && e.dtype != DType::kFx16_4) {
    throw ContainerError("entry '" + name + "' has dtype " + dtype_name(e.dtype) + ", expected fx16_4 or f32");
  }
  return FixedTensor::from_float(e.to_float(), kWeightFormat).to_float();
}

LutQuantizer load_activation_lut(const WeightContainer& c, const LayerInfo& l, int granularity) {
  const std::string name = l.name + ".act_lut";
  const std::size_t size = (std::size_t{1} << l.bits) * static_cast<std::size_t>(granularity);
  const WeightEntry& e = c.expect(name, {size});
  if (e.dtype != DType::kF32) throw ContainerError("entry '" + name + "' must be f32");
  if (!e.scale || !(*e.scale > 0.0f)) throw ContainerError("entry '" + name + "' needs a positive scale");
  const FloatTensor table = e.to_float();
  try {
    return LutQuantizer::from_table(table.data(), l.bits, granularity, *e.scale, QuantKind::kActivation);
  } catch (const LutInvariantError& err) {
    throw LutInvariantError("layer " + l.name + ": " + err.what());
  }
}

ConvLayer load_conv(const WeightContainer& c, const LayerInfo& l, int granularity) {
  const std::string wname = l.name + ".weight";
  const Shape shape = l.geometry.weight_shape();
  if (l.bits == 0) return ConvLayer::plain(l.name, l.geometry, load_q412(c, wname, shape));
  const WeightEntry& e = c.expect(wname, shape);
  const DType want = l.bits == 8 ? DType::kI8 : DType::kI4Packed;
  if (e.dtype != want) {
    throw ContainerError("entry '" + wname + "' has dtype " + dtype_name(e.dtype) + ", expected " + dtype_name(want));
  }
  if (!e.scale || !(*e.scale > 0.0f)) throw ContainerError("entry '" + wname + "' needs a positive scale");
  IntTensor codes{e.to_codes(), l.bits, weight_step(l.bits, *e.scale)};
  const int limit = (1 << (l.bits - 1)) - 1;
  for (std::int32_t v : codes.codes.data()) {
    if (v < -limit || v > limit) {
      throw ContainerError("entry '" + wname + "' holds code " + std::to_string(v) + " outside +-" +
                           std::to_string(limit));
    }
  }
  return ConvLayer::quantized(l.name, l.geometry, std::move(codes), load_activation_lut(c, l, granularity));
}

BatchNormLayer load_bn(const WeightContainer& c, const std::string& name, std::size_t channels) {
  return BatchNormLayer::from_params(
      {load_q412(c, name + ".scale", {channels}), load_q412(c, name + ".shift", {channels})});
}

std::size_t bn_channels(const BlockInfo& b, const std::string& name) { return b.layer(name).params / 2; }

}  // namespace

struct Model::Blocks {
  PreBlock pre;
  OdeBlock ode1, ode2;
  DsBlock ds1, ds2;
  MhsaBlock mhsa;
  PostBlock post;

  template <class T>
  T feature(const ModelTopology& t, BlockRole role, const T& x) const {
    const BlockInfo& b = t.block(role);
    if (x.shape() != b.in_shape) {
      throw ShapeError(b.name() + " expects " + shape_string(b.in_shape) + ", got " + shape_string(x.shape()));
    }
    const int c = t.config.ode_iterations;
    switch (role) {
      case BlockRole::kOde1: return ode1.forward(x, c);
      case BlockRole::kDs1: return ds1.forward(x);
      case BlockRole::kOde2: return ode2.forward(x, c);
      case BlockRole::kDs2: return ds2.forward(x);
      case BlockRole::kMhsa: return mhsa.forward(x);
      default: break;
    }
    throw std::logic_error("not a feature-extraction block");
  }
};

Model::Model(const WeightContainer& weights, const BuildOptions& options) : blocks_(std::make_unique<Blocks>()) {
  ModelConfig config = ModelConfig::from_metadata(weights.metadata);
  if (options.ode_iterations) config.ode_iterations = *options.ode_iterations;
  topology_ = describe_model(config);
  const int k = config.granularity;
  auto conv = [&](const BlockInfo& b, const std::string& n) { return load_conv(weights, b.layer(b.name() + "." + n), k); };
  auto bn = [&](const BlockInfo& b, const std::string& n) {
    const std::string full = b.name() + "." + n;
    return load_bn(weights, full, bn_channels(b, full));
  };

  {
    const BlockInfo& b = topology_.block(BlockRole::kPre);
    const LayerInfo& l = b.layer("pre.conv");
    const std::size_t ch = bn_channels(b, "pre.bn");
    blocks_->pre.conv = ConvSpec{l.geometry, load_f32(weights, "pre.conv.weight", l.geometry.weight_shape()), std::nullopt};
    blocks_->pre.bn = {load_f32(weights, "pre.bn.scale", {ch}), load_f32(weights, "pre.bn.shift", {ch})};
  }
  for (auto [role, block] : {std::pair{BlockRole::kOde1, &blocks_->ode1}, std::pair{BlockRole::kOde2, &blocks_->ode2}}) {
    const BlockInfo& b = topology_.block(role);
    *block = OdeBlock{conv(b, "dsc1.dw"), conv(b, "dsc1.pw"), conv(b, "dsc2.dw"), conv(b, "dsc2.pw"),
                      bn(b, "bn1"), bn(b, "bn2")};
  }
  for (auto [role, block] : {std::pair{BlockRole::kDs1, &blocks_->ds1}, std::pair{BlockRole::kDs2, &blocks_->ds2}}) {
    const BlockInfo& b = topology_.block(role);
    *block = DsBlock{conv(b, "conv1"), conv(b, "conv2"), conv(b, "shortcut"),
                     bn(b, "bn1"), bn(b, "bn2"), bn(b, "shortcut_bn")};
  }
  {
    const BlockInfo& b = topology_.block(BlockRole::kMhsa);
    MhsaBlock& m = blocks_->mhsa;
    m.conv1 = conv(b, "conv1");
    m.conv2 = conv(b, "conv2");
    m.bn1 = bn(b, "bn1");
    const std::size_t d = m.conv1.geometry().out_ch, h = b.in_shape[1], w = b.in_shape[2];
    const std::size_t heads = config.heads, dh = d / heads;
    m.attention = AttentionSpec{heads, load_q412(weights, "mhsa.attn.wq", {d, d}),
                                load_q412(weights, "mhsa.attn.wk", {d, d}), load_q412(weights, "mhsa.attn.wv", {d, d}),
                                config.attention};
    const FloatTensor rh = load_q412(weights, "mhsa.attn.rel_h", {heads, h, dh});
    const FloatTensor rw = load_q412(weights, "mhsa.attn.rel_w", {heads, w, dh});
    for (std::size_t i = 0; i < heads; ++i) {
      FloatTensor th({h, dh}), tw({w, dh});
      std::copy_n(rh.data().begin() + static_cast<std::ptrdiff_t>(i * h * dh), h * dh, th.data().begin());
      std::copy_n(rw.data().begin() + static_cast<std::ptrdiff_t>(i * w * dh), w * dh, tw.data().begin());
      m.rel.push_back({std::move(th), std::move(tw)});
    }
    m.fixed_attention = FixedAttentionSpec::from_float(m.attention, m.rel);
    m.fixed_ln = FixedNormParams::from_float(
        {load_q412(weights, "mhsa.ln.scale", {h * w, d}), load_q412(weights, "mhsa.ln.shift", {h * w, d})});
    m.ln = {m.fixed_ln.scale.to_float(), m.fixed_ln.shift.to_float()};
  }
  {
    const std::size_t ch = topology_.block(BlockRole::kPost).in_shape[0];
    blocks_->post.weight = load_f32(weights, "post.linear.weight", {config.classes, ch});
    blocks_->post.bias = load_f32(weights, "post.linear.bias", {config.classes});
  }
}

Model::~Model() = default;
Model::Model(Model&&) noexcept = default;
Model& Model::operator=(Model&&) noexcept = default;

std::vector<const ConvLayer*> Model::conv_layers() const {
  const Blocks& b = *blocks_;
  return {&b.ode1.dw1, &b.ode1.pw1, &b.ode1.dw2, &b.ode1.pw2, &b.ds1.conv1, &b.ds1.conv2, &b.ds1.shortcut,
          &b.ode2.dw1, &b.ode2.pw1, &b.ode2.dw2, &b.ode2.pw2, &b.ds2.conv1, &b.ds2.conv2, &b.ds2.shortcut,
          &b.mhsa.conv1, &b.mhsa.conv2};
}

FloatTensor Model::run_block(BlockRole role, const FloatTensor& x, NumericPath path) const {
  if (role == BlockRole::kPre) return blocks_->pre.forward(x);
  if (role == BlockRole::kPost) return blocks_->post.forward(x);
  if (path == NumericPath::kFloat) return blocks_->feature(topology_, role, x);
  return blocks_->feature(topology_, role, FixedTensor::from_float(x, kActivationFormat)).to_float();
}

FloatTensor Model::infer(const FloatTensor& image, NumericPath path, InferenceTrace* trace) const {
  const BlockInfo& pre = topology_.block(BlockRole::kPre);
  if (image.shape() != pre.in_shape) {
    throw ShapeError("input image must be " + shape_string(pre.in_shape) + ", got " + shape_string(image.shape()));
  }
  if (trace) trace->blocks.clear();
  auto record = [&](BlockRole r, const FloatTensor& t) {
    if (trace) trace->blocks.push_back({r, t});
  };
  constexpr BlockRole kFeature[] = {BlockRole::kOde1, BlockRole::kDs1, BlockRole::kOde2, BlockRole::kDs2,
                                    BlockRole::kMhsa};
  FloatTensor x = blocks_->pre.forward(image);
  record(BlockRole::kPre, x);
  if (path == NumericPath::kFloat) {
    for (BlockRole r : kFeature) {
      x = blocks_->feature(topology_, r, x);
      record(r, x);
    }
  } else {
    FixedTensor f = FixedTensor::from_float(x, kActivationFormat);
    for (BlockRole r : kFeature) {
      f = blocks_->feature(topology_, r, f);
      if (trace) record(r, f.to_float());
    }
    x = f.to_float();
  }
  FloatTensor logits = blocks_->post.forward(x);
  record(BlockRole::kPost, logits);
  return logits;
}

FloatTensor normalize_image(const FloatTensor& rgb, const ModelConfig& config) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) throw ShapeError("image must be [3, H, W], got " + shape_string(rgb.shape()));
  FloatTensor out(rgb.shape());
  const std::size_t plane = rgb.dim(1) * rgb.dim(2);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = (rgb[c * plane + i] - config.mean[c]) / config.stddev[c];
  return out;
}

std::size_t argmax(const FloatTensor& logits) {
  if (logits.size() == 0) throw ShapeError("argmax of an empty tensor");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

}  // namespace tinyode
