#include <doctest.h>

#include <cmath>
#include <random>

#include "model_oracle.hpp"
#include "tinyode/model.hpp"
#include "tinyode/parallel.hpp"

using namespace tinyode;

namespace {

FloatTensor random_image(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return oracle::random_tensor({3, 96, 96}, rng, -2.0, 2.0);
}

double largest_diff(const FloatTensor& a, const FloatTensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

WeightContainer round_trip(const WeightContainer& c) {
  return load(save(c));
}

}  // namespace

TEST_CASE("block outputs follow the topology shapes") {
  const Model m(gen_random_weights(1, {}));
  InferenceTrace trace;
  const FloatTensor logits = m.infer(random_image(3), NumericPath::kFloat, &trace);
  REQUIRE(trace.blocks.size() == kBlockRoleCount);
  const Shape expected[] = {{64, 24, 24}, {64, 24, 24}, {128, 12, 12}, {128, 12, 12},
                            {256, 6, 6},  {256, 6, 6},  {10}};
  for (std::size_t i = 0; i < kBlockRoleCount; ++i) {
    CHECK(trace.blocks[i].role == kBlockRoles[i]);
    CHECK(trace.blocks[i].output.shape() == expected[i]);
    CHECK(trace.blocks[i].output.shape() == m.topology().blocks[i].out_shape);
  }
  CHECK(logits.shape() == Shape{10});
}

TEST_CASE("zero image gives finite logits on both paths") {
  const Model m(gen_random_weights(2, {}));
  for (NumericPath p : {NumericPath::kFloat, NumericPath::kFixed}) {
    const FloatTensor logits = m.infer(FloatTensor({3, 96, 96}), p);
    REQUIRE(logits.size() == 10);
    for (double v : logits.data()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("random weights are deterministic per seed") {
  const auto a = save(gen_random_weights(7, {}));
  CHECK(a == save(gen_random_weights(7, {})));
  CHECK(a != save(gen_random_weights(8, {})));
}

TEST_CASE("float path matches a reference built from container entries") {
  for (QuantMode mode : {QuantMode::kLlt8, QuantMode::kLlt4, QuantMode::kNone}) {
    CAPTURE(std::string(quant_mode_name(mode)));
    ModelConfig cfg;
    cfg.quant = QuantConfig::from_mode(mode);
    cfg.ode_iterations = 3;
    const WeightContainer c = round_trip(gen_random_weights(11, cfg));
    const Model m(c);
    InferenceTrace trace;
    const FloatTensor img = random_image(5);
    const FloatTensor logits = m.infer(img, NumericPath::kFloat, &trace);

    const oracle::ReferenceNet ref(c, 3);
    // Each block is checked on the engine's own input so a LUT boundary
    // crossing upstream cannot cascade.
    const FloatTensor* in = &img;
    auto check = [&](std::size_t i, const FloatTensor& expect) {
      CAPTURE(i);
      CHECK(largest_diff(trace.blocks[i].output, expect) <= 1e-9 * std::max(1.0, max_abs(expect)));
      in = &trace.blocks[i].output;
    };
    check(0, ref.pre(*in));
    check(1, ref.ode(*in, "ode1"));
    check(2, ref.ds(*in, "ds1"));
    check(3, ref.ode(*in, "ode2"));
    check(4, ref.ds(*in, "ds2"));
    check(5, ref.attn(*in));
    check(6, ref.post(*in));
    CHECK(largest_diff(logits, trace.blocks[6].output) == 0.0);
  }
}

TEST_CASE("run_block agrees with chained inference") {
  const Model m(gen_random_weights(4, {}));
  InferenceTrace trace;
  const FloatTensor img = random_image(9);
  m.infer(img, NumericPath::kFloat, &trace);
  FloatTensor x = img;
  for (std::size_t i = 0; i < kBlockRoleCount; ++i) {
    x = m.run_block(kBlockRoles[i], x, NumericPath::kFloat);
    CHECK(largest_diff(x, trace.blocks[i].output) == 0.0);
  }
}

TEST_CASE("fixed path tracks the float path") {
  for (QuantMode mode : {QuantMode::kNone, QuantMode::kLlt8}) {
    CAPTURE(std::string(quant_mode_name(mode)));
    ModelConfig cfg;
    cfg.quant = QuantConfig::from_mode(mode);
    const Model m(gen_random_weights(21, cfg));
    const FloatTensor img = random_image(13);
    const FloatTensor f = m.infer(img, NumericPath::kFloat);
    const FloatTensor q = m.infer(img, NumericPath::kFixed);
    const double dev = largest_diff(f, q) / std::max(1e-6, max_abs(f));
    MESSAGE("relative logit deviation " << dev);
    CHECK(dev < 0.05);
  }
}

TEST_CASE("fixed path is identical across thread counts") {
  const Model m(gen_random_weights(5, {}));
  const FloatTensor img = random_image(17);
  set_thread_count(1);
  const FloatTensor one = m.infer(img, NumericPath::kFixed);
  set_thread_count(4);
  const FloatTensor four = m.infer(img, NumericPath::kFixed);
  set_thread_count(0);
  CHECK(largest_diff(one, four) == 0.0);
}

TEST_CASE("ode iteration override") {
  const WeightContainer c = gen_random_weights(6, {});
  CHECK(Model(c).config().ode_iterations == 10);
  const Model m(c, {.ode_iterations = 2});
  CHECK(m.config().ode_iterations == 2);
  CHECK(m.topology().block(BlockRole::kOde1).repeats == 2);
  CHECK_THROWS(Model(c, {.ode_iterations = 0}));
}

TEST_CASE("llt layers follow the quantization config") {
  const Model m(gen_random_weights(3, {}));
  int quantized = 0;
  for (const ConvLayer* l : m.conv_layers()) {
    const bool expect = l->name().rfind("ds", 0) == 0 || l->name().rfind("mhsa", 0) == 0;
    CHECK_MESSAGE(l->is_quantized() == expect, l->name());
    quantized += l->is_quantized();
  }
  CHECK(quantized == 8);
}

TEST_CASE("container problems are reported by entry") {
  const WeightContainer good = gen_random_weights(1, {});

  SUBCASE("missing entry") {
    WeightContainer c;
    c.metadata = good.metadata;
    for (const WeightEntry& e : good.entries())
      if (e.name != "ds1.bn2.shift") c.add(e);
    CHECK_THROWS_AS(Model{c}, MissingEntryError);
  }
  SUBCASE("corrupted lut names the layer") {
    WeightContainer c = good;
    WeightEntry& e = c.get_mutable("ds2.conv1.act_lut");
    FloatTensor t = e.to_float();
    t[100] = 0.0;  // out of order inside its segment
    e = WeightEntry::from_f32(e.name, t);
    e.scale = 1.0f;
    try {
      Model m(c);
      FAIL("expected LutInvariantError");
    } catch (const LutInvariantError& err) {
      CHECK(std::string(err.what()).find("ds2.conv1") != std::string::npos);
    }
  }
  SUBCASE("wrong dtype for an llt layer") {
    WeightContainer c = good;
    WeightEntry& e = c.get_mutable("mhsa.conv2.weight");
    e = WeightEntry::from_fixed(e.name, e.to_float(), DType::kFx16_4);
    CHECK_THROWS_AS(Model{c}, ContainerError);
  }
  SUBCASE("wrong shape") {
    WeightContainer c = good;
    WeightEntry& e = c.get_mutable("mhsa.attn.wq");
    e = WeightEntry::from_fixed(e.name, FloatTensor({64, 32}), DType::kFx16_4);
    CHECK_THROWS_AS(Model{c}, ContainerError);
  }
}

TEST_CASE("input validation") {
  const Model m(gen_random_weights(1, {}));
  CHECK_THROWS_AS(m.infer(FloatTensor({3, 64, 64}), NumericPath::kFloat), ShapeError);
  CHECK_THROWS_AS(m.run_block(BlockRole::kDs1, FloatTensor({64, 12, 12}), NumericPath::kFloat), ShapeError);
}

TEST_CASE("normalize_image and argmax") {
  ModelConfig cfg;
  FloatTensor rgb({3, 1, 2});
  rgb[0] = 0.5;
  rgb[1] = 1.0;
  rgb[5] = 0.0;
  const FloatTensor n = normalize_image(rgb, cfg);
  CHECK(n[0] == 0.0);
  CHECK(n[1] == 2.0);
  CHECK(n[5] == -2.0);
  FloatTensor l({4});
  l[1] = 3.0;
  l[2] = 3.0;
  CHECK(argmax(l) == 1);
}
