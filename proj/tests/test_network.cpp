#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "sprnet/gfpn.hpp"
#include "sprnet/gradcheck.hpp"
#include "sprnet/heads.hpp"
#include "sprnet/label_assign.hpp"
#include "sprnet/mask_branch.hpp"
#include "test_util.hpp"

namespace sprnet {
namespace {

using testing::random_tensor;

GateParams<double> zero_gate(int p) {
  GateParams<double> g;
  g.depthwise = {Tensor<double>(Shape{p, 1, 3, 3}), Tensor<double>(Shape{p, 1, 1, 1}), ConvSpec{1, 1, 1}};
  g.pointwise = {Tensor<double>(Shape{p, p, 1, 1}), Tensor<double>(Shape{p, 1, 1, 1}), ConvSpec{}};
  return g;
}

GateParams<double> random_gate(int p, std::mt19937_64& rng) {
  GateParams<double> g;
  g.depthwise = {random_tensor(Shape{p, 1, 3, 3}, rng), random_tensor(Shape{p, 1, 1, 1}, rng), ConvSpec{1, 1, 1}};
  g.pointwise = {random_tensor(Shape{p, p, 1, 1}, rng), random_tensor(Shape{p, 1, 1, 1}, rng), ConvSpec{}};
  return g;
}

TEST(Backbone, StageSizesAndBatch) {
  ParamStore<double> store;
  std::mt19937_64 rng(1);
  GfpnBackbone<double> bb(BackboneConfig{}, store, rng);
  const auto stages = bb.backbone_forward(random_tensor(Shape{2, 3, 128, 128}, rng));
  ASSERT_EQ(stages.size(), 3u);
  EXPECT_EQ(stages[0].shape(), (Shape{2, 32, 32, 32}));
  EXPECT_EQ(stages[1].shape(), (Shape{2, 64, 16, 16}));
  EXPECT_EQ(stages[2].shape(), (Shape{2, 128, 8, 8}));
}

TEST(Backbone, ZeroImageZeroFeatures) {
  ParamStore<double> store;
  std::mt19937_64 rng(2);
  GfpnBackbone<double> bb(BackboneConfig{}, store, rng);
  for (const auto& s : bb.backbone_forward(Tensor<double>(Shape{1, 3, 64, 64})))
    for (double v : s.data()) EXPECT_EQ(v, 0.0);
}

TEST(Backbone, IndivisibleInputNamesMultiple) {
  ParamStore<double> store;
  std::mt19937_64 rng(3);
  GfpnBackbone<double> bb(BackboneConfig{}, store, rng);
  try {
    bb.backbone_forward(Tensor<double>(Shape{1, 3, 100, 128}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("divisible by 16"), std::string::npos);
  }
}

TEST(Backbone, ConfigValidation) {
  BackboneConfig c;
  c.strides = {4, 12, 16};
  EXPECT_THROW(c.validate(), Error);
  c.strides = {8, 4, 16};
  EXPECT_THROW(c.validate(), Error);
  c.strides = {4, 8, 16};
  c.widths = {32, 0, 128};
  EXPECT_THROW(c.validate(), Error);
}

TEST(Lateral, WidthAndIdentity) {
  std::mt19937_64 rng(4);
  ParamStore<double> store;
  const auto proj = make_conv(store, "lat", 128, 64, 1, ConvSpec{}, rng, Init::lecun);
  EXPECT_EQ(lateral_project(random_tensor(Shape{1, 128, 8, 8}, rng), proj).shape(), (Shape{1, 64, 8, 8}));

  ConvParams<double> eye{Tensor<double>(Shape{6, 6, 1, 1}), Tensor<double>(Shape{6, 1, 1, 1}), ConvSpec{}};
  for (int i = 0; i < 6; ++i) eye.weight.at(i, i, 0, 0) = 1.0;
  const auto x = random_tensor(Shape{1, 6, 5, 5}, rng);
  const auto y = lateral_project(x, eye);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(Lateral, Gradcheck) {
  std::mt19937_64 rng(5);
  const auto x = random_tensor(Shape{1, 4, 3, 3}, rng);
  const auto w = random_tensor(Shape{3, 4, 1, 1}, rng);
  const auto b = random_tensor(Shape{3, 1, 1, 1}, rng);
  const auto r = finite_diff_check(
      [](const std::vector<Tensor<double>>& in) {
        const auto y = lateral_project(in[0], ConvParams<double>{in[1], in[2], ConvSpec{}});
        return sum(mul(y, y));
      },
      {x, w, b}, 1e-6, 1e-5);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(GateFuse, ZeroGateIsHalfSum) {
  std::mt19937_64 rng(6);
  const auto a = random_tensor(Shape{1, 5, 4, 4}, rng);
  const auto b = random_tensor(Shape{1, 5, 4, 4}, rng);
  const auto g = zero_gate(5);
  const auto out = gate_fuse(a, b, &g, PyramidMode::gfpn);
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_NEAR(out.data()[i], 0.5 * (a.data()[i] + b.data()[i]), 1e-12);
}

TEST(GateFuse, ZeroLowerBranch) {
  std::mt19937_64 rng(7);
  const auto a = random_tensor(Shape{1, 4, 3, 3}, rng);
  const Tensor<double> b(Shape{1, 4, 3, 3});
  const auto g = random_gate(4, rng);
  const auto out = gate_fuse(a, b, &g, PyramidMode::gfpn);
  const auto want = mul(a, gate_score(a, g));
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_DOUBLE_EQ(out.data()[i], want.data()[i]);
}

TEST(GateFuse, FpnSums) {
  const Tensor<double> a(Shape{1, 1, 1, 1}, 1.0), b(Shape{1, 1, 1, 1}, 2.0);
  EXPECT_EQ(gate_fuse<double>(a, b, nullptr, PyramidMode::fpn).item(), 3.0);
}

TEST(GateFuse, ShapeMismatchRejected) {
  const Tensor<double> a(Shape{1, 2, 4, 4}), b(Shape{1, 2, 4, 2});
  const auto g = zero_gate(2);
  EXPECT_THROW(gate_fuse(a, b, &g, PyramidMode::gfpn), Error);
}

TEST(GateFuse, ScoresInUnitInterval) {
  std::mt19937_64 rng(8);
  const auto g = random_gate(3, rng);
  const auto s = gate_score(random_tensor(Shape{1, 3, 6, 6}, rng, -50, 50), g);
  for (double v : s.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  const auto s2 = gate_score(random_tensor(Shape{1, 3, 6, 6}, rng, -2, 2), g);
  for (double v : s2.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(GateFuse, InjectedZeroMaskBlocksGradientExactly) {
  std::mt19937_64 rng(9);
  auto a = random_tensor(Shape{1, 4, 4, 4}, rng);
  auto b = random_tensor(Shape{1, 4, 4, 4}, rng);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  const auto g = random_gate(4, rng);
  GateOverride<double> ov;
  ov.score_b = Tensor<double>(b.shape());
  backward(sum(gate_fuse(a, b, &g, PyramidMode::gfpn, false, &ov)));
  for (double v : b.grad()) EXPECT_EQ(v, 0.0);
  double mag = 0;
  for (double v : a.grad()) mag += std::abs(v);
  EXPECT_GT(mag, 0.0);
}

TEST(GateFuse, SaturatedGateVanishingGradient) {
  std::mt19937_64 rng(10);
  auto b = random_tensor(Shape{1, 3, 4, 4}, rng);
  b.set_requires_grad(true);
  auto g = random_gate(3, rng);
  const auto a = random_tensor(Shape{1, 3, 4, 4}, rng);
  double prev = 1e300;
  for (double bias : {-5.0, -15.0, -30.0}) {
    b.zero_grad();
    for (double& v : g.pointwise.bias.data()) v = bias;
    backward(sum(gate_fuse(a, b, &g, PyramidMode::gfpn)));
    double mag = 0;
    for (double v : b.grad()) mag = std::max(mag, std::abs(v));
    EXPECT_LT(mag, prev);
    prev = mag;
  }
  EXPECT_LT(prev, 1e-11);
}

TEST(GateFuse, HardBlockStopsUpperGradient) {
  std::mt19937_64 rng(11);
  auto a = random_tensor(Shape{1, 3, 4, 4}, rng);
  auto b = random_tensor(Shape{1, 3, 4, 4}, rng);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  const auto g = random_gate(3, rng);
  const auto soft = gate_fuse(a, b, &g, PyramidMode::gfpn, false);
  const auto hard = gate_fuse(a, b, &g, PyramidMode::gfpn, true);
  for (std::size_t i = 0; i < soft.numel(); ++i) EXPECT_EQ(soft.data()[i], hard.data()[i]);
  backward(sum(hard));
  EXPECT_FALSE(a.has_grad());
  EXPECT_TRUE(b.has_grad());
}

TEST(Pyramid, LevelsStridesAndModes) {
  std::mt19937_64 rng(12);
  const auto image = random_tensor(Shape{1, 3, 64, 64}, rng);
  std::vector<Shape> shapes[2];
  for (int m = 0; m < 2; ++m) {
    BackboneConfig cfg;
    cfg.mode = m == 0 ? PyramidMode::gfpn : PyramidMode::fpn;
    ParamStore<double> store;
    std::mt19937_64 init(13);
    GfpnBackbone<double> bb(cfg, store, init);
    const auto pyr = bb.forward(image);
    EXPECT_EQ(pyr.strides, (std::vector<int>{4, 8, 16}));
    for (const auto& l : pyr.levels) shapes[m].push_back(l.shape());
    if (cfg.mode == PyramidMode::fpn) {
      EXPECT_EQ(bb.gate_param_count(), 0u);
      for (const auto& e : store.entries()) EXPECT_EQ(e.name.find("gate"), std::string::npos);
    }
  }
  EXPECT_EQ(shapes[0], shapes[1]);
  EXPECT_EQ(shapes[0][0], (Shape{1, 64, 16, 16}));
}

TEST(Pyramid, FpnModeIsClassicTopDown) {
  std::mt19937_64 rng(14);
  BackboneConfig cfg;
  cfg.mode = PyramidMode::fpn;
  ParamStore<double> store;
  GfpnBackbone<double> bb(cfg, store, rng);
  const auto stages = bb.backbone_forward(random_tensor(Shape{1, 3, 32, 32}, rng));
  const auto pyr = bb.build_pyramid(stages);
  auto lat = [&](int i) { return lateral_project(stages[i], bb.laterals()[i]); };
  const auto m2 = lat(2);
  const auto m1 = add(upsample_nearest2x(m2), lat(1));
  const auto m0 = add(upsample_nearest2x(m1), lat(0));
  const auto p0 = conv2d(m0, store.get("fpn.level0.smooth.weight"), store.get("fpn.level0.smooth.bias"), ConvSpec{1, 1, 1});
  for (std::size_t i = 0; i < p0.numel(); ++i) EXPECT_NEAR(pyr.levels[0].data()[i], p0.data()[i], 1e-12);
}

TEST(Pyramid, NeedsTwoStages) {
  std::mt19937_64 rng(15);
  ParamStore<double> store;
  GfpnBackbone<double> bb(BackboneConfig{}, store, rng);
  EXPECT_THROW(bb.build_pyramid({Tensor<double>(Shape{1, 32, 8, 8})}), Error);
}

TEST(Pyramid, GateParameterOverhead) {
  std::mt19937_64 rng(16);
  ParamStore<double> gfpn_store, fpn_store;
  BackboneConfig cfg;
  GfpnBackbone<double> g(cfg, gfpn_store, rng);
  cfg.mode = PyramidMode::fpn;
  GfpnBackbone<double> f(cfg, fpn_store, rng);
  const std::size_t p = 64;
  const std::size_t per_junction = p * 9 + p + p * p + p;
  EXPECT_EQ(g.gate_param_count(), 2 * per_junction);
  EXPECT_EQ(gfpn_store.parameter_count() - fpn_store.parameter_count(), 2 * per_junction);
}

TEST(Pyramid, Deterministic) {
  std::mt19937_64 rng(17);
  ParamStore<double> store;
  GfpnBackbone<double> bb(BackboneConfig{}, store, rng);
  const auto x = random_tensor(Shape{1, 3, 32, 32}, rng);
  const auto a = bb.forward(x), b = bb.forward(x);
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t i = 0; i < a.levels[l].numel(); ++i) EXPECT_EQ(a.levels[l].data()[i], b.levels[l].data()[i]);
}

TEST(Heads, ChannelCountsAndSharing) {
  std::mt19937_64 rng(18);
  ParamStore<double> store;
  HeadConfig hc;
  hc.width = 8;
  DetectionHeads<double> heads(hc, store, rng);
  const auto a = random_tensor(Shape{1, 8, 6, 6}, rng);
  const auto b = random_tensor(Shape{1, 8, 3, 5}, rng);
  EXPECT_EQ(heads.class_head_forward(a).shape(), (Shape{1, 27, 6, 6}));
  EXPECT_EQ(heads.class_head_forward(b).shape(), (Shape{1, 27, 3, 5}));
  EXPECT_EQ(heads.box_head_forward(a).shape(), (Shape{1, 36, 6, 6}));

  const auto before_a = heads.class_head_forward(a), before_b = heads.class_head_forward(b);
  store.get("head.cls.out.bias").data()[0] += 1.0;
  const auto after_a = heads.class_head_forward(a), after_b = heads.class_head_forward(b);
  EXPECT_NEAR(after_a.at(0, 0, 2, 2) - before_a.at(0, 0, 2, 2), 1.0, 1e-12);
  EXPECT_NEAR(after_b.at(0, 0, 1, 1) - before_b.at(0, 0, 1, 1), 1.0, 1e-12);
}

TEST(Heads, PriorInitialScores) {
  std::mt19937_64 rng(19);
  ParamStore<double> store;
  HeadConfig hc;
  DetectionHeads<double> heads(hc, store, rng);
  EXPECT_NEAR(store.get("head.cls.out.bias").data()[0], -std::log(99.0), 1e-12);
  const auto logits = heads.class_head_forward(random_tensor(Shape{1, 64, 8, 8}, rng, 0, 1));
  double mean = 0;
  for (double z : logits.data()) mean += detail::stable_sigmoid(z);
  mean /= double(logits.numel());
  EXPECT_NEAR(mean, 0.01, 0.003);
}

TEST(Heads, ZeroBoxOutputDecodesToAnchors) {
  std::mt19937_64 rng(20);
  ParamStore<double> store;
  HeadConfig hc;
  hc.width = 8;
  DetectionHeads<double> heads(hc, store, rng);
  for (double& v : store.get("head.box.out.weight").data()) v = 0;
  const auto deltas = heads.box_head_forward(random_tensor(Shape{1, 8, 2, 2}, rng));
  const auto lv = generate_anchors(2, 2, 8, {16, 20, 25}, {0.5, 1, 2});
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x)
      for (int a = 0; a < 9; ++a) {
        Deltas d;
        for (int j = 0; j < 4; ++j) d[j] = deltas.at(0, a * 4 + j, y, x);
        for (double v : d) EXPECT_EQ(v, 0.0);
        const Box got = decode_deltas(lv.at(y, x, a), d), want = lv.at(y, x, a);
        EXPECT_NEAR(got.x1, want.x1, 1e-12);
        EXPECT_NEAR(got.y1, want.y1, 1e-12);
        EXPECT_NEAR(got.x2, want.x2, 1e-12);
        EXPECT_NEAR(got.y2, want.y2, 1e-12);
      }
}

TEST(Heads, TowerGradcheck) {
  std::mt19937_64 rng(21);
  ParamStore<double> store;
  HeadConfig hc;
  hc.width = 3;
  hc.depth = 2;
  hc.classes = 2;
  hc.anchors = 2;
  DetectionHeads<double> heads(hc, store, rng);
  const auto x = random_tensor(Shape{1, 3, 4, 4}, rng);
  std::vector<Tensor<double>> inputs{x};
  for (auto& e : store.entries())
    if (e.name.find("box") != std::string::npos) inputs.push_back(e.value);
  const auto r = finite_diff_check(
      [&](const std::vector<Tensor<double>>& in) {
        const auto y = heads.box_head_forward(in[0]);
        return sum(mul(y, y));
      },
      inputs, 1e-6, 1e-5);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(Fusion, Widths) {
  EXPECT_EQ((FusionConfig{FusionKind::dilated, 64, 32, 40}.fused_width()), 160);
  EXPECT_EQ((FusionConfig{FusionKind::dilated, 256, 128, 40}.fused_width()), 640);
  std::mt19937_64 rng(22);
  for (auto kind : {FusionKind::dilated, FusionKind::consecutive, FusionKind::parallel1246}) {
    ParamStore<double> store;
    DecoderConfig dc;
    MaskBranch<double> mb(16, FusionConfig{kind, 64, 32, 40}, dc, store, rng);
    EXPECT_EQ(mb.fuse_multiscale(random_tensor(Shape{1, 16, 9, 7}, rng)).shape(), (Shape{1, 160, 9, 7}));
  }
}

TEST(Fusion, FullScaleWidths) {
  std::mt19937_64 rng(23);
  ParamStore<double> store;
  DecoderConfig dc;
  dc.deconv_widths = {8, 8, 8};
  dc.up_widths = {4, 4};
  MaskBranch<double> mb(8, FusionConfig{FusionKind::dilated, 256, 128, 40}, dc, store, rng);
  EXPECT_EQ(mb.fuse_multiscale(random_tensor(Shape{1, 8, 8, 8}, rng)).shape().c, 640);
}

TEST(SamplePixel, ColumnAndIndicatorVjp) {
  std::mt19937_64 rng(24);
  auto fused = random_tensor(Shape{1, 5, 4, 6}, rng);
  fused.set_requires_grad(true);
  const auto col = sample_pixel_feature(fused, PixelRef{0, 2, 3, 0});
  EXPECT_EQ(col.shape(), (Shape{1, 5, 1, 1}));
  for (int c = 0; c < 5; ++c) EXPECT_EQ(col.data()[c], fused.at(0, c, 2, 3));
  backward(sum(col));
  for (int c = 0; c < 5; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 6; ++x) EXPECT_EQ(fused.grad()[fused.index(0, c, y, x)], (y == 2 && x == 3) ? 1.0 : 0.0);
  EXPECT_THROW(sample_pixel_feature(fused, PixelRef{0, 4, 0, 0}), Error);
}

TEST(Decoder, TraceAndOutputShape) {
  std::mt19937_64 rng(25);
  ParamStore<double> store;
  DecoderConfig dc;
  dc.deconv_widths = {16, 8, 8};
  dc.up_widths = {4, 4};
  MaskBranch<double> mb(8, FusionConfig{FusionKind::dilated, 8, 4, 4}, dc, store, rng);
  DecoderTrace trace;
  const auto out = mb.reconstruct_mask(random_tensor(Shape{1, 20, 1, 1}, rng), &trace);
  EXPECT_EQ(out.shape(), (Shape{1, 3, 32, 32}));
  std::vector<int> sizes;
  for (const auto& s : trace.stages) sizes.push_back(s.h);
  EXPECT_EQ(sizes, (std::vector<int>{1, 2, 4, 8, 16, 32, 32}));
}

TEST(Decoder, ShortcutSwitch) {
  std::mt19937_64 rng(26);
  for (bool on : {true, false}) {
    ParamStore<double> store;
    DecoderConfig dc;
    dc.shortcut = on;
    MaskBranch<double> mb(8, FusionConfig{}, dc, store, rng);
    EXPECT_EQ(store.contains("mask.shortcut.weight"), on);
  }
}

TEST(Decoder, DeconvStagesAreAffine) {
  std::mt19937_64 rng(27);
  ParamStore<double> store;
  DecoderConfig dc;
  dc.deconv_widths = {12, 8, 6};
  dc.up_widths = {4, 4};
  MaskBranch<double> mb(8, FusionConfig{FusionKind::dilated, 8, 4, 4}, dc, store, rng);
  for (auto& e : store.entries())
    if (e.name.find("deconv") != std::string::npos && e.name.find("bias") != std::string::npos)
      for (double& v : e.value.data()) v = 0;
  const auto x = random_tensor(Shape{1, 20, 1, 1}, rng);
  const double lambda = -2.75;
  const auto y1 = mb.decode_to_8x8(x);
  const auto y2 = mb.decode_to_8x8(scale(x, lambda));
  EXPECT_EQ(y1.shape(), (Shape{1, 6, 8, 8}));
  for (std::size_t i = 0; i < y1.numel(); ++i) EXPECT_NEAR(y2.data()[i], lambda * y1.data()[i], 1e-12);
}

TEST(Decoder, BatchingEquivalence) {
  std::mt19937_64 rng(28);
  ParamStore<double> store;
  DecoderConfig dc;
  dc.deconv_widths = {12, 8, 6};
  dc.up_widths = {4, 4};
  MaskBranch<double> mb(8, FusionConfig{FusionKind::dilated, 8, 4, 4}, dc, store, rng);
  const auto batch = random_tensor(Shape{3, 20, 1, 1}, rng);
  const auto together = mb.reconstruct_mask(batch);
  for (int m = 0; m < 3; ++m) {
    Tensor<double> one(Shape{1, 20, 1, 1});
    for (int c = 0; c < 20; ++c) one.data()[c] = batch.at(m, c, 0, 0);
    const auto alone = mb.reconstruct_mask(one);
    for (std::size_t i = 0; i < alone.numel(); ++i) EXPECT_EQ(alone.data()[i], together.data()[m * alone.numel() + i]);
  }
}

TEST(Decoder, RandomChannelSchedules) {
  std::mt19937_64 rng(29);
  std::uniform_int_distribution<int> width(1, 12), classes(1, 4);
  for (int trial = 0; trial < 20; ++trial) {
    ParamStore<float> store;
    DecoderConfig dc;
    dc.deconv_widths = {width(rng), width(rng), width(rng)};
    dc.up_widths = {width(rng), width(rng)};
    dc.classes = classes(rng);
    dc.shortcut = trial % 2 == 0;
    FusionConfig fc{FusionKind::dilated, width(rng), width(rng), 4};
    MaskBranch<float> mb(4, fc, dc, store, rng);
    const auto out = mb.reconstruct_mask(random_tensor<float>(Shape{2, fc.fused_width(), 1, 1}, rng));
    EXPECT_EQ(out.shape(), (Shape{2, dc.classes, 32, 32}));
  }
}

TEST(Decoder, WrongInputWidthRejected) {
  std::mt19937_64 rng(30);
  ParamStore<double> store;
  MaskBranch<double> mb(8, FusionConfig{}, DecoderConfig{}, store, rng);
  EXPECT_THROW(mb.reconstruct_mask(Tensor<double>(Shape{1, 17, 1, 1})), Error);
}

TEST(Decoder, FullGradcheck) {
  std::mt19937_64 rng(31);
  ParamStore<double> store;
  DecoderConfig dc;
  dc.deconv_widths = {3, 3, 2};
  dc.up_widths = {2, 2};
  dc.classes = 2;
  MaskBranch<double> mb(4, FusionConfig{FusionKind::dilated, 2, 2, 2}, dc, store, rng);
  const auto x = random_tensor(Shape{1, 8, 1, 1}, rng);
  const auto target = random_tensor(Shape{1, 2, 32, 32}, rng);
  std::vector<Tensor<double>> inputs{x};
  std::uniform_real_distribution<double> b(0.05, 0.3);
  for (auto& e : store.entries()) {
    if (e.name.find("fuse") != std::string::npos) continue;
    // zero bias over an all-zero relu patch sits exactly on the kink
    if (e.name.ends_with(".bias"))
      for (double& v : e.value.data()) v = b(rng);
    inputs.push_back(e.value);
  }
  const auto r = finite_diff_check(
      [&](const std::vector<Tensor<double>>& in) { return sum(mul(mb.reconstruct_mask(in[0]), target)); }, inputs,
      1e-6, 1e-5);
  EXPECT_TRUE(r.passed) << r.max_rel_error << " at " << r.worst_index;
}

TEST(SelectChannel, IdentityRangeAndRoundTrip) {
  std::mt19937_64 rng(32);
  const auto one = random_tensor(Shape{1, 1, 32, 32}, rng);
  const auto s = select_mask_channel(one, 0);
  for (std::size_t i = 0; i < one.numel(); ++i) EXPECT_EQ(s.data()[i], one.data()[i]);
  const auto three = random_tensor(Shape{1, 3, 32, 32}, rng);
  EXPECT_THROW(select_mask_channel(three, 3), Error);
  EXPECT_THROW(select_mask_channel(three, -1), Error);
  const auto back = concat_channels<double>({select_mask_channel(three, 0), select_mask_channel(three, 1),
                                             select_mask_channel(three, 2)});
  for (std::size_t i = 0; i < three.numel(); ++i) EXPECT_EQ(back.data()[i], three.data()[i]);
}

}  // namespace
}  // namespace sprnet
