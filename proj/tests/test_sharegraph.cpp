#include <gtest/gtest.h>

#include "dhp/sharegraph.hpp"

namespace dhp {
namespace {

NetDescription residual(bool share) {
  NetDescription d;
  d.family = Family::kResidual;
  d.widths = {16, 32};
  d.blocks = 2;
  d.share_latents = share;
  return d;
}

std::string latent_of(const SharingGraph& g, const LatentBinding& b) {
  std::string s;
  for (const auto& seg : b.segments) {
    if (!s.empty()) s += "+";
    s += g.latents()[seg.latent].name;
    if (seg.repeat != 1) s += "x" + std::to_string(seg.repeat);
  }
  return s;
}

TEST(Family, ParseRoundTrip) {
  for (auto f : {Family::kPlain, Family::kResidual, Family::kDense, Family::kInvertedResidual,
                 Family::kUpsampler}) {
    EXPECT_EQ(parse_family(to_string(f)), f);
  }
  EXPECT_THROW(parse_family("transformer"), std::invalid_argument);
}

TEST(Description, ValidateRejectsInconsistentNets) {
  NetDescription d = residual(true);
  EXPECT_NO_THROW(d.validate());
  d.kernel = 2;
  EXPECT_THROW(d.validate(), TopologyError);
  d = residual(true);
  d.widths = {8, 8, 8, 8, 8, 8};  // 16 not divisible by 2^5
  EXPECT_THROW(d.validate(), TopologyError);
  d = residual(true);
  d.widths.clear();
  EXPECT_THROW(d.validate(), TopologyError);
}

TEST(Residual, BlocksInAStageShareOneOutputLatent) {
  const SharingGraph g = build_sharing_graph(residual(true));
  const auto& w = g.wiring();
  const auto s0 = w[g.layer_index("s0.b0.conv2")].output;
  EXPECT_EQ(w[g.layer_index("s0.b1.conv2")].output, s0);
  EXPECT_EQ(w[g.layer_index("stem")].output, s0);
  const auto s1 = w[g.layer_index("s1.b0.conv2")].output;
  EXPECT_EQ(w[g.layer_index("s1.b1.conv2")].output, s1);
  EXPECT_EQ(w[g.layer_index("s1.b0.shortcut")].output, s1);
  EXPECT_EQ(w[g.layer_index("s1.b0.shortcut")].kind, WiringKind::kResidualShortcut);
  EXPECT_NE(s0, s1);
  // Inner convs get their own latents.
  EXPECT_EQ(latent_of(g, w[g.layer_index("s0.b1.conv1")].output), "s0.b1.mid");
  EXPECT_EQ(latent_of(g, w[g.layer_index("s0.b1.conv2")].input), "s0.b1.mid");
}

TEST(Residual, NonShareTiesSeparateLatentsIntoOneGroup) {
  const SharingGraph g = build_sharing_graph(residual(false));
  const auto group = [&](const char* name) { return g.group_of(g.latent_index(name)); };
  EXPECT_EQ(group("stem.out"), group("s0.b0.conv2.out"));
  EXPECT_EQ(group("stem.out"), group("s0.b1.conv2.out"));
  EXPECT_EQ(group("s1.b0.conv2.out"), group("s1.b0.shortcut.out"));
  EXPECT_EQ(group("s1.b0.conv2.out"), group("s1.b1.conv2.out"));
  EXPECT_NE(group("stem.out"), group("s1.b0.conv2.out"));
  EXPECT_NE(group("s0.b0.mid"), group("s0.b1.mid"));
}

TEST(Residual, DownsamplingGeometry) {
  const SharingGraph g = build_sharing_graph(residual(true));
  const auto& l = g.layers()[g.layer_index("s1.b0.conv1")];
  EXPECT_EQ(l.stride, 2u);
  EXPECT_EQ(l.out_h, 8u);
  EXPECT_EQ(g.layers()[g.layer_index("s1.b1.conv1")].stride, 1u);
  const auto& head = g.layers().back();
  EXPECT_EQ(head.id, "head");
  EXPECT_TRUE(head.tags.output_layer);
  EXPECT_TRUE(head.bias);
}

TEST(Plain, ChainWiringAndFrozenEnds) {
  NetDescription d;
  d.widths = {8, 16, 16};
  const SharingGraph g = build_sharing_graph(d);
  ASSERT_EQ(g.layers().size(), 4u);
  for (std::size_t i = 1; i < 3; ++i) {
    EXPECT_EQ(g.wiring()[i].input, g.wiring()[i - 1].output);
    EXPECT_EQ(g.layers()[i].stride, 2u);
  }
  EXPECT_FALSE(g.latents()[g.latent_index("input")].sparsifiable);
  EXPECT_FALSE(g.latents()[g.latent_index("head.out")].sparsifiable);
  EXPECT_TRUE(g.latents()[g.latent_index("conv1.out")].sparsifiable);
  EXPECT_EQ(g.wiring()[0].kind, WiringKind::kFirstLayer);
}

TEST(Dense, InputIsConcatenationOfEarlierLatents) {
  NetDescription d;
  d.family = Family::kDense;
  d.widths = {16, 16};
  d.blocks = 3;
  d.growth = 8;
  const SharingGraph g = build_sharing_graph(d);
  EXPECT_EQ(latent_of(g, g.wiring()[g.layer_index("d0.b2.conv")].input),
            "stem.out+d0.b0.growth+d0.b1.growth");
  EXPECT_EQ(latent_of(g, g.wiring()[g.layer_index("t1")].input),
            "stem.out+d0.b0.growth+d0.b1.growth+d0.b2.growth");
  EXPECT_EQ(g.layers()[g.layer_index("d0.b2.conv")].in_channels, 32u);
  EXPECT_EQ(g.binding_dim(g.wiring()[g.layer_index("head")].input), 40u);
}

TEST(Dense, WireHelperOrdersSegments) {
  const LayerWiring w = wire_dense_block(LatentBinding::of(1), {4, 7}, 9);
  ASSERT_EQ(w.input.segments.size(), 3u);
  EXPECT_EQ(w.input.segments[0].latent, 1u);
  EXPECT_EQ(w.input.segments[1].latent, 4u);
  EXPECT_EQ(w.input.segments[2].latent, 7u);
  EXPECT_EQ(w.output, LatentBinding::of(9));
  EXPECT_EQ(w.kind, WiringKind::kDenseConcat);
}

TEST(Inverted, ExpansionLatentControlsThreeLayers) {
  NetDescription d;
  d.family = Family::kInvertedResidual;
  d.widths = {8, 16};
  d.expansion = 4;
  const SharingGraph g = build_sharing_graph(d);
  const auto& w = g.wiring();
  const LatentId e = g.latent_index("s1.b1.expanded");
  EXPECT_EQ(w[g.layer_index("s1.b1.expand")].output, LatentBinding::of(e));
  EXPECT_EQ(w[g.layer_index("s1.b1.dw")].output, LatentBinding::of(e));
  EXPECT_EQ(w[g.layer_index("s1.b1.project")].input, LatentBinding::of(e));
  const auto& dw = g.layers()[g.layer_index("s1.b1.dw")];
  EXPECT_EQ(dw.kind, ConvKind::kDepthwise);
  EXPECT_EQ(dw.groups, dw.in_channels);
  const auto& group = g.latents()[g.latent_index("s1.b1.dw.group")];
  EXPECT_EQ(group.dim, 1u);
  EXPECT_FALSE(group.sparsifiable);
  EXPECT_EQ(w[g.layer_index("s1.b0.project")].output, w[g.layer_index("s1.b1.project")].output);
}

TEST(Upsampler, OutputIsInputRepeatInterleaved) {
  NetDescription d;
  d.family = Family::kUpsampler;
  d.in_channels = 1;
  d.outputs = 1;
  d.widths = {8, 8};
  d.upscale = 2;
  const SharingGraph g = build_sharing_graph(d);
  const auto& w = g.wiring()[g.layer_index("up")];
  EXPECT_EQ(w.kind, WiringKind::kUpsampleInterleave);
  EXPECT_EQ(w.transform, OutputTransform::kRepeatInterleave);
  ASSERT_EQ(w.output.segments.size(), 1u);
  EXPECT_EQ(w.output.segments[0].repeat, 4u);
  EXPECT_EQ(w.output.segments[0].latent, w.input.segments[0].latent);
  EXPECT_EQ(g.layers()[g.layer_index("head")].in_h, 32u);
}

TEST(Upsampler, WireHelperChecksChannelArithmetic) {
  SharingGraph g;
  const LatentId a = g.add_latent("a", 3, true);
  LayerSpec spec;
  spec.id = "up";
  spec.in_channels = 3;
  spec.out_channels = 12;
  EXPECT_NO_THROW(wire_upsampler(g, spec, LatentBinding::of(a), 2));
  spec.out_channels = 10;
  EXPECT_THROW(wire_upsampler(g, spec, LatentBinding::of(a), 2), TopologyError);
}

TEST(Graph, TieRequiresEqualDims) {
  SharingGraph g;
  const LatentId a = g.add_latent("a", 3, true);
  const LatentId b = g.add_latent("b", 4, true);
  const LatentId c = g.add_latent("c", 3, true);
  EXPECT_THROW(g.tie(a, b), TopologyError);
  g.tie(a, c);
  EXPECT_EQ(g.group_of(a), g.group_of(c));
  EXPECT_THROW(g.add_latent("a", 2, true), TopologyError);
}

TEST(Graph, RejectsBindingDimensionMismatch) {
  SharingGraph g;
  const LatentId in = g.add_latent("in", 3, false);
  const LatentId out = g.add_latent("out", 5, true);
  LayerSpec spec;
  spec.id = "c";
  spec.in_channels = 3;
  spec.out_channels = 4;
  spec.tags.first_layer = true;
  g.add_layer(spec, {LatentBinding::of(in), LatentBinding::of(out)});
  EXPECT_THROW(g.validate(), TopologyError);
}

TEST(Graph, BuildIsDeterministic) {
  for (auto share : {true, false}) {
    EXPECT_EQ(build_sharing_graph(residual(share)), build_sharing_graph(residual(share)));
  }
}

TEST(Graph, EveryFamilyValidates) {
  for (auto f : {Family::kPlain, Family::kResidual, Family::kDense, Family::kInvertedResidual,
                 Family::kUpsampler}) {
    for (auto share : {true, false}) {
      NetDescription d;
      d.family = f;
      d.share_latents = share;
      if (f == Family::kUpsampler) {
        d.in_channels = 1;
        d.outputs = 1;
      }
      EXPECT_NO_THROW(build_sharing_graph(d).validate()) << to_string(f) << share;
    }
  }
}

}  // namespace
}  // namespace dhp
