#include <gtest/gtest.h>

#include "dhp/pruner.hpp"

namespace dhp {
namespace {

NetDescription tiny_plain() {
  NetDescription d;
  d.widths = {4};
  d.height = d.width = 8;
  return d;
}

void set_latent(HyperModel& m, const char* name, std::vector<double> v) {
  m.latents()[m.graph().latent_index(name)].values.mutable_value() = Tensor::vector(std::move(v));
}

TEST(Masks, ThresholdOnMagnitude) {
  HyperModel m(tiny_plain(), 1);
  set_latent(m, "conv0.out", {0.5, -0.001, -0.2, 0.004});
  const auto masks = derive_masks(m.graph(), m.latents(), 5e-3);
  const auto& bits = masks[m.graph().latent_index("conv0.out")].bits;
  EXPECT_EQ(bits, (std::vector<std::uint8_t>{1, 0, 1, 0}));
  // Frozen latents keep everything.
  EXPECT_EQ(masks[m.graph().latent_index("input")].popcount(), 3u);
  EXPECT_EQ(masks[m.graph().latent_index("head.out")].popcount(), 10u);
}

TEST(Masks, GuardKeepsLargestElement) {
  HyperModel m(tiny_plain(), 1);
  set_latent(m, "conv0.out", {0.001, -0.003, 0.0, 0.002});
  const auto masks = derive_masks(m.graph(), m.latents(), 5e-3);
  EXPECT_EQ(masks[m.graph().latent_index("conv0.out")].kept(), (std::vector<std::size_t>{1}));
}

TEST(Masks, RejectsNonPositiveTau) {
  HyperModel m(tiny_plain(), 1);
  EXPECT_THROW(derive_masks(m.graph(), m.latents(), 0.0), std::invalid_argument);
}

TEST(Masks, GroupNormAcrossTiedLatents) {
  NetDescription d;
  d.family = Family::kResidual;
  d.widths = {4};
  d.blocks = 2;
  d.share_latents = false;
  HyperModel m(d, 2);
  // Index 0 survives only through the group norm: each entry alone is below tau.
  set_latent(m, "stem.out", {0.004, 0.0, 1.0, 0.0});
  set_latent(m, "s0.b0.conv2.out", {0.004, 0.0, 0.0, 0.0});
  set_latent(m, "s0.b1.conv2.out", {0.004, 0.001, 0.0, 0.0});
  const auto masks = derive_masks(m.graph(), m.latents(), 5e-3);
  const std::vector<std::uint8_t> want{1, 0, 1, 0};
  for (const char* name : {"stem.out", "s0.b0.conv2.out", "s0.b1.conv2.out"}) {
    EXPECT_EQ(masks[m.graph().latent_index(name)].bits, want) << name;
  }
}

TEST(Masks, BindingMaskRepeatsAndConcatenates) {
  std::vector<PruningMask> masks{{0, {1, 0}}, {1, {0, 1, 1}}};
  LatentBinding b{{{0, 2}, {1, 1}}};
  EXPECT_EQ(binding_mask(masks, b), (std::vector<std::uint8_t>{1, 1, 0, 0, 0, 1, 1}));
}

TEST(Account, HandCountedPlainNet) {
  HyperModel m(tiny_plain(), 1);
  auto masks = full_masks(m.graph());
  // conv0: 4*3*9 weights + 8 batch norm; head: 4*10 weights + 10 bias.
  auto full = account(m.graph(), masks);
  EXPECT_EQ(full.params_full, 108u + 8 + 40 + 10);
  EXPECT_EQ(full.flops_full, 108u * 64 + 40);
  EXPECT_DOUBLE_EQ(full.flops_ratio(), 1.0);
  masks[m.graph().latent_index("conv0.out")].bits = {1, 0, 0, 1};
  const auto half = account(m.graph(), masks);
  EXPECT_EQ(half.flops_masked, 54u * 64 + 20);
  EXPECT_EQ(half.params_masked, 54u + 4 + 20 + 10);
  EXPECT_DOUBLE_EQ(half.flops_ratio(), 0.5);
}

TEST(Account, MacConventionCancelsInRatio) {
  HyperModel m(tiny_plain(), 1);
  auto masks = full_masks(m.graph());
  masks[m.graph().latent_index("conv0.out")].bits = {1, 1, 0, 1};
  const auto a = account(m.graph(), masks, 1);
  const auto b = account(m.graph(), masks, 2);
  EXPECT_EQ(b.flops_full, 2 * a.flops_full);
  EXPECT_DOUBLE_EQ(a.flops_ratio(), b.flops_ratio());
}

TEST(Account, RejectsMismatchedMask) {
  HyperModel m(tiny_plain(), 1);
  auto masks = full_masks(m.graph());
  masks[1].bits.pop_back();
  EXPECT_THROW(account(m.graph(), masks), std::invalid_argument);
}

TEST(Stop, StrictTwoPercentWindow) {
  CompressionAccount a;
  a.flops_full = 1000;
  a.flops_masked = 519;
  EXPECT_TRUE(should_stop(a, 0.5));
  a.flops_masked = 481;
  EXPECT_TRUE(should_stop(a, 0.5));
  a.flops_masked = 530;
  EXPECT_FALSE(should_stop(a, 0.5));
  a.flops_masked = 470;
  EXPECT_FALSE(should_stop(a, 0.5));
  EXPECT_THROW(should_stop(a, 1.0), std::invalid_argument);
  EXPECT_THROW(should_stop(a, 0.0), std::invalid_argument);
}

TEST(Materialize, ShapesFollowMasks) {
  NetDescription d;
  d.family = Family::kResidual;
  d.widths = {8, 8};
  d.blocks = 1;
  HyperModel m(d, 3);
  auto masks = full_masks(m.graph());
  masks[m.graph().latent_index("stage0.shared")].bits = {1, 0, 1, 0, 1, 0, 1, 1};
  masks[m.graph().latent_index("s0.b0.mid")].bits = {0, 0, 0, 1, 1, 0, 0, 0};
  const ExplicitNetwork net = materialize(m, masks);
  const auto& g = net.graph();
  EXPECT_EQ(net.layers()[g.layer_index("stem")].weight.shape(), (Shape{5, 3, 3, 3}));
  EXPECT_EQ(net.layers()[g.layer_index("s0.b0.conv1")].weight.shape(), (Shape{2, 5, 3, 3}));
  EXPECT_EQ(net.layers()[g.layer_index("s0.b0.conv2")].weight.shape(), (Shape{5, 2, 3, 3}));
  EXPECT_EQ(net.layers()[g.layer_index("s1.b0.conv1")].weight.shape()[1], 5u);
  EXPECT_EQ(net.layers()[g.layer_index("stem")].extras.gamma.shape(), (Shape{5}));
  EXPECT_EQ(surviving_channels(m.graph(), masks, g.layer_index("stem")),
            (std::vector<std::size_t>{0, 2, 4, 6, 7}));
}

TEST(Materialize, SlicesGeneratedWeightsExactly) {
  HyperModel m(tiny_plain(), 4);
  auto masks = full_masks(m.graph());
  masks[m.graph().latent_index("conv0.out")].bits = {0, 1, 1, 0};
  const ExplicitNetwork net = materialize(m, masks);
  const auto weights = m.generate_weights();
  const std::vector<std::size_t> keep{1, 2}, all3{0, 1, 2};
  EXPECT_EQ(net.layers()[0].weight.value(), select_rows_cols(weights[0].value(), keep, all3));
}

TEST(Materialize, DepthwiseGroupsShrink) {
  NetDescription d;
  d.family = Family::kInvertedResidual;
  d.widths = {4};
  d.blocks = 1;
  d.expansion = 2;
  HyperModel m(d, 5);
  auto masks = full_masks(m.graph());
  masks[m.graph().latent_index("s0.b0.expanded")].bits = {1, 0, 1, 1, 0, 0, 0, 1};
  const ExplicitNetwork net = materialize(m, masks);
  const auto& dw = net.layers()[net.graph().layer_index("s0.b0.dw")];
  EXPECT_EQ(dw.groups, 4u);
  EXPECT_EQ(dw.weight.shape(), (Shape{4, 1, 3, 3}));
}

}  // namespace
}  // namespace dhp
