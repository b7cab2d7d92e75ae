#include <gtest/gtest.h>

#include <cmath>

#include "dhp/ops.hpp"
#include "dhp/proxopt.hpp"
#include "dhp/pruner.hpp"

namespace dhp {
namespace {

TEST(Worked, OuterProductViaMatmul) {
  Var a(Tensor({2, 1}, std::vector<double>{1, 2}));
  Var b(Tensor({1, 2}, std::vector<double>{3, 4}));
  EXPECT_EQ(ops::matmul(a, b).value().values(), (std::vector<double>{3, 4, 6, 8}));
  const Tensor z = hyper::latent_matrix(Var(Tensor::vector({1, 2})), Var(Tensor::vector({3, 4})),
                                        Var(Tensor::zeros({2, 2})))
                       .value();
  EXPECT_EQ(z.values(), (std::vector<double>{3, 4, 6, 8}));
}

TEST(Worked, MatmulGradientIsOnesTimesBTransposed) {
  Var a(Tensor::matrix({{1, 2}, {3, 4}}), true);
  Var b(Tensor::matrix({{5, 6, 7}, {8, 9, 10}}));
  ops::sum(ops::matmul(a, b)).backward();
  // row sums of B: [18, 27]
  EXPECT_EQ(a.grad().values(), (std::vector<double>{18, 27, 18, 27}));
}

TEST(Worked, ScalarBroadcast) {
  const Tensor y =
      ops::broadcast_mul(Var(Tensor::vector({2})), Var(Tensor::vector({1, 2, 3}))).value();
  EXPECT_EQ(y.values(), (std::vector<double>{2, 4, 6}));
}

TEST(Worked, BroadcastUnitAxisGradientSumReduces) {
  Var a(Tensor({1, 2, 1}, std::vector<double>{1, 2}), true);
  Var b(Tensor({1, 2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6}), true);
  const Var y = ops::broadcast_mul(a, b);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 3}));
  ops::sum(y).backward();
  EXPECT_EQ(a.grad().values(), (std::vector<double>{6, 15}));
  EXPECT_EQ(b.grad().values(), (std::vector<double>{1, 1, 1, 2, 2, 2}));
}

TEST(Worked, BatchedMatmulSingleBatch) {
  Var a(Tensor({1, 2, 2}, std::vector<double>{1, 2, 3, 4}));
  Var v(Tensor({1, 2}, std::vector<double>{1, 1}));
  EXPECT_EQ(ops::batched_matmul(a, v).value().values(), (std::vector<double>{3, 7}));
}

TEST(Worked, ConvAllOnesInterior) {
  const Tensor y =
      ops::conv2d(Var(Tensor::ones({1, 1, 5, 5})), Var(Tensor::ones({1, 1, 3, 3})), {1, 0, 1})
          .value();
  EXPECT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 9.0);
}

TEST(Worked, ConvIdentitySelection) {
  Rng rng(1);
  const Tensor x = rng.normal_tensor({1, 3, 4, 4});
  Tensor w({1, 3, 1, 1});
  w[1] = 1.0;
  const Tensor y = ops::conv2d(Var(x), Var(w)).value();
  const std::vector<std::size_t> keep{1};
  EXPECT_EQ(y, select_axis1(x, keep));
}

TEST(Worked, CrossEntropyOfUniformLogitsIsLnK) {
  const std::vector<int> labels{7};
  EXPECT_NEAR(ops::softmax_cross_entropy(Var(Tensor({1, 10})), labels).value()[0],
              std::log(10.0), 1e-15);
  const Var x(Tensor::vector({1, -2}));
  EXPECT_EQ(ops::mse(x, x).value()[0], 0.0);
}

TEST(Worked, EmbeddingAndExplicitLayers) {
  Var z(Tensor({1, 1}, std::vector<double>{2}));
  Var w1(Tensor({1, 1, 3}, std::vector<double>{1, 0, 3}));
  const Tensor e = hyper::embed(z, w1, Var(Tensor::zeros({1, 1, 3}))).value();
  EXPECT_EQ(e.values(), (std::vector<double>{2, 0, 6}));

  Var e1(Tensor({1, 1, 1}, std::vector<double>{5}));
  Var w2(Tensor({1, 1, 2, 1}, std::vector<double>{2, 3}));
  const Tensor o = hyper::explicit_output(e1, w2, Var(Tensor::zeros({1, 1, 2}))).value();
  EXPECT_EQ(o.values(), (std::vector<double>{10, 15}));
}

TEST(Worked, PlainSgdStep) {
  OptimConfig c;
  c.lr = 0.1;
  c.momentum = 0.0;
  c.weight_decay = 0.0;
  Tensor p = Tensor::vector({1.0}), v;
  sgd_step(p, Tensor::vector({0.5}), c, v);
  EXPECT_DOUBLE_EQ(p[0], 0.95);
  sgd_step(p, Tensor::vector({0.0}), c, v);
  EXPECT_DOUBLE_EQ(p[0], 0.95);
}

TEST(Worked, ProxScalars) {
  EXPECT_NEAR(prox_l1(Tensor::vector({1.0}), 0.3)[0], 0.7, 1e-15);
  EXPECT_EQ(prox_l1(Tensor::vector({-0.2}), 0.3)[0], 0.0);
  EXPECT_EQ(prox_l1(Tensor::vector({0.0}), 0.3)[0], 0.0);
  const Tensor v = Tensor::vector({3, 4});
  EXPECT_EQ(prox_l2(v, 0.0), v);
}

TEST(Worked, LatentShrinkage) {
  OptimConfig c;
  c.lr = 0.1;
  c.sparsity = 0.2;  // threshold 0.02
  auto z = LatentVector::zeros(2, true, "z");
  z.values.mutable_value() = Tensor::vector({0.01, 5.0});
  latent_step(z, Tensor::zeros({2}), c);
  EXPECT_EQ(z.values.value()[0], 0.0);
  EXPECT_NEAR(z.values.value()[1], 5.0 - 0.02, 1e-15);
}

TEST(Worked, LatentStepWithoutSparsityIsPlainSgd) {
  Rng rng(4);
  OptimConfig c;
  c.lr = 0.07;
  c.momentum = 0.0;
  c.weight_decay = 0.0;
  const Tensor z0 = rng.normal_tensor({6}), g = rng.normal_tensor({6});
  auto z = LatentVector::zeros(6, true, "z");
  z.values.mutable_value() = z0;
  latent_step(z, g, c);
  Tensor p = z0, v;
  sgd_step(p, g, c, v);
  EXPECT_EQ(z.values.value(), p);
}

TEST(Worked, FrozenLatentUnchangedUnderZeroGradients) {
  OptimConfig c;
  c.sparsity = 5.0;
  auto z = LatentVector::zeros(3, false, "z");
  z.values.mutable_value() = Tensor::vector({0.001, -0.002, 0.3});
  const Tensor before = z.values.value();
  for (int i = 0; i < 10; ++i) latent_step(z, Tensor::zeros({3}), c);
  EXPECT_EQ(z.values.value(), before);
}

TEST(Worked, MaskFromThreshold) {
  NetDescription d;
  d.widths = {3};
  HyperModel m(d, 1);
  m.latents()[m.graph().latent_index("conv0.out")].values.mutable_value() =
      Tensor::vector({0.5, 1e-4, -0.3});
  const auto masks = derive_masks(m.graph(), m.latents(), 5e-3);
  EXPECT_EQ(masks[m.graph().latent_index("conv0.out")].bits,
            (std::vector<std::uint8_t>{1, 0, 1}));
}

TEST(Worked, SingleConvCount) {
  SharingGraph g;
  const LatentId in = g.add_latent("in", 16, false);
  const LatentId out = g.add_latent("out", 32, true);
  LayerSpec s;
  s.id = "c";
  s.in_channels = 16;
  s.out_channels = 32;
  s.kernel_h = s.kernel_w = 3;
  s.in_h = s.in_w = 8;
  s.out_h = s.out_w = 8;
  s.padding = 1;
  s.tags.first_layer = true;
  g.add_layer(s, {LatentBinding::of(in), LatentBinding::of(out)});
  auto masks = full_masks(g);
  const auto a = account(g, masks);
  EXPECT_EQ(a.params_full, 4608u);
  EXPECT_EQ(a.flops_full, 294912u);
  // Halving the output channels of a layer whose input is frozen halves FLOPs.
  for (std::size_t i = 16; i < 32; ++i) masks[out].bits[i] = 0;
  EXPECT_DOUBLE_EQ(account(g, masks).flops_ratio(), 0.5);
}

TEST(Worked, HalvingBothAxesQuartersFlops) {
  NetDescription d;
  d.widths = {8, 8};
  HyperModel m(d, 1);
  const auto& g = m.graph();
  auto masks = full_masks(g);
  for (const char* name : {"conv0.out", "conv1.out"}) {
    auto& bits = masks[g.latent_index(name)].bits;
    for (std::size_t i = 4; i < 8; ++i) bits[i] = 0;
  }
  const auto a = account(g, masks);
  const auto& conv1 = a.layers[g.layer_index("conv1")];
  EXPECT_DOUBLE_EQ(static_cast<double>(conv1.flops_masked) / conv1.flops_full, 0.25);
}

TEST(Worked, StopExamples) {
  CompressionAccount a;
  a.flops_full = 10000;
  a.flops_masked = 5196;
  EXPECT_TRUE(should_stop(a, 0.5));
  a.flops_masked = 5500;
  EXPECT_FALSE(should_stop(a, 0.5));
  a.flops_masked = 5000;
  EXPECT_TRUE(should_stop(a, 0.5));
}

TEST(Worked, UpsamplerMaskInterleaves) {
  std::vector<PruningMask> masks{{0, {1, 0}}};
  LatentBinding b{{{0, 4}}};
  EXPECT_EQ(binding_mask(masks, b), (std::vector<std::uint8_t>{1, 1, 1, 1, 0, 0, 0, 0}));
}

TEST(Worked, PlainChainLatentCount) {
  NetDescription d;
  d.widths = {8, 8};
  const SharingGraph g = build_sharing_graph(d);
  EXPECT_EQ(g.latents().size(), 4u);
  EXPECT_EQ(g.latents()[0].dim, 3u);
  EXPECT_FALSE(g.latents()[0].sparsifiable);
}

TEST(Worked, PlainChainLogitsShape) {
  NetDescription d;
  d.widths = {8, 8};
  HyperModel m(d, 1);
  EXPECT_EQ(m.forward(Var(Tensor({1, 3, 16, 16})), false).shape(), (Shape{1, 10}));
}

TEST(Worked, DenseGrowthPruneReachesLaterBlocks) {
  NetDescription d;
  d.family = Family::kDense;
  d.widths = {6};
  d.blocks = 3;
  d.growth = 4;
  const SharingGraph g = build_sharing_graph(d);
  EXPECT_EQ(g.layers()[g.layer_index("d0.b2.conv")].in_channels, 6u + 2 * 4);
  auto masks = full_masks(g);
  masks[g.latent_index("d0.b0.growth")].bits[1] = 0;
  // d0.b0.growth occupies input channels 6..9 of every later consumer.
  for (const char* id : {"d0.b1.conv", "d0.b2.conv", "head"}) {
    const auto bits = binding_mask(masks, g.wiring()[g.layer_index(id)].input);
    EXPECT_EQ(bits[7], 0) << id;
    EXPECT_EQ(std::count(bits.begin(), bits.end(), 0), 1) << id;
  }
}

TEST(Worked, InvertedExpansionPruneShrinksDepthwiseGroups) {
  NetDescription d;
  d.family = Family::kInvertedResidual;
  d.widths = {4};
  d.blocks = 1;
  d.expansion = 6;
  HyperModel m(d, 2);
  const auto& g = m.graph();
  EXPECT_EQ(g.latents()[g.latent_index("s0.b0.expanded")].dim, 24u);
  auto masks = full_masks(g);
  for (std::size_t i : {0, 3, 8, 15, 23}) masks[g.latent_index("s0.b0.expanded")].bits[i] = 0;
  const ExplicitNetwork net = materialize(m, masks);
  EXPECT_EQ(net.layers()[g.layer_index("s0.b0.dw")].groups, 19u);
}

}  // namespace
}  // namespace dhp
