#include <gtest/gtest.h>

#include <set>

#include "dhp/backbones.hpp"
#include "dhp/pruner.hpp"

namespace dhp {
namespace {

NetDescription family_net(Family f) {
  NetDescription d;
  d.family = f;
  d.widths = {8, 8};
  d.blocks = 2;
  d.growth = 4;
  d.expansion = 2;
  if (f == Family::kUpsampler) {
    d.in_channels = 1;
    d.outputs = 1;
  }
  return d;
}

const Family kFamilies[] = {Family::kPlain, Family::kResidual, Family::kDense,
                            Family::kInvertedResidual, Family::kUpsampler};

TEST(Backbone, OutputShapesPerFamily) {
  Rng rng(1);
  for (auto f : kFamilies) {
    const auto d = family_net(f);
    HyperModel m(d, 1);
    const Tensor x = rng.normal_tensor({2, d.in_channels, d.height, d.width});
    const Var y = m.forward(Var(x), true);
    if (d.is_regression()) {
      EXPECT_EQ(y.shape(), (Shape{2, 1, 32, 32})) << to_string(f);
    } else {
      EXPECT_EQ(y.shape(), (Shape{2, 10})) << to_string(f);
    }
    EXPECT_TRUE(y.value().all_finite());
  }
}

TEST(Backbone, AllOnesMaterializationMatchesHyperModel) {
  Rng rng(2);
  for (auto f : kFamilies) {
    for (bool share : {true, false}) {
      auto d = family_net(f);
      d.share_latents = share;
      HyperModel m(d, 3);
      ExplicitNetwork net = materialize(m, full_masks(m.graph()));
      const Tensor x = rng.normal_tensor({3, d.in_channels, d.height, d.width});
      NoGradGuard guard;
      const Tensor a = m.forward(Var(x), false).value();
      const Tensor b = net.forward(Var(x), false).value();
      EXPECT_LT(max_abs_diff(a, b), 1e-10) << to_string(f) << share;
    }
  }
}

TEST(Backbone, ParametersExcludeLatents) {
  HyperModel m(family_net(Family::kResidual), 1);
  std::set<std::uint64_t> params;
  for (const auto& p : m.parameters()) params.insert(p.id());
  for (const auto& z : m.latent_vars()) EXPECT_EQ(params.count(z.id()), 0u);
  EXPECT_EQ(m.latent_vars().size(), m.graph().latents().size());
  EXPECT_EQ(m.hyperlayers().size(), m.graph().layers().size());
}

TEST(Backbone, SameSeedSameModel) {
  const auto d = family_net(Family::kDense);
  HyperModel a(d, 9), b(d, 9), c(d, 10);
  const auto wa = a.generate_weights(), wb = b.generate_weights(), wc = c.generate_weights();
  for (std::size_t i = 0; i < wa.size(); ++i) EXPECT_EQ(wa[i].value(), wb[i].value());
  EXPECT_NE(wa[0].value(), wc[0].value());
}

TEST(Backbone, GradientsReachEveryLatentAndHyperlayer) {
  const auto d = family_net(Family::kInvertedResidual);
  HyperModel m(d, 4);
  Rng rng(4);
  const Tensor x = rng.normal_tensor({4, 3, 16, 16});
  const std::vector<int> labels{0, 1, 2, 3};
  ops::softmax_cross_entropy(m.forward(Var(x), true), labels).backward();
  for (const auto& h : m.hyperlayers()) EXPECT_GT(h.w2().grad().max_abs(), 0.0);
  const auto& g = m.graph();
  for (std::size_t i = 0; i < g.latents().size(); ++i) {
    // Per-group depthwise latents are constants of the generator input.
    if (g.latents()[i].dim == 1) continue;
    EXPECT_GT(m.latents()[i].values.grad().max_abs(), 0.0) << g.latents()[i].name;
  }
}

TEST(Dataset, ShapesAndLabels) {
  SyntheticTask t;
  t.train = 50;
  t.val = 20;
  t.seed = 3;
  const Dataset d = gen_task(t);
  EXPECT_EQ(d.train_x.shape(), (Shape{50, 3, 16, 16}));
  EXPECT_EQ(d.val_x.shape(), (Shape{20, 3, 16, 16}));
  EXPECT_EQ(d.train_labels.size(), 50u);
  std::set<int> classes(d.train_labels.begin(), d.train_labels.end());
  EXPECT_EQ(classes.size(), 10u);
  EXPECT_FALSE(d.is_regression());
}

TEST(Dataset, SameSeedSameBytes) {
  SyntheticTask t;
  t.train = 30;
  t.val = 10;
  t.seed = 5;
  const Dataset a = gen_task(t), b = gen_task(t);
  EXPECT_EQ(a.train_x, b.train_x);
  EXPECT_EQ(a.val_x, b.val_x);
  EXPECT_EQ(a.train_labels, b.train_labels);
  t.seed = 6;
  EXPECT_NE(gen_task(t).train_x, a.train_x);
}

TEST(Dataset, BlurTaskTargetsAreBlurredInputsWithoutNoise) {
  SyntheticTask t;
  t.kind = TaskKind::kBlur;
  t.channels = 1;
  t.train = 4;
  t.val = 2;
  t.noise = 0.0;
  t.upscale = 2;
  const Dataset d = gen_task(t);
  ASSERT_TRUE(d.is_regression());
  EXPECT_EQ(d.train_y.shape(), (Shape{4, 1, 32, 32}));
  EXPECT_EQ(d.train_y, upsample_nearest(blur3x3(d.train_x), 2));
}

TEST(Dataset, BlurByHand) {
  Tensor x({1, 1, 3, 3});
  x.at({0, 0, 1, 1}) = 9.0;
  const Tensor y = blur3x3(x);
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 1.0);
  Tensor corner({1, 1, 3, 3});
  corner.at({0, 0, 0, 0}) = 9.0;
  const Tensor z = blur3x3(corner);
  EXPECT_DOUBLE_EQ(z.at({0, 0, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(z.at({0, 0, 2, 2}), 0.0);
}

TEST(Dataset, UpsampleNearestByHand) {
  Tensor x({1, 1, 1, 2}, std::vector<double>{1, 2});
  EXPECT_EQ(upsample_nearest(x, 2).values(), (std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2}));
}

TEST(Dataset, GatherRows) {
  Tensor x({3, 2}, std::vector<double>{1, 2, 3, 4, 5, 6});
  const std::vector<std::size_t> idx{2, 0};
  EXPECT_EQ(gather_rows(x, idx).values(), (std::vector<double>{5, 6, 1, 2}));
}

TEST(Dataset, ValidateRejectsEmptySplits) {
  SyntheticTask t;
  t.train = 0;
  EXPECT_THROW(t.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace dhp
