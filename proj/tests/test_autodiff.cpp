#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "dhp/autodiff.hpp"
#include "dhp/ops.hpp"
#include "dhp/rng.hpp"

namespace dhp {
namespace {

// Direct loop cross-correlation, independent of the GEMM path.
Tensor naive_conv(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad,
                  std::size_t groups) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t n = w.dim(0), cg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const std::size_t Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
  const std::size_t ng = n / groups;
  (void)C;
  Tensor y({N, n, Ho, Wo});
  for (std::size_t b = 0; b < N; ++b)
    for (std::size_t o = 0; o < n; ++o)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          double acc = 0;
          const std::size_t g = o / ng;
          for (std::size_t c = 0; c < cg; ++c)
            for (std::size_t p = 0; p < kh; ++p)
              for (std::size_t q = 0; q < kw; ++q) {
                const long r = static_cast<long>(i * stride + p) - static_cast<long>(pad);
                const long s = static_cast<long>(j * stride + q) - static_cast<long>(pad);
                if (r < 0 || s < 0 || r >= static_cast<long>(H) || s >= static_cast<long>(W))
                  continue;
                acc += x.at({b, g * cg + c, static_cast<std::size_t>(r),
                             static_cast<std::size_t>(s)}) *
                       w.at({o, c, p, q});
              }
          y.at({b, o, i, j}) = acc;
        }
  return y;
}

// Central differences of a scalar function of one leaf.
Tensor numeric_grad(const std::function<double(const Tensor&)>& f, const Tensor& at,
                    double h = 1e-6) {
  Tensor g(at.shape());
  Tensor x = at;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double v = x[i];
    x[i] = v + h;
    const double fp = f(x);
    x[i] = v - h;
    const double fm = f(x);
    x[i] = v;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

TEST(Autodiff, ProductRuleByHand) {
  Var a(Tensor::vector({2.0, -3.0}), true);
  Var b(Tensor::vector({5.0, 7.0}), true);
  Var y = ops::sum(ops::broadcast_mul(a, b));
  EXPECT_DOUBLE_EQ(y.value()[0], 10.0 - 21.0);
  y.backward();
  EXPECT_EQ(a.grad().values(), (std::vector<double>{5.0, 7.0}));
  EXPECT_EQ(b.grad().values(), (std::vector<double>{2.0, -3.0}));
}

TEST(Autodiff, DiamondAccumulates) {
  // y = sum(x*x + 3x): dy/dx = 2x + 3
  Var x(Tensor::vector({1.0, -2.0, 0.5}), true);
  Var y = ops::sum(ops::add(ops::broadcast_mul(x, x), ops::scale(x, 3.0)));
  y.backward();
  EXPECT_EQ(x.grad().values(), (std::vector<double>{5.0, -1.0, 4.0}));
}

TEST(Autodiff, LeafGradsAccumulateUntilZeroed) {
  Var x(Tensor::vector({1.0}), true);
  ops::scale(x, 2.0).backward();
  ops::scale(x, 2.0).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.0);
}

TEST(Autodiff, NoGradGuardRecordsConstants) {
  Var x(Tensor::vector({1.0}), true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    Var y = ops::scale(x, 2.0);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_TRUE(ops::scale(x, 2.0).requires_grad());
}

TEST(Autodiff, ParentsHaveSmallerIds) {
  Var x(Tensor::vector({1.0}), true);
  Var y = ops::scale(x, 2.0);
  Var z = ops::add(y, x);
  EXPECT_LT(x.id(), y.id());
  EXPECT_LT(y.id(), z.id());
}

TEST(Ops, MatmulByHand) {
  Var a(Tensor::matrix({{1, 2}, {3, 4}}));
  Var b(Tensor::matrix({{5, 6}, {7, 8}}));
  EXPECT_EQ(ops::matmul(a, b).value().values(), (std::vector<double>{19, 22, 43, 50}));
  EXPECT_THROW(ops::matmul(a, Var(Tensor({3, 2}))), ShapeError);
}

TEST(Ops, BroadcastMulTrailingAxes) {
  Var a(Tensor::matrix({{1, 2, 3}, {4, 5, 6}}));
  Var b(Tensor::vector({10, 100, 1000}));
  EXPECT_EQ(ops::broadcast_mul(a, b).value().values(),
            (std::vector<double>{10, 200, 3000, 40, 500, 6000}));
}

TEST(Ops, ReluSubgradientAtZero) {
  Var x(Tensor::vector({-1.0, 0.0, 2.0}), true);
  Var y = ops::sum(ops::relu(x));
  EXPECT_DOUBLE_EQ(y.value()[0], 2.0);
  y.backward();
  EXPECT_EQ(x.grad().values(), (std::vector<double>{0.0, 0.0, 1.0}));
}

TEST(Ops, SoftmaxCrossEntropyUniformLogits) {
  Var logits(Tensor({2, 4}, 0.0), true);
  const std::vector<int> labels{1, 3};
  Var loss = ops::softmax_cross_entropy(logits, labels);
  EXPECT_NEAR(loss.value()[0], std::log(4.0), 1e-12);
  loss.backward();
  // (softmax - onehot) / N
  EXPECT_NEAR(logits.grad().at({0, 1}), (0.25 - 1.0) / 2, 1e-12);
  EXPECT_NEAR(logits.grad().at({0, 0}), 0.25 / 2, 1e-12);
}

TEST(Ops, MseByHand) {
  Var p(Tensor::vector({1, 2, 3}), true);
  Var t(Tensor::vector({1, 0, 0}));
  Var l = ops::mse(p, t);
  EXPECT_DOUBLE_EQ(l.value()[0], 13.0 / 3.0);
  l.backward();
  EXPECT_NEAR(p.grad()[1], 2.0 * 2.0 / 3.0, 1e-15);
}

TEST(Ops, RepeatInterleaveAndConcat) {
  Var v(Tensor::vector({1, 2}));
  EXPECT_EQ(ops::repeat_interleave(v, 2).value().values(), (std::vector<double>{1, 1, 2, 2}));
  std::vector<Var> parts{v, Var(Tensor::vector({3}))};
  EXPECT_EQ(ops::concat(parts, 0).value().values(), (std::vector<double>{1, 2, 3}));
}

TEST(Ops, PixelShuffleLayout) {
  // One output channel, r = 2: input channel i*2 + j lands at offset (i, j).
  Tensor x({1, 4, 1, 1});
  for (std::size_t c = 0; c < 4; ++c) x[c] = static_cast<double>(c);
  const Tensor y = ops::pixel_shuffle(Var(x), 2).value();
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(y.values(), (std::vector<double>{0, 1, 2, 3}));
}

TEST(Ops, PoolingByHand) {
  Tensor x({1, 1, 2, 2});
  x.data()[0] = 1;
  x.data()[1] = 2;
  x.data()[2] = 3;
  x.data()[3] = 6;
  EXPECT_DOUBLE_EQ(ops::avg_pool2d(Var(x), 2).value()[0], 3.0);
  EXPECT_DOUBLE_EQ(ops::global_avg_pool(Var(x)).value()[0], 3.0);
}

TEST(Ops, BatchNormNormalizesAndTracks) {
  Rng rng(1);
  Var x(rng.normal_tensor({8, 2, 3, 3}, 3.0));
  Var gamma(Tensor::ones({2})), beta(Tensor::zeros({2}));
  auto buf = ops::BatchNormBuffers::fresh(2);
  const Tensor y = ops::batch_norm(x, gamma, beta, &buf, {}).value();
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0, s2 = 0;
    for (std::size_t b = 0; b < 8; ++b)
      for (std::size_t i = 0; i < 9; ++i) {
        const double v = y.at({b, c, i / 3, i % 3});
        s += v;
        s2 += v * v;
      }
    EXPECT_NEAR(s / 72, 0.0, 1e-12);
    EXPECT_NEAR(s2 / 72, 1.0, 1e-3);
  }
  EXPECT_NE(buf.mean[0], 0.0);
  EXPECT_NE(buf.var[0], 1.0);
}

struct ConvCase {
  std::size_t c, n, k, stride, pad, groups;
};

class ConvOracle : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvOracle, MatchesNaiveLoop) {
  const auto p = GetParam();
  Rng rng(p.c * 31 + p.n + p.k);
  const Tensor x = rng.normal_tensor({2, p.c, 7, 6});
  const Tensor w = rng.normal_tensor({p.n, p.c / p.groups, p.k, p.k});
  const Tensor got =
      ops::conv2d(Var(x), Var(w), {p.stride, p.pad, p.groups}).value();
  const Tensor want = naive_conv(x, w, p.stride, p.pad, p.groups);
  ASSERT_EQ(got.shape(), want.shape());
  EXPECT_LT(max_abs_diff(got, want), 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvOracle,
                         ::testing::Values(ConvCase{3, 4, 3, 1, 1, 1}, ConvCase{3, 5, 1, 1, 0, 1},
                                           ConvCase{4, 6, 3, 2, 1, 2}, ConvCase{4, 4, 3, 1, 1, 4},
                                           ConvCase{2, 3, 5, 2, 2, 1}));

TEST(Ops, ConvGradientMatchesFiniteDifferences) {
  Rng rng(9);
  const Tensor x0 = rng.normal_tensor({2, 4, 5, 5});
  const Tensor w0 = rng.normal_tensor({6, 2, 3, 3});
  const Tensor r = rng.normal_tensor({2, 6, 3, 3});
  const ops::Conv2dOptions opt{2, 1, 2};
  auto objective = [&](const Tensor& x, const Tensor& w) {
    return naive_conv(x, w, 2, 1, 2).reshaped({r.numel()}).values();
  };
  auto f_x = [&](const Tensor& x) {
    const auto y = objective(x, w0);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
    return s;
  };
  auto f_w = [&](const Tensor& w) {
    const auto y = objective(x0, w);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
    return s;
  };
  Var x(x0, true), w(w0, true);
  ops::conv2d(x, w, opt).backward(r);
  EXPECT_LT(max_abs_diff(x.grad(), numeric_grad(f_x, x0)), 1e-7);
  EXPECT_LT(max_abs_diff(w.grad(), numeric_grad(f_w, w0)), 1e-7);
}

TEST(Ops, BatchNormGradientMatchesFiniteDifferences) {
  Rng rng(4);
  const Tensor x0 = rng.normal_tensor({3, 2, 2, 2});
  const Tensor g0 = rng.normal_tensor({2});
  const Tensor r = rng.normal_tensor({3, 2, 2, 2});
  auto f = [&](const Tensor& x) {
    NoGradGuard guard;
    const Tensor y =
        ops::batch_norm(Var(x), Var(g0), Var(Tensor::zeros({2})), nullptr, {}).value();
    double s = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) s += y[i] * r[i];
    return s;
  };
  Var x(x0, true);
  ops::batch_norm(x, Var(g0), Var(Tensor::zeros({2})), nullptr, {}).backward(r);
  EXPECT_LT(max_abs_diff(x.grad(), numeric_grad(f, x0)), 1e-6);
}

TEST(Ops, ShapeMismatchThrows) {
  Var a(Tensor::vector({1, 2})), b(Tensor::vector({1, 2, 3}));
  EXPECT_THROW(ops::add(a, b), ShapeError);
  EXPECT_THROW(ops::conv2d(Var(Tensor({1, 3, 4, 4})), Var(Tensor({2, 2, 3, 3}))), ShapeError);
}

}  // namespace
}  // namespace dhp
