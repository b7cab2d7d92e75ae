#include <benchmark/benchmark.h>

#include "dhp/backbones.hpp"
#include "dhp/ops.hpp"
#include "dhp/proxopt.hpp"
#include "dhp/pruner.hpp"

namespace {

using namespace dhp;

void BM_Conv2dForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Var x(rng.normal_tensor({32, c, 16, 16}));
  const Var w(rng.normal_tensor({c, c, 3, 3}));
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d(x, w, {1, 1, 1}));
  state.SetItemsProcessed(state.iterations() * 32 * c * c * 9 * 256);
}
BENCHMARK(BM_Conv2dForward)->Arg(16)->Arg(32)->Arg(64);

void BM_Conv2dBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor x = rng.normal_tensor({32, c, 16, 16});
  const Tensor w = rng.normal_tensor({c, c, 3, 3});
  for (auto _ : state) {
    Var xv(x, true), wv(w, true);
    ops::sum(ops::conv2d(xv, wv, {1, 1, 1})).backward();
    benchmark::DoNotOptimize(wv.grad());
  }
}
BENCHMARK(BM_Conv2dBackward)->Arg(16)->Arg(32);

void BM_HyperLayerForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  HyperLayer h(c, c, 3, 3);
  h.init(rng);
  const Var zo(rng.normal_tensor({c})), zi(rng.normal_tensor({c}));
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(h.forward(zo, zi));
}
BENCHMARK(BM_HyperLayerForward)->Arg(16)->Arg(64);

void BM_ProxL1(benchmark::State& state) {
  Rng rng(3);
  const Tensor v = rng.normal_tensor({static_cast<std::size_t>(state.range(0))});
  for (auto _ : state) benchmark::DoNotOptimize(prox_l1(v, 0.1));
}
BENCHMARK(BM_ProxL1)->Arg(64)->Arg(4096);

void BM_ProxL2(benchmark::State& state) {
  Rng rng(3);
  const Tensor v = rng.normal_tensor({static_cast<std::size_t>(state.range(0))});
  for (auto _ : state) benchmark::DoNotOptimize(prox_l2(v, 0.1));
}
BENCHMARK(BM_ProxL2)->Arg(64)->Arg(4096);

NetDescription mini_resnet() {
  NetDescription d;
  d.family = Family::kResidual;
  d.widths = {16, 32};
  d.blocks = 2;
  return d;
}

void BM_ResidualSearchStep(benchmark::State& state) {
  HyperModel m(mini_resnet(), 4);
  Rng rng(4);
  const Var x(rng.normal_tensor({32, 3, 16, 16}));
  std::vector<int> labels(32);
  for (std::size_t i = 0; i < 32; ++i) labels[i] = static_cast<int>(i % 10);
  for (auto _ : state) {
    ops::softmax_cross_entropy(m.forward(x, true), labels).backward();
    for (auto& p : m.parameters()) p.zero_grad();
    for (auto& z : m.latent_vars()) z.zero_grad();
  }
}
BENCHMARK(BM_ResidualSearchStep)->Unit(benchmark::kMillisecond);

void BM_DeriveMasksAndAccount(benchmark::State& state) {
  HyperModel m(mini_resnet(), 5);
  for (auto _ : state) {
    const auto masks = derive_masks(m.graph(), m.latents(), 0.5);
    benchmark::DoNotOptimize(account(m.graph(), masks).flops_ratio());
  }
}
BENCHMARK(BM_DeriveMasksAndAccount);

}  // namespace

BENCHMARK_MAIN();
