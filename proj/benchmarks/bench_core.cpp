#include <benchmark/benchmark.h>

#include "advlab/attacks.hpp"
#include "advlab/ntk_rf.hpp"
#include "advlab/training.hpp"

using namespace advlab;
using numerics::RngStream;
using numerics::Vec;

static void BM_DeepForwardGrad(benchmark::State& state) {
  RngStream rng(1);
  const auto p = models::init_deep(rng, state.range(0), 10, 2);
  const Vec x = numerics::sample_sphere(rng, 10);
  for (auto _ : state) {
    const auto fw = models::forward_deep(p, x);
    benchmark::DoNotOptimize(models::grad_deep(p, fw));
  }
}
BENCHMARK(BM_DeepForwardGrad)->Arg(256)->Arg(1024);

static void BM_TwoLayerForwardGrad(benchmark::State& state) {
  RngStream rng(2);
  const auto p = models::init_two_layer(rng, state.range(0), 10, models::InitLaw::gaussian_identity);
  const models::Activation act{models::ActivationKind::softplus};
  const Vec x = numerics::sample_sphere(rng, 10);
  for (auto _ : state) benchmark::DoNotOptimize(models::grad_two_layer(p, act, x));
}
BENCHMARK(BM_TwoLayerForwardGrad)->Arg(1024)->Arg(4096);

// pgd-10 on 16 caps, batched through one GEMM per step
static void BM_AttackBatchPgd(benchmark::State& state) {
  RngStream rng(3);
  const auto p = models::init_two_layer(rng, state.range(0), 10, models::InitLaw::gaussian_identity);
  attacks::TwoLayerPredictor pred(p, {models::ActivationKind::softplus});
  const auto ds = attacks::make_toy_dataset(rng, 16, 10, 0.05);
  attacks::AttackSpec spec;
  spec.kind = attacks::AttackKind::pgd;
  spec.steps = 10;
  spec.step_size = 0.0125;
  std::vector<attacks::PerturbSet> sets;
  std::vector<int> ys;
  std::vector<RngStream> rngs;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    sets.push_back(ds.set_of(i));
    ys.push_back(ds.examples[i].y);
    rngs.push_back(rng.fork(i));
  }
  for (auto _ : state) benchmark::DoNotOptimize(attacks::attack_batch(spec, pred, models::LossFn{}, sets, ys, rngs));
}
BENCHMARK(BM_AttackBatchPgd)->Arg(1024)->Arg(4096);

static void BM_KernelGram(benchmark::State& state) {
  ntk_rf::KernelSpec spec;
  spec.activation = {models::ActivationKind::quad_relu};
  RngStream rng(4);
  const ntk_rf::Kernel k(spec, 5, rng);
  std::vector<Vec> xs;
  for (int i = 0; i < state.range(0); ++i) xs.push_back(numerics::sample_sphere(rng, 5));
  for (auto _ : state) benchmark::DoNotOptimize(k.gram(xs, xs));
}
BENCHMARK(BM_KernelGram)->Arg(126)->Arg(500);

static void BM_NtkMc(benchmark::State& state) {
  ntk_rf::KernelSpec spec;
  spec.mc_samples = static_cast<std::size_t>(state.range(0));
  RngStream rng(5);
  const Vec x = numerics::sample_sphere(rng, 5), y = numerics::sample_sphere(rng, 5);
  for (auto _ : state) benchmark::DoNotOptimize(ntk_rf::ntk_mc(spec, rng, x, y));
}
BENCHMARK(BM_NtkMc)->Arg(100000);

BENCHMARK_MAIN();
