#include <benchmark/benchmark.h>

#include <vector>

#include "ftea/losses.hpp"
#include "ftea/ops.hpp"
#include "ftea/stacked_decoder.hpp"
#include "ftea/train.hpp"

using namespace ftea;

namespace {

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto red = state.range(1) ? Reduction::kCanonical : Reduction::kSequential;
  Rng rng(1);
  const Tensor a = uniform_tensor({n, n}, rng), b = uniform_tensor({n, n}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b, red));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(n * n * n));
}
BENCHMARK(BM_Matmul)->ArgsProduct({{32, 64, 128}, {0, 1}});

void BM_StackedStage(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const StackedStage stage(24, 48, k, 4, 8, rng);
  const Tensor f = uniform_tensor({2, 256, 24}, rng), x = uniform_tensor({2, 64, 48}, rng);
  const Tensor z = uniform_tensor({2, k, 8}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(stage(f, {16, 16}, x, {8, 8}, z));
}
BENCHMARK(BM_StackedStage)->Arg(6)->Arg(50);

void BM_Hungarian(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  std::vector<double> cost(k * k);
  for (double& c : cost) c = rng.uniform();
  for (auto _ : state) benchmark::DoNotOptimize(hungarian(cost, k, k));
}
BENCHMARK(BM_Hungarian)->Arg(6)->Arg(50);

void BM_TrainingStep(benchmark::State& state) {
  const Config c = desk_preset();
  GeneratorSpec spec = GeneratorSpec::from_config(c);
  spec.clips = 2;
  const auto clips = generate_synthetic(spec, 4);
  FteaModel model(c);
  TrainOptions opts;
  opts.max_steps = 1;
  for (auto _ : state) benchmark::DoNotOptimize(train(model, clips, opts));
}
BENCHMARK(BM_TrainingStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
