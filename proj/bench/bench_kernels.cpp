// Serial reference vs OpenMP kernels.

#include <benchmark/benchmark.h>

#include "dynbatch/experiment.hpp"
#include "dynbatch/kernels.hpp"

using namespace dynbatch;

namespace {

const LengthMoments kMoments{500.0, 90000.0};

void BM_OverflowSerial(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(overflow_count_serial(kMoments, 183, 100000, state.range(0), 1));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_OverflowParallel(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(overflow_count_parallel(kMoments, 183, 100000, state.range(0), 1));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

ExperimentConfig sweep_config() {
  auto cfg = load_config(std::filesystem::path(FIXTURES_DIR) / "c0_capacity.json");
  cfg.workload.requests = 2000;
  return cfg;
}

void BM_SweepSerial(benchmark::State& state) {
  const auto cfg = sweep_config();
  const std::vector<double> qps = {1, 2, 3, 4, 5, 6, 7, 8};
  for (auto _ : state) benchmark::DoNotOptimize(sweep(cfg, SweepAxis::kQps, qps, false));
}

void BM_SweepParallel(benchmark::State& state) {
  const auto cfg = sweep_config();
  const std::vector<double> qps = {1, 2, 3, 4, 5, 6, 7, 8};
  for (auto _ : state) benchmark::DoNotOptimize(sweep(cfg, SweepAxis::kQps, qps, true));
}

}  // namespace

BENCHMARK(BM_OverflowSerial)->Arg(10'000)->Arg(100'000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_OverflowParallel)->Arg(10'000)->Arg(100'000)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_SweepSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SweepParallel)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
