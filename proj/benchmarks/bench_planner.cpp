#include <benchmark/benchmark.h>

#include "asyncrl/planner.hpp"

using namespace asyncrl;

namespace {

struct Fixture {
  CostConstants consts;
  Workload workload;
};

Fixture make(double gpus) {
  CostConstants c;
  c.total_gpus = gpus;
  c.global_batch = 512;
  c.mem_per_gpu = 80;
  c.model_size = 64;
  c.activation_coeff = 3.2;
  c.kv_coeff = 1.28;
  std::vector<CurvePoint> t, g;
  for (double b = 1; b <= 256; b *= 2) {
    t.push_back({b, 64 * (0.5 + 0.1 * b)});
    g.push_back({b, 64 * (2 + 0.02 * b)});
  }
  return Fixture{c, Workload{ProcessingCurve(t), ProcessingCurve(g)}};
}

void BM_OptimizeAsync(benchmark::State& state) {
  const auto f = make(static_cast<double>(state.range(0)));
  const auto mode = state.range(1) ? PlanMode::kInteger : PlanMode::kContinuous;
  const auto grid = GridSpec::powers_of_two(f.workload, mode);
  for (auto _ : state) benchmark::DoNotOptimize(optimize_async(f.consts, f.workload, grid));
}
BENCHMARK(BM_OptimizeAsync)->Args({64, 0})->Args({64, 1})->Args({512, 1});

void BM_VerifySpeedup(benchmark::State& state) {
  const auto f = make(64);
  const auto grid = GridSpec::powers_of_two(f.workload);
  for (auto _ : state) benchmark::DoNotOptimize(verify_speedup(f.consts, f.workload, grid));
}
BENCHMARK(BM_VerifySpeedup);

void BM_BruteForceOracle(benchmark::State& state) {
  const auto f = make(32);
  auto grid = GridSpec::powers_of_two(f.workload, PlanMode::kInteger);
  grid.max_mp = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(brute_force_oracle(f.consts, f.workload, grid, Framework::kAsync));
}
BENCHMARK(BM_BruteForceOracle)->Arg(8)->Arg(16);

}  // namespace
