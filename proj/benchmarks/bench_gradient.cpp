#include <benchmark/benchmark.h>

#include "asyncrl/rl_algo.hpp"

using namespace asyncrl;

namespace {

std::vector<ScoredGroup> batch(const PolicyParams& mu, const SortTask& task, std::uint32_t prompts) {
  std::vector<ScoredGroup> out;
  for (std::uint64_t id = 0; id < prompts; ++id) {
    std::vector<Sequence> seqs;
    const auto prompt = task.prompt(id);
    for (std::uint32_t a = 0; a < 4; ++a) seqs.push_back(generate(mu, prompt, RngStream{1, id, a}, mu.max_len()));
    ScoredGroup g;
    g.prompt_id = id;
    for (const auto& s : seqs) g.rewards.push_back(score(task, prompt, s.tokens));
    g.sequences = std::move(seqs);
    g.advantages = group_advantages(g.rewards, {}, 0.0).advantages;
    out.push_back(std::move(g));
  }
  return out;
}

void BM_AipoGradient(benchmark::State& state) {
  const PolicyShape shape{16, 8, 3};
  const SortTask task{16, 2, 0};
  const auto mu = PolicyParams::seeded(shape, 1, 1.0);
  const auto pi = PolicyParams::seeded(shape, 2, 1.0);
  const auto groups = batch(mu, task, static_cast<std::uint32_t>(state.range(0)));
  AipoConfig cfg;
  cfg.rho = 2.0;
  for (auto _ : state) benchmark::DoNotOptimize(aipo_gradient(pi, groups, cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0) * 4);
}
BENCHMARK(BM_AipoGradient)->Arg(16)->Arg(64);

void BM_Generate(benchmark::State& state) {
  const auto p = PolicyParams::seeded({16, 8, 3}, 1, 1.0);
  const std::vector<Token> prompt{3, 9};
  std::uint64_t id = 0;
  for (auto _ : state) benchmark::DoNotOptimize(generate(p, prompt, RngStream{1, id++, 0}, 8));
}
BENCHMARK(BM_Generate);

void BM_AdamStep(benchmark::State& state) {
  auto p = PolicyParams::seeded({16, 8, 3}, 1, 1.0);
  std::vector<double> g(p.table().size(), 1e-3);
  OptimizerState st;
  for (auto _ : state) p = apply_update(p, g, OptimizerConfig{}, st);
}
BENCHMARK(BM_AdamStep);

}  // namespace
