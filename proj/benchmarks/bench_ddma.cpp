#include <benchmark/benchmark.h>

#include "asyncrl/channels.hpp"

using namespace asyncrl;

namespace {

void BM_DdmaSync(benchmark::State& state) {
  const ChannelSpec weights{"weights", "trainer", "generator", CommType::kDdmaWeightsUpdate};
  const auto p = PolicyParams::seeded({32, 8, 3}, 1, 1.0);
  const auto trainer = shard_model(p, static_cast<std::uint32_t>(state.range(0)));
  const auto model = DdmaModel::calibrated();
  for (auto _ : state) {
    benchmark::DoNotOptimize(ddma_sync(weights, trainer, p.shape(), static_cast<std::uint32_t>(state.range(1)), model));
  }
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(trainer.total_bytes()));
}
BENCHMARK(BM_DdmaSync)->Args({1, 1})->Args({8, 2})->Args({2, 8})->Args({16, 8});

void BM_ShardMap(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(ShardMap::build(1ull << 30, 16, static_cast<std::uint32_t>(state.range(0))));
}
BENCHMARK(BM_ShardMap)->Arg(4)->Arg(64);

void BM_FrameRoundTrip(benchmark::State& state) {
  Frame f;
  f.type = CommType::kGather;
  f.payload.assign(static_cast<std::size_t>(state.range(0)), std::byte{7});
  for (auto _ : state) {
    FrameDecoder dec;
    dec.feed(encode_frame(f));
    benchmark::DoNotOptimize(dec.next());
  }
  state.SetBytesProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_FrameRoundTrip)->Arg(1 << 10)->Arg(1 << 20);

}  // namespace
