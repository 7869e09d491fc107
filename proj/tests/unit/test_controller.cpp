#include <gtest/gtest.h>

#include <filesystem>

#include "asyncrl/controller.hpp"
#include "expect_error.hpp"

using namespace asyncrl;

namespace {

constexpr std::uint32_t kPrompts = 4;
constexpr std::uint32_t kGroup = 2;

std::vector<std::unique_ptr<Executor>> pipeline(std::uint32_t trainer_mp = 1) {
  const PolicyShape shape{6, 4, 1};
  const SortTask task{6, 2, 1};
  GeneratorConfig gc;
  gc.shape = shape;
  gc.task = task;
  gc.seed = 1;
  gc.prompts_per_step = kPrompts;
  gc.group_size = kGroup;
  TrainerConfig tc;
  tc.shape = shape;
  tc.seed = 1;
  tc.task = task;
  tc.aipo.group_size = kGroup;
  std::vector<std::unique_ptr<Executor>> ex;
  ex.push_back(std::make_unique<GeneratorExecutor>(ExecutorSpec{"generator", Role::kGenerator, 2, 1}, gc));
  ex.push_back(std::make_unique<RewardExecutor>(ExecutorSpec{"reward", Role::kReward, 1, 1},
                                                RewardConfig{task, kGroup, false}));
  ex.push_back(
      std::make_unique<TrainerExecutor>(ExecutorSpec{"trainer", Role::kTrainer, 2 * trainer_mp, trainer_mp}, tc));
  return ex;
}

ControllerConfig config(Mode mode, std::uint64_t steps, std::uint32_t n_lag = 1) {
  ControllerConfig c;
  c.channels = {
      {"weights", "trainer", "generator", CommType::kDdmaWeightsUpdate, false},
      {"completions", "generator", "reward", CommType::kGather, false},
      {"completions_with_reward", "reward", "trainer", CommType::kScatter, false},
  };
  c.max_steps = steps;
  c.mode = mode;
  c.n_lag = n_lag;
  c.durations.generator = 0.5;
  c.durations.trainer = 1.0;
  return c;
}

std::uint64_t final_hash(Controller& c) {
  return dynamic_cast<TrainerExecutor&>(c.executor("trainer")).params().table_hash();
}

}  // namespace

TEST(Controller, ZeroStepsIsEmpty) {
  Controller c(config(Mode::kSync, 0), pipeline());
  const auto r = c.run();
  EXPECT_TRUE(r.trace.empty());
  EXPECT_TRUE(r.metrics.empty());
}

TEST(Controller, SyncRunsChannelsInOrderOnFreshSamples) {
  Controller c(config(Mode::kSync, 5), pipeline(2));
  const auto r = c.run();
  ASSERT_EQ(r.metrics.size(), 5u);
  std::vector<std::string> channels;
  for (const auto& t : r.trace) {
    if (t.kind == "channel" && t.step == 2) channels.push_back(t.executor);
  }
  EXPECT_EQ(channels, (std::vector<std::string>{"weights", "completions", "completions_with_reward"}));
  for (const auto& m : r.metrics) {
    EXPECT_EQ(m.consumed_version, m.learner_version);
    EXPECT_EQ(m.sequences, kPrompts * kGroup);
    EXPECT_EQ(m.max_is_weight, 1.0);
  }
  EXPECT_EQ(r.metrics.back().produced_version, 5u);
}

TEST(Controller, AsyncStalenessIsBoundedByLag) {
  for (std::uint32_t n_lag : {1u, 2u, 4u}) {
    Controller c(config(Mode::kAsync, 20, n_lag), pipeline());
    const auto r = c.run();
    ASSERT_EQ(r.metrics.size(), 20u);
    std::uint64_t worst = 0;
    for (const auto& m : r.metrics) {
      ASSERT_LE(m.consumed_version, m.learner_version);
      worst = std::max(worst, m.learner_version - m.consumed_version);
      EXPECT_EQ(m.sequences, kPrompts * kGroup);
    }
    EXPECT_LE(worst, n_lag);
    EXPECT_EQ(worst, n_lag) << "fast generator should run the full lag ahead";
  }
}

TEST(Controller, EveryStepConsumesOneFreshBatch) {
  Controller c(config(Mode::kAsync, 12, 2), pipeline());
  const auto r = c.run();
  std::vector<std::uint64_t> generated, consumed;
  for (const auto& t : r.trace) {
    if (t.kind == "step" && t.executor == "trainer") consumed.push_back(t.items);
    if (t.kind == "step" && t.executor == "generator") generated.push_back(t.items);
  }
  ASSERT_EQ(consumed.size(), 12u);
  EXPECT_GE(generated.size(), consumed.size());
  for (auto n : consumed) EXPECT_EQ(n, kPrompts * kGroup);
}

TEST(Controller, DiscreteEventRunsAreReproducible) {
  Controller a(config(Mode::kAsync, 10, 2), pipeline());
  Controller b(config(Mode::kAsync, 10, 2), pipeline());
  const auto ra = a.run();
  const auto rb = b.run();
  EXPECT_EQ(to_jsonl(ra.trace), to_jsonl(rb.trace));
  EXPECT_EQ(final_hash(a), final_hash(b));
}

TEST(Controller, ThreadedSchedulerRespectsLag) {
  auto cfg = config(Mode::kAsync, 15, 2);
  cfg.scheduler = SchedulerKind::kThreaded;
  Controller c(cfg, pipeline());
  const auto r = c.run();
  ASSERT_EQ(r.metrics.size(), 15u);
  for (const auto& m : r.metrics) {
    EXPECT_LE(m.learner_version - m.consumed_version, 2u);
    EXPECT_EQ(m.produced_version, m.step + 1);
  }
}

TEST(Controller, ZeroCapacityQueueStalls) {
  auto cfg = config(Mode::kAsync, 3, 1);
  cfg.queue_capacity = 0;
  Controller c(cfg, pipeline());
  try {
    c.run();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::kProtocol);
    EXPECT_NE(std::string(e.what()).find("no progress"), std::string::npos);
  }
}

TEST(Controller, WiringErrors) {
  auto cfg = config(Mode::kSync, 1);
  cfg.channels[1].inbound = "ghost";
  EXPECT_ERROR(Controller(cfg, pipeline()), ErrorCategory::kConfig);
  auto backwards = config(Mode::kSync, 1);
  std::swap(backwards.channels[1], backwards.channels[2]);
  EXPECT_ERROR(Controller(backwards, pipeline()), ErrorCategory::kConfig);
  auto dup = pipeline();
  dup.push_back(std::move(pipeline().front()));
  EXPECT_ERROR(Controller(config(Mode::kSync, 1), std::move(dup)), ErrorCategory::kConfig);
}

TEST(Controller, LifecycleAndCheckpoints) {
  const auto dir = std::filesystem::temp_directory_path() / "asyncrl_controller_ckpt";
  std::filesystem::remove_all(dir);
  auto cfg = config(Mode::kSync, 3);
  cfg.checkpoint_dir = dir.string();
  Controller c(cfg, pipeline());
  c.run();
  EXPECT_ERROR(c.run(), ErrorCategory::kProtocol);
  EXPECT_ERROR(c.executor("nobody"), ErrorCategory::kLookup);
  c.shutdown();
  c.shutdown();
  EXPECT_TRUE(c.is_shut_down());
  EXPECT_TRUE(c.executor("trainer").shut_down());
  EXPECT_TRUE(std::filesystem::exists(dir / "trainer.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "generator.ckpt"));
  std::filesystem::remove_all(dir);
}

TEST(Controller, RunAfterShutdownIsProtocolError) {
  Controller c(config(Mode::kSync, 1), pipeline());
  c.shutdown();
  EXPECT_ERROR(c.run(), ErrorCategory::kProtocol);
}

TEST(Trace, JsonlRoundTrip) {
  Controller c(config(Mode::kAsync, 4, 1), pipeline());
  const auto r = c.run();
  const auto text = to_jsonl(r.trace);
  EXPECT_EQ(parse_jsonl(text), r.trace);
  EXPECT_EQ(parse_jsonl("# seed=1\n" + text), r.trace);
  EXPECT_ERROR(parse_jsonl("{not json}\n"), ErrorCategory::kData);
}

// ---- timing -------------------------------------------------------------------------

TEST(Timing, EqualStagesHalveTheStepTime) {
  StageDurations d;
  d.generator = 2.0;
  d.trainer = 2.0;
  const double sync = measure_step_time(Mode::kSync, d, 64, 1, 16).step_time;
  const double async = measure_step_time(Mode::kAsync, d, 64, 1, 16).step_time;
  EXPECT_DOUBLE_EQ(sync, 4.0);
  EXPECT_DOUBLE_EQ(async, 2.0);
}

TEST(Timing, SlowTrainerBoundsAsyncStep) {
  StageDurations d;
  d.generator = 1.0;
  d.trainer = 3.0;
  EXPECT_DOUBLE_EQ(measure_step_time(Mode::kSync, d, 64, 1, 16).step_time, 4.0);
  EXPECT_DOUBLE_EQ(measure_step_time(Mode::kAsync, d, 64, 1, 16).step_time, 3.0);
}

TEST(Timing, ConstantClosedForm) {
  for (double g : {0.5, 1.0, 2.5}) {
    for (double t : {0.5, 1.0, 2.0}) {
      for (double ws : {0.0, 0.3}) {
        for (std::uint32_t lag : {1u, 2u, 3u}) {
          StageDurations d;
          d.generator = g;
          d.reward = 0.1;
          d.trainer = t;
          d.weights_sync = ws;
          const double want = std::max({g + 0.1, t, (g + 0.1 + t + ws) / (lag + 1)});
          EXPECT_NEAR(measure_step_time(Mode::kAsync, d, 96, lag, 16).step_time, want, 1e-12 * want);
        }
      }
    }
  }
}

TEST(Timing, ScheduleHonoursLagAndQueue) {
  StageDurations d;
  d.generator = 0.3;
  d.trainer = 1.0;
  d.straggler_sigma = 0.8;
  d.generator_workers = 4;
  d.seed = 5;
  for (std::uint32_t lag : {1u, 3u}) {
    const auto s = measure_step_time(Mode::kAsync, d, 40, lag, 8).schedule;
    ASSERT_EQ(s.trainer.size(), 40u);
    for (std::size_t j = 0; j < s.generator.size(); ++j) {
      if (j > lag) EXPECT_GE(s.generator[j].t_start, s.trainer[j - lag - 1].t_handoff);
      if (j > 0) EXPECT_GE(s.generator[j].t_start, s.generator[j - 1].t_handoff);
    }
    for (std::size_t k = 0; k < s.trainer.size(); ++k) {
      EXPECT_GE(s.trainer[k].t_start, s.generator[k].t_handoff);
      EXPECT_LE(k - s.trainer[k].version, lag);
    }
  }
}

TEST(Timing, StragglersSlowTheMaxOfWorkers) {
  StageDurations d;
  d.generator = 1.0;
  d.straggler_sigma = 0.5;
  d.generator_workers = 8;
  double mean = 0;
  for (std::uint64_t j = 0; j < 200; ++j) {
    EXPECT_GT(d.generator_time(j), 0.0);
    mean += d.generator_time(j) / 200;
  }
  EXPECT_GT(mean, 1.0);
  d.straggler_sigma = 0;
  EXPECT_EQ(d.generator_time(3), 1.0);
}

TEST(Timing, SteadyStateWindow) {
  const std::vector<double> ends{1, 3, 4, 6, 8};
  EXPECT_DOUBLE_EQ(steady_state_step_time(ends, 2), 2.0);
  EXPECT_ERROR(steady_state_step_time(ends, 5), ErrorCategory::kConfig);
}
