#include <gtest/gtest.h>

#include <filesystem>

#include "asyncrl/executors.hpp"
#include "expect_error.hpp"

using namespace asyncrl;

namespace {

GeneratorConfig gen_config(std::uint32_t prompts, std::uint32_t n = 4) {
  GeneratorConfig c;
  c.shape = {8, 6, 2};
  c.task = {8, 2, 3};
  c.seed = 11;
  c.init_scale = 0.5;
  c.prompts_per_step = prompts;
  c.group_size = n;
  return c;
}

std::vector<Sequence> completions(const Executor& e) { return std::get<std::vector<Sequence>>(e.get_output("completions")); }

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("asyncrl_test_" + name);
}

}  // namespace

TEST(Executors, SpecValidation) {
  EXPECT_ERROR(ExecutorSpec({"", Role::kGenerator, 1, 1}).validate(), ErrorCategory::kConfig);
  EXPECT_ERROR(ExecutorSpec({"g", Role::kGenerator, 0, 1}).validate(), ErrorCategory::kConfig);
  EXPECT_ERROR(ExecutorSpec({"g", Role::kGenerator, 6, 4}).validate(), ErrorCategory::kConfig);
  EXPECT_EQ(ExecutorSpec({"g", Role::kGenerator, 8, 2}).dp(), 4u);
  EXPECT_ERROR(GeneratorExecutor({"g", Role::kTrainer, 1, 1}, gen_config(2)), ErrorCategory::kConfig);
}

TEST(Executors, GeneratorEmitsCompleteGroups) {
  GeneratorExecutor g({"gen", Role::kGenerator, 2, 1}, gen_config(3));
  g.init();
  g.step();
  const auto out = completions(g);
  ASSERT_EQ(out.size(), 12u);
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_EQ(out[i].prompt_id, i / 4);
    EXPECT_EQ(out[i].attempt, i % 4);
    EXPECT_TRUE(out[i].complete);
    EXPECT_EQ(out[i].behavior_logprobs.size(), out[i].tokens.size());
  }
  const auto parts = g.get_worker_outputs("completions");
  ASSERT_EQ(parts.size(), 2u);
  std::vector<Sequence> joined;
  for (const auto& p : parts) {
    const auto& v = std::get<std::vector<Sequence>>(p);
    joined.insert(joined.end(), v.begin(), v.end());
  }
  EXPECT_EQ(joined, out);
}

TEST(Executors, PartialRolloutMatchesSingleShot) {
  auto cfg = gen_config(2);
  GeneratorExecutor whole({"whole", Role::kGenerator, 1, 1}, cfg);
  whole.init();
  whole.step();
  cfg.max_new_tokens = 2;
  GeneratorExecutor parts({"parts", Role::kGenerator, 1, 1}, cfg);
  parts.init();
  std::vector<Sequence> first_batch;
  for (int s = 0; s < 3; ++s) {
    parts.step();
    for (const auto& seq : completions(parts)) {
      if (seq.prompt_id < 2) first_batch.push_back(seq);
    }
  }
  auto want = completions(whole);
  auto by_key = [](const Sequence& a, const Sequence& b) {
    return std::tie(a.prompt_id, a.attempt) < std::tie(b.prompt_id, b.attempt);
  };
  std::sort(first_batch.begin(), first_batch.end(), by_key);
  std::sort(want.begin(), want.end(), by_key);
  EXPECT_EQ(first_batch, want);
}

TEST(Executors, PartialRolloutKeepsOldestVersion) {
  auto cfg = gen_config(1, 2);
  cfg.max_new_tokens = 1;
  cfg.shape.max_len = 4;
  cfg.init_scale = 0.0;
  GeneratorExecutor g({"g", Role::kGenerator, 1, 1}, cfg);
  g.init();
  const auto base = g.params();
  std::uint64_t max_gap = 0;
  for (std::uint64_t v = 1; v <= 6; ++v) {
    g.step();
    for (const auto& s : completions(g)) max_gap = std::max(max_gap, g.params().version() - s.behavior_version);
    g.receive_weights(base.with_version(v));
  }
  EXPECT_GE(max_gap, 1u);
  EXPECT_ERROR(g.receive_weights(base.with_version(2)), ErrorCategory::kProtocol);
  EXPECT_ERROR(g.receive_weights(PolicyParams({8, 5, 2}, 9)), ErrorCategory::kShard);
}

TEST(Executors, GeneratorCheckpointResumesIdentically) {
  auto cfg = gen_config(2);
  cfg.max_new_tokens = 2;
  const auto path = temp_path("gen.ckpt").string();
  GeneratorExecutor a({"g", Role::kGenerator, 1, 1}, cfg);
  a.init();
  a.step();
  a.step();
  a.save_checkpoint(path);
  a.step();
  GeneratorExecutor b({"g", Role::kGenerator, 1, 1}, cfg);
  b.load_checkpoint(path);
  EXPECT_EQ(b.curr_step(), 2u);
  b.step();
  EXPECT_EQ(completions(b), completions(a));
  EXPECT_EQ(b.rollout_cache(), a.rollout_cache());
  EXPECT_EQ(b.checkpoint(), a.checkpoint());
  std::filesystem::remove(path);
}

TEST(Executors, CheckpointRoleAndHeaderChecks) {
  GeneratorExecutor g({"g", Role::kGenerator, 1, 1}, gen_config(1));
  g.init();
  RewardExecutor r({"r", Role::kReward, 1, 1}, RewardConfig{{8, 2, 3}, 4, false});
  EXPECT_ERROR(r.restore(g.checkpoint()), ErrorCategory::kData);
  auto bytes = g.checkpoint();
  bytes[0] = std::byte{'X'};
  EXPECT_ERROR(g.restore(bytes), ErrorCategory::kData);
  GeneratorExecutor fresh({"g", Role::kGenerator, 1, 1}, gen_config(1));
  EXPECT_ERROR(fresh.save_checkpoint(temp_path("never").string()), ErrorCategory::kProtocol);
}

TEST(Executors, MissingCheckpointFailsInit) {
  auto cfg = gen_config(1);
  cfg.checkpoint = temp_path("does_not_exist.ckpt").string();
  GeneratorExecutor g({"g", Role::kGenerator, 1, 1}, cfg);
  EXPECT_ERROR(g.init(), ErrorCategory::kInit);
}

TEST(Executors, RewardScoresLargeBatch) {
  GeneratorExecutor g({"g", Role::kGenerator, 1, 1}, gen_config(512));
  g.init();
  g.step();
  RewardExecutor r({"r", Role::kReward, 1, 1}, RewardConfig{{8, 2, 3}, 4, false});
  r.init();
  r.deliver("completions", {completions(g)});
  r.step();
  const auto groups = std::get<std::vector<ScoredGroup>>(r.get_output("completions_with_reward"));
  ASSERT_EQ(groups.size(), 512u);
  const SortTask task{8, 2, 3};
  for (const auto& grp : groups) {
    ASSERT_EQ(grp.rewards.size(), 4u);
    double sum = 0;
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_EQ(grp.rewards[i], score(task, grp.sequences[i].prompt, grp.sequences[i].tokens));
      EXPECT_GE(grp.rewards[i], 0.0);
      EXPECT_LE(grp.rewards[i], 1.0);
      sum += grp.advantages[i];
    }
    EXPECT_NEAR(sum, 0.0, 1e-15);
  }
}

TEST(Executors, RewardRejectsIncompleteGroups) {
  GeneratorExecutor g({"g", Role::kGenerator, 1, 1}, gen_config(2));
  g.init();
  g.step();
  auto s = completions(g);
  s.pop_back();
  RewardExecutor r({"r", Role::kReward, 1, 1}, RewardConfig{{8, 2, 3}, 4, false});
  r.init();
  EXPECT_ERROR(r.step(), ErrorCategory::kProtocol);
  r.deliver("completions", {s});
  EXPECT_ERROR(r.step(), ErrorCategory::kProtocol);
}

TEST(Executors, TrainerStepsAndCheckpoints) {
  GeneratorExecutor g({"g", Role::kGenerator, 1, 1}, gen_config(4));
  g.init();
  g.step();
  TrainerConfig tc;
  tc.shape = {8, 6, 2};
  tc.seed = 11;
  tc.init_scale = 0.5;
  tc.built_in_scorer = true;
  tc.task = {8, 2, 3};
  TrainerExecutor t({"t", Role::kTrainer, 4, 2}, tc);
  t.init();
  EXPECT_EQ(t.params().table_hash(), g.params().table_hash());
  EXPECT_ERROR(t.step(), ErrorCategory::kProtocol);
  t.deliver("completions", {completions(g)});
  t.step();
  ASSERT_TRUE(t.last_metrics().has_value());
  EXPECT_EQ(t.last_metrics()->groups, 4u);
  EXPECT_EQ(t.last_metrics()->produced_version, 1u);
  EXPECT_EQ(t.params().version(), 1u);
  EXPECT_EQ(t.get_model().shards.size(), 2u);
  EXPECT_EQ(assemble_model(t.get_model()).table_hash(), t.params().table_hash());

  const auto path = temp_path("trainer.ckpt").string();
  t.save_checkpoint(path);
  TrainerExecutor u({"t", Role::kTrainer, 4, 2}, tc);
  u.load_checkpoint(path);
  EXPECT_EQ(u.params().table_hash(), t.params().table_hash());
  EXPECT_EQ(u.optimizer_state(), t.optimizer_state());
  EXPECT_EQ(u.checkpoint(), t.checkpoint());
  std::filesystem::remove(path);
}

TEST(Executors, TrainerWithoutScorerRejectsRawCompletions) {
  TrainerConfig tc;
  tc.shape = {8, 6, 2};
  tc.task = {8, 2, 3};
  TrainerExecutor t({"t", Role::kTrainer, 1, 1}, tc);
  t.init();
  EXPECT_ERROR(t.deliver("completions", {std::vector<Sequence>{}}), ErrorCategory::kProtocol);
}

TEST(Executors, LookupErrors) {
  GeneratorExecutor g({"g", Role::kGenerator, 1, 1}, gen_config(1));
  g.init();
  EXPECT_ERROR(g.get_output("completions"), ErrorCategory::kLookup);
  g.step();
  EXPECT_ERROR(g.get_output("nope"), ErrorCategory::kLookup);
  RewardExecutor r({"r", Role::kReward, 1, 1}, RewardConfig{{8, 2, 3}, 4, false});
  EXPECT_ERROR(r.get_model(), ErrorCategory::kLookup);
  EXPECT_ERROR(r.receive_weights(g.params()), ErrorCategory::kProtocol);
}

TEST(Executors, LifecycleErrors) {
  GeneratorExecutor g({"g", Role::kGenerator, 1, 1}, gen_config(1));
  EXPECT_ERROR(g.step(), ErrorCategory::kProtocol);
  g.init();
  EXPECT_ERROR(g.init(), ErrorCategory::kProtocol);
  g.shutdown();
  g.shutdown();
  EXPECT_TRUE(g.shut_down());
  EXPECT_ERROR(g.step(), ErrorCategory::kProtocol);
}
