#pragma once

// Executors own one RL pipeline stage each. Inputs arrive through deliver()
// from the channel layer, step() runs one RL step, outputs are read back with
// get_output() / get_model().
//
// Checkpoint layout (little-endian):
//   0   4  magic "ARLC"
//   4   4  u32 format version (1)
//   8   1  u8  role (0 generator, 1 trainer, 2 reward)
//   9   3  reserved, zero
//   12  8  u64 step counter
//   20  .  role payload
// Generator payload: blob(policy snapshot), u64 pending count then
// (u64 prompt id, u32 attempt) pairs, u64 cache count then sequence records,
// u64 buffered count then sequence records.
// Trainer payload: blob(policy snapshot), blob(reference snapshot), optimizer
// state (u64 steps, f64 array first moments, f64 array second moments).
// Reward payload: empty.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "asyncrl/channels.hpp"
#include "asyncrl/policy.hpp"
#include "asyncrl/rl_algo.hpp"

namespace asyncrl {

enum class Role : std::uint8_t { kGenerator = 0, kTrainer = 1, kReward = 2 };

std::string_view to_string(Role role) noexcept;
Role role_from_string(std::string_view name);

struct ExecutorSpec {
  std::string name;
  Role role = Role::kGenerator;
  std::uint32_t worker_count = 1;
  std::uint32_t mp = 1;

  /// worker_count >= 1 and divisible by mp.
  void validate() const;
  std::uint32_t dp() const { return worker_count / mp; }
};

using Items = std::variant<std::vector<Sequence>, std::vector<ScoredGroup>>;

inline constexpr std::uint32_t kCheckpointFormat = 1;

struct CheckpointHeader {
  Role role = Role::kGenerator;
  std::uint64_t step = 0;
};

Bytes checkpoint_bytes(Role role, std::uint64_t step, std::span<const std::byte> payload);
/// Parses and checks the header; returns it and leaves `reader` at the payload.
CheckpointHeader read_checkpoint_header(ByteReader& reader);

class Executor {
 public:
  explicit Executor(ExecutorSpec spec);
  virtual ~Executor() = default;
  Executor(const Executor&) = delete;
  Executor& operator=(const Executor&) = delete;

  const ExecutorSpec& spec() const noexcept { return spec_; }
  const std::string& name() const noexcept { return spec_.name; }
  std::uint64_t curr_step() const noexcept { return step_; }
  bool initialized() const noexcept { return initialized_; }
  bool shut_down() const noexcept { return shut_down_; }

  void init();
  /// One RL step; kProtocol when not initialized, shut down, or missing inputs.
  void step();
  void shutdown();

  virtual Items get_output(std::string_view name) const;
  /// Output split over this executor's data-parallel replicas; concatenation
  /// in worker order equals get_output(name).
  virtual std::vector<Items> get_worker_outputs(std::string_view name) const;
  /// One entry per inbound worker (a single entry after a GATHER).
  virtual void deliver(std::string_view name, std::vector<Items> per_worker);
  virtual ShardedModel get_model() const;
  virtual void receive_weights(const PolicyParams& params);
  /// Drops undelivered inputs.
  virtual void drain() {}

  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);
  virtual Bytes checkpoint() const;
  virtual void restore(std::span<const std::byte> bytes);

 protected:
  virtual void do_init() = 0;
  virtual void do_step() = 0;
  virtual void write_payload(ByteWriter&) const {}
  virtual void read_payload(ByteReader&) {}
  [[noreturn]] void unknown_output(std::string_view name) const;

  ExecutorSpec spec_;
  std::uint64_t step_ = 0;

 private:
  bool initialized_ = false;
  bool shut_down_ = false;
};

// ---- generator ----------------------------------------------------------------

struct GeneratorConfig {
  PolicyShape shape;
  SortTask task;
  std::uint64_t seed = 0;
  double init_scale = 0.0;
  std::uint32_t prompts_per_step = 8;
  std::uint32_t group_size = 4;
  /// Sequences advanced per step; 0 means no limit.
  std::uint32_t max_decode_concurrency = 0;
  /// Token budget per sequence per step; 0 means up to T_max.
  std::uint32_t max_new_tokens = 0;
  double temperature = 1.0;
  std::optional<std::string> checkpoint;
  std::optional<PolicyParams> initial_params;
};

struct WorkItem {
  std::uint64_t prompt_id = 0;
  std::uint32_t attempt = 0;
  bool operator==(const WorkItem&) const = default;
};

/// Samples completions. New prompts for step s are ids s*P .. s*P+P-1, each
/// with `group_size` attempts. Unfinished sequences stay in the rollout cache
/// and are resumed first on the next step; only complete groups are emitted.
class GeneratorExecutor final : public Executor {
 public:
  GeneratorExecutor(ExecutorSpec spec, GeneratorConfig config);

  Items get_output(std::string_view name) const override;
  std::vector<Items> get_worker_outputs(std::string_view name) const override;
  ShardedModel get_model() const override;
  void receive_weights(const PolicyParams& params) override;

  const PolicyParams& params() const { return params_; }
  const std::vector<Sequence>& emitted() const { return emitted_; }
  const std::vector<Sequence>& rollout_cache() const { return cache_; }
  std::size_t pending() const { return pending_.size(); }
  const GeneratorConfig& config() const { return config_; }

 protected:
  void do_init() override;
  void do_step() override;
  void write_payload(ByteWriter& out) const override;
  void read_payload(ByteReader& in) override;

 private:
  RngStream stream(std::uint64_t prompt_id, std::uint32_t attempt) const;

  GeneratorConfig config_;
  PolicyParams params_;
  std::vector<WorkItem> pending_;
  std::vector<Sequence> cache_;
  std::map<std::uint64_t, std::vector<Sequence>> buffer_;
  std::vector<Sequence> emitted_;
  bool has_output_ = false;
};

// ---- reward -------------------------------------------------------------------

struct RewardConfig {
  SortTask task;
  std::uint32_t group_size = 4;
  bool leave_one_out = false;
};

/// Scores completions and attaches group-mean advantages (no KL term; the
/// trainer adds it when configured).
class RewardExecutor final : public Executor {
 public:
  RewardExecutor(ExecutorSpec spec, RewardConfig config);

  Items get_output(std::string_view name) const override;
  void deliver(std::string_view name, std::vector<Items> per_worker) override;
  void drain() override { input_.reset(); }

 protected:
  void do_init() override {}
  void do_step() override;

 private:
  RewardConfig config_;
  std::optional<std::vector<Sequence>> input_;
  std::vector<ScoredGroup> output_;
  bool has_output_ = false;
};

ScoredGroup score_group(const SortTask& task, std::vector<Sequence> sequences, bool leave_one_out);

// ---- trainer ------------------------------------------------------------------

struct TrainerConfig {
  PolicyShape shape;
  std::uint64_t seed = 0;
  double init_scale = 0.0;
  AipoConfig aipo;
  OptimizerConfig optimizer;
  /// Score raw completions in the trainer instead of a reward executor.
  bool built_in_scorer = false;
  SortTask task;
  std::optional<std::string> checkpoint;
  std::optional<PolicyParams> initial_params;
};

struct TrainerMetrics {
  std::uint64_t step = 0;
  std::uint64_t consumed_version = 0;  // oldest behavior version in the batch
  std::uint64_t produced_version = 0;
  std::uint64_t learner_version = 0;   // version the gradient was taken at
  std::size_t sequences = 0;
  std::size_t groups = 0;
  double mean_reward = 0;
  double max_is_weight = 0;
  double min_is_weight = 0;
  double clip_fraction = 0;
  double grad_norm = 0;
};

class TrainerExecutor final : public Executor {
 public:
  TrainerExecutor(ExecutorSpec spec, TrainerConfig config);

  Items get_output(std::string_view name) const override;
  void deliver(std::string_view name, std::vector<Items> per_worker) override;
  ShardedModel get_model() const override;
  void drain() override;

  const PolicyParams& params() const { return params_; }
  const PolicyParams& reference() const { return reference_; }
  const OptimizerState& optimizer_state() const { return optimizer_; }
  const std::optional<TrainerMetrics>& last_metrics() const { return metrics_; }
  const TrainerConfig& config() const { return config_; }

 protected:
  void do_init() override;
  void do_step() override;
  void write_payload(ByteWriter& out) const override;
  void read_payload(ByteReader& in) override;

 private:
  TrainerConfig config_;
  PolicyParams params_;
  PolicyParams reference_;
  OptimizerState optimizer_;
  std::optional<std::vector<ScoredGroup>> groups_in_;
  std::optional<std::vector<Sequence>> sequences_in_;
  std::vector<ScoredGroup> consumed_;
  std::optional<TrainerMetrics> metrics_;
};

}  // namespace asyncrl
