#pragma once

// Single-controller training loop.
//
// SYNC: each round runs the declared channels in order and steps every
// executor right after the last channel that feeds it, so with the
// weights -> completions -> completions_with_reward wiring the trainer always
// learns from samples of its current version.
//
// ASYNC: the generator pipeline (generator, channels, reward) and the trainer
// run as two serial processes joined by a bounded queue of finished batches.
// Generator batch j starts only once version j - n_lag is published, and then
// samples with the newest published version, so every consumed batch is at
// most n_lag versions old. Two schedulers drive it: a deterministic
// discrete-event scheduler over simulated stage durations, and a threaded one.
//
// Trace records are JSON lines with the fields
//   kind ("step" | "channel" | "checkpoint"), step, executor,
//   version_consumed, version_produced, t_start, t_end, items

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "asyncrl/channels.hpp"
#include "asyncrl/executors.hpp"

namespace asyncrl {

enum class Mode { kSync, kAsync };
enum class SchedulerKind { kDiscreteEvent, kThreaded };

std::string_view to_string(Mode mode) noexcept;
Mode mode_from_string(std::string_view name);

/// Simulated stage times. Generator time of batch j is
/// generator * max over workers of exp(sigma * z_{j,w}), z standard normal.
struct StageDurations {
  double generator = 1.0;
  double reward = 0.0;
  double trainer = 1.0;
  double weights_sync = 0.0;
  double straggler_sigma = 0.0;
  std::uint32_t generator_workers = 1;
  std::uint64_t seed = 0;

  void validate() const;
  double generator_time(std::uint64_t batch) const;
};

struct ControllerConfig {
  std::vector<ChannelSpec> channels;       // execution order
  std::vector<ChannelSpec> init_channels;  // run once before the first step
  std::uint64_t max_steps = 0;
  Mode mode = Mode::kSync;
  std::uint32_t n_lag = 1;
  /// Finished batches the queue may hold; defaults to n_lag.
  std::optional<std::size_t> queue_capacity;
  std::uint32_t checkpoint_every = 10;
  std::optional<std::string> checkpoint_dir;
  StageDurations durations;
  /// Weights sync time from the DDMA model on the real shard bytes instead of
  /// durations.weights_sync.
  std::optional<DdmaModel> ddma;
  SchedulerKind scheduler = SchedulerKind::kDiscreteEvent;
  double stall_timeout_seconds = 30.0;

  void validate() const;
};

struct TraceRecord {
  std::string kind;
  std::uint64_t step = 0;
  std::string executor;
  std::uint64_t version_consumed = 0;
  std::uint64_t version_produced = 0;
  double t_start = 0;
  double t_end = 0;
  std::uint64_t items = 0;

  bool operator==(const TraceRecord&) const = default;
};

std::string to_jsonl(const std::vector<TraceRecord>& trace);
std::vector<TraceRecord> parse_jsonl(const std::string& text);

struct RunResult {
  std::vector<TraceRecord> trace;
  std::vector<TrainerMetrics> metrics;
  double end_time = 0;
};

class Controller {
 public:
  Controller(ControllerConfig config, std::vector<std::unique_ptr<Executor>> executors);
  ~Controller();
  Controller(const Controller&) = delete;
  Controller& operator=(const Controller&) = delete;

  /// Initializes executors that are not yet initialized, then runs max_steps
  /// trainer steps. kProtocol after shutdown or on a stalled pipeline.
  RunResult run();
  /// Checkpoints (when configured), drains and releases every executor. Idempotent.
  void shutdown();
  bool is_shut_down() const noexcept { return shut_down_; }

  Executor& executor(std::string_view name);
  const ControllerConfig& config() const noexcept { return config_; }

 private:
  struct Impl;
  ControllerConfig config_;
  std::vector<std::unique_ptr<Executor>> executors_;
  bool shut_down_ = false;
  bool ran_ = false;
};

// ---- timing-only pipeline ------------------------------------------------------

struct ScheduledStage {
  std::uint64_t index = 0;
  std::uint64_t version = 0;  // generator: version sampled with; trainer: behavior version consumed
  double t_start = 0;
  double t_end = 0;
  double t_handoff = 0;  // generator: enqueue time; trainer: publish time of the new version
};

struct Schedule {
  std::vector<ScheduledStage> generator;
  std::vector<ScheduledStage> trainer;
};

/// Deterministic event simulation of the asynchronous pipeline. The callbacks
/// do the work of a stage and return its duration; `sync` returns the time to
/// deliver a newly produced version to the generator. At equal times trainer
/// events go first.
class PipelineScheduler {
 public:
  struct Hooks {
    std::function<double(std::uint64_t batch, std::uint64_t version, double t_start)> generate;
    std::function<double(std::uint64_t step, std::uint64_t batch_version, double t_start)> train;
    std::function<double(std::uint64_t version, double t_start)> sync;
  };

  PipelineScheduler(std::uint64_t steps, std::uint32_t n_lag, std::size_t queue_capacity);

  /// kProtocol "no progress" error, including the schedule so far, when neither
  /// side can advance.
  Schedule run(const Hooks& hooks) const;

 private:
  std::uint64_t steps_;
  std::uint32_t n_lag_;
  std::size_t capacity_;
};

struct TimingResult {
  double step_time = 0;  // steady state, averaged over the last `window` trainer steps
  Schedule schedule;
  std::vector<double> trainer_end_times;
};

/// Runs the timing-only pipeline with constant or straggler durations.
/// SYNC steps take weights_sync + generator + reward + trainer back to back.
TimingResult measure_step_time(Mode mode, const StageDurations& durations, std::uint64_t steps, std::uint32_t n_lag,
                               std::uint64_t window);

/// (t_end[N-1] - t_end[N-1-W]) / W.
double steady_state_step_time(const std::vector<double>& trainer_end_times, std::uint64_t window);

}  // namespace asyncrl
