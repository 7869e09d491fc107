#pragma once

// Experiment runner behind the `asyncrl` CLI.
//
// Config files are INI: `key = value` lines under `[section]` headers, `#` or
// `;` comments. Relative paths resolve against the config file's directory.
//
//   [experiment]  id = PLAN_SWEEP | TIMING | TRAIN_COMPARE, seed, output
//   [plan]        mode = continuous | integer, scales = name, name, ...
//   [scale.NAME]  constants, trainer_curve, generator_curve, generator_weight_scale,
//                 generator_time_scale
//   [timing]      steps, window, n_lag, generator, reward, trainer, weights_sync,
//                 straggler_sigma, generator_workers, scales
//   [train]       see TrainSettings
//
// Constants files hold `key = value` pairs (total_gpus, global_batch,
// mem_per_gpu, model_size, activation_coeff, kv_coeff). Curve files hold one
// `batch,time` pair per line.
//
// Every output file starts with `# seed=<u64>` and `# config_hash=<hex>`.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "asyncrl/controller.hpp"
#include "asyncrl/cost_model.hpp"
#include "asyncrl/planner.hpp"

namespace asyncrl {

enum class ExperimentKind { kPlanSweep, kTiming, kTrainCompare };

std::string_view to_string(ExperimentKind kind) noexcept;
ExperimentKind experiment_from_string(std::string_view name);

CostConstants parse_constants(const std::string& text);
CostConstants load_constants(const std::filesystem::path& path);
ProcessingCurve parse_curve(const std::string& text);
ProcessingCurve load_curve(const std::filesystem::path& path);

struct ScaleSpec {
  std::string name;
  std::filesystem::path constants;
  std::filesystem::path trainer_curve;
  std::filesystem::path generator_curve;
  QuantizationProfile quant;
};

struct TimingSettings {
  std::uint64_t steps = 64;
  std::uint64_t window = 16;
  std::uint32_t n_lag = 1;
  StageDurations durations;
  std::vector<std::string> scales;  // measured against the planner layouts of these scales
};

struct TrainSettings {
  std::uint32_t vocab = 16;
  std::uint32_t max_len = 8;
  std::uint32_t order = 3;
  std::uint32_t prompt_len = 2;
  std::uint32_t prompts_per_step = 64;
  std::uint32_t group_size = 4;
  std::uint64_t steps = 1000;
  std::uint64_t final_window = 20;
  std::uint32_t n_lag = 1;
  double init_scale = 0.0;
  double temperature = 1.0;
  AipoConfig aipo;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::uint32_t generator_workers = 2;
  std::uint32_t trainer_workers = 2;
  std::uint32_t trainer_mp = 2;
  std::uint32_t generator_mp = 1;
  StageDurations durations;  // simulated stage times for the trace
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kPlanSweep;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";
  PlanMode plan_mode = PlanMode::kInteger;
  std::vector<ScaleSpec> scales;
  TimingSettings timing;
  TrainSettings train;
  std::string config_hash;  // fnv1a64 of the config text
  std::optional<Mode> only_mode;

  void validate() const;
};

/// `base_dir` resolves relative paths inside the config.
ExperimentConfig parse_experiment_config(const std::string& text, const std::filesystem::path& base_dir);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// `# seed=..` and `# config_hash=..` lines.
std::string output_header(const ExperimentConfig& config);

// ---- plan sweep -----------------------------------------------------------------

struct ScaleOutcome {
  std::string name;
  std::optional<SpeedupReport> report;
  std::string rejection;  // set when ingestion or planning failed
};

struct PlanSweepResult {
  std::vector<ScaleOutcome> scales;
  std::optional<bool> gains_increasing;  // only with two or more planned scales
  bool all_theorems_hold = true;
};

/// Writes plan_<scale>.json for each scale and plan_summary.csv. kExperiment
/// when, in continuous mode, some instance's async layout is not strictly
/// faster, or when gains are not strictly increasing in model size.
PlanSweepResult run_plan_sweep(const ExperimentConfig& config);

// ---- timing ---------------------------------------------------------------------

struct TimingRow {
  std::string source;  // "constant" or a scale name
  double trainer_batch = 0;
  double generator_batch = 0;
  Mode mode = Mode::kSync;
  double measured = 0;
  double closed_form = 0;
};

/// Simulated per-step stage times for a planned layout: each stage processes
/// the global batch split over its data-parallel replicas.
StageDurations durations_for_plan(const CostConstants& consts, const Workload& workload, const PlanConfig& plan,
                                  bool async);

/// Writes timing.csv and per_sample.csv.
std::vector<TimingRow> run_timing(const ExperimentConfig& config);

// ---- training comparison ----------------------------------------------------------

enum class Arm { kSync, kAsyncCorrected, kAsyncUncorrected };

std::string_view to_string(Arm arm) noexcept;

struct ArmResult {
  Arm arm = Arm::kSync;
  std::vector<TrainerMetrics> metrics;
  std::vector<TraceRecord> trace;
  double final_window_reward = 0;
  double max_is_weight = 0;
  double max_staleness = 0;
  double reward_variance = 0;   // over the final window
  double max_grad_norm = 0;
};

/// One arm on the sorting task with the deterministic scheduler.
ArmResult run_arm(const TrainSettings& settings, Arm arm, std::uint64_t seed);

/// Runs the configured arms and writes train_curve.csv, train_summary.csv and
/// trace_<arm>.jsonl.
std::vector<ArmResult> run_train_compare(const ExperimentConfig& config);

}  // namespace asyncrl
