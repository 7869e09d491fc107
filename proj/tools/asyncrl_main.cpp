// asyncrl: planner sweeps, timing experiments and toy training comparisons.
//
// Exit codes: 0 success, 1 unexpected failure, 10 + ErrorCategory for library
// errors (10 config ... 22 experiment), CLI11's own codes for bad usage.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "asyncrl/error.hpp"
#include "asyncrl/harness.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> mode;
  std::optional<double> rho;
  std::optional<std::uint32_t> lag;
};

void add_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "experiment config file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "override [experiment] seed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--mode", o.mode, "restrict to one mode")->check(CLI::IsMember({"sync", "async"}));
  cmd->add_option("--rho", o.rho, "importance-weight clip")->check(CLI::PositiveNumber);
  cmd->add_option("--lag", o.lag, "staleness bound")->check(CLI::Range(1u, 1u << 20));
}

asyncrl::ExperimentConfig resolve(const Overrides& o, asyncrl::ExperimentKind kind) {
  auto c = asyncrl::load_experiment_config(o.config);
  c.kind = kind;
  if (o.seed) {
    c.seed = *o.seed;
    c.timing.durations.seed = *o.seed;
    c.train.durations.seed = *o.seed;
  }
  if (o.out) c.output_dir = *o.out;
  if (o.mode) c.only_mode = asyncrl::mode_from_string(*o.mode);
  if (o.rho) c.train.aipo.rho = *o.rho;
  if (o.lag) {
    c.timing.n_lag = *o.lag;
    c.train.n_lag = *o.lag;
  }
  c.validate();
  return c;
}

int plan(const asyncrl::ExperimentConfig& c) {
  const auto res = asyncrl::run_plan_sweep(c);
  for (const auto& s : res.scales) {
    if (s.report) {
      std::printf("%-12s baseline %.6g  async %.6g  gain %.4f\n", s.name.c_str(), s.report->baseline.step_time,
                  s.report->async.step_time, s.report->gain);
    } else {
      std::printf("%-12s rejected: %s\n", s.name.c_str(), s.rejection.c_str());
    }
  }
  if (res.gains_increasing) std::printf("gain increases with model size\n");
  return 0;
}

int timing(const asyncrl::ExperimentConfig& c) {
  const auto rows = asyncrl::run_timing(c);
  for (const auto& r : rows) {
    if (r.source != "constant") continue;
    std::printf("constant %-5s measured %.6g  closed form %.6g\n", std::string(asyncrl::to_string(r.mode)).c_str(),
                r.measured, r.closed_form);
  }
  std::printf("%zu rows written to %s\n", rows.size(), (c.output_dir / "timing.csv").c_str());
  return 0;
}

int train(const asyncrl::ExperimentConfig& c) {
  for (const auto& r : asyncrl::run_train_compare(c)) {
    std::printf("%-18s final reward %.4f  max IS weight %.4f  max staleness %.0f\n",
                std::string(asyncrl::to_string(r.arm)).c_str(), r.final_window_reward, r.max_is_weight,
                r.max_staleness);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"asynchronous RL planner, timing and training experiments"};
  app.require_subcommand(1);
  Overrides o;
  auto* plan_cmd = app.add_subcommand("plan", "planner sweep over model scales");
  auto* timing_cmd = app.add_subcommand("timing", "simulated SYNC vs ASYNC step times");
  auto* train_cmd = app.add_subcommand("train", "SYNC / ASYNC+AIPO / ASYNC uncorrected on the sorting task");
  for (auto* cmd : {plan_cmd, timing_cmd, train_cmd}) add_flags(cmd, o);
  CLI11_PARSE(app, argc, argv);

  try {
    if (*plan_cmd) return plan(resolve(o, asyncrl::ExperimentKind::kPlanSweep));
    if (*timing_cmd) return timing(resolve(o, asyncrl::ExperimentKind::kTiming));
    return train(resolve(o, asyncrl::ExperimentKind::kTrainCompare));
  } catch (const asyncrl::Error& e) {
    std::cerr << "asyncrl: " << e.what() << "\n";
    return 10 + static_cast<int>(e.category());
  } catch (const std::exception& e) {
    std::cerr << "asyncrl: " << e.what() << "\n";
    return 1;
  }
}
