#pragma once

// Memory-constrained step-time minimization for the colocated synchronous
// baseline and for the decoupled asynchronous layout, plus the numerical
// check that the asynchronous optimum is strictly faster.
//
// Two search modes:
//   kContinuous  m and theta are real; m is set to the exact ratio
//                footprint / M0 so the memory constraint is active. This is
//                the path on which the speedup claim is asserted.
//   kInteger     m is a positive integer and theta is a multiple of 1/G0
//                with at least one model instance on each side. This is the
//                deployment-planning path; it reports a gain but carries no
//                strictness guarantee.
// Batch sizes always come from the grid. Among equal step times the smaller
// (m, then b_t, then b_g) wins; for the async layout the key is
// (m_t, m_g, b_t, b_g, theta).

#include <cstdint>
#include <string>
#include <vector>

#include "asyncrl/cost_model.hpp"

namespace asyncrl {

enum class PlanMode { kContinuous, kInteger };
enum class Framework { kBaseline, kAsync };

std::string_view to_string(PlanMode mode) noexcept;
std::string_view to_string(Framework framework) noexcept;

/// Upper bound on cells the brute-force oracle agrees to enumerate.
inline constexpr std::uint64_t kOracleCellLimit = 10'000'000;

struct GridSpec {
  std::vector<double> trainer_batches;
  std::vector<double> generator_batches;
  PlanMode mode = PlanMode::kContinuous;
  /// Treat m <= G0 as a hard constraint. Off by default: a violation is only
  /// reported as a warning on the result.
  bool enforce_mp_cap = false;

  // Oracle enumeration. Integer mode: m in {1..max_mp}, theta in {k/G0}.
  // Continuous mode: m in {mp_step, 2 mp_step, ..} up to max_mp and theta in
  // {k/theta_steps}.
  int max_mp = 64;
  double mp_step = 0.25;
  int theta_steps = 64;

  /// Powers of two inside each curve's domain (the tabulated points if the
  /// domain contains no power of two).
  static GridSpec powers_of_two(const Workload& workload, PlanMode mode = PlanMode::kContinuous);
};

struct ConstraintSlack {
  std::string name;  // "shared", "trainer" or "generator"
  double slack = 0;  // M0 - per-GPU footprint, >= 0 for feasible plans
};

struct PlanResult {
  Framework framework = Framework::kBaseline;
  PlanMode mode = PlanMode::kContinuous;
  PlanConfig config;
  double step_time = 0;
  double trainer_mem = 0;    // per GPU; for the baseline, the trainer share of the shared GPU
  double generator_mem = 0;
  double trainer_eta = 0;
  double generator_eta = 0;
  std::vector<ConstraintSlack> slacks;
  std::vector<std::string> warnings;
};

PlanResult optimize_baseline(const CostConstants& consts, const Workload& workload, const GridSpec& grid);
PlanResult optimize_async(const CostConstants& consts, const Workload& workload, const GridSpec& grid);

/// Best per-side times T_t** = min (4W0 + A_t b) eta_t(b) / M0 and
/// T_g** = min (s W0 + K_g b) eta_g(b) / M0 over the grid, solved independently.
struct DecoupledOptima {
  double trainer_time = 0;
  double generator_time = 0;
  double trainer_batch = 0;
  double generator_batch = 0;
};

DecoupledOptima decoupled_optima(const CostConstants& consts, const Workload& workload, const GridSpec& grid);

/// Intermediate quantities of the baseline-to-async inequality chain, all
/// scaled by B0/G0:
///   a  trainer and generator footprint-times at the baseline optimum, summed
///   b  T_t** + T_g**
///   c  max(T_t** / theta, T_g** / (1 - theta)) at the async theta
///   d  max(eta_t m_t / theta, eta_g m_g / (1 - theta)) at the async optimum
/// Expected: baseline > a >= b == c == d == async step time.
struct ChainValues {
  double a = 0;
  double b = 0;
  double c = 0;
  double d = 0;
};

struct SpeedupReport {
  PlanResult baseline;
  PlanResult async;
  DecoupledOptima decoupled;
  ChainValues chain;
  double gain = 0;
  bool theorem_holds = false;  // async step time strictly below the baseline's
  bool chain_ordered = false;  // the relations listed on ChainValues hold
};

/// Relative tolerance for the equalities of the chain and for identities that
/// hold exactly in real arithmetic.
inline constexpr double kIdentityRelTol = 1e-9;

SpeedupReport verify_speedup(const CostConstants& consts, const Workload& workload, const GridSpec& grid);

/// Residuals of the optimality conditions at a plan. For continuous-mode
/// optima the memory constraints are active (slack ~ 0) and, for the async
/// layout, both arms of the max are equal.
struct LemmaReport {
  Framework framework = Framework::kBaseline;
  double max_abs_slack = 0;
  double theta_balance_residual = 0;  // |eta_t m_t/theta - eta_g m_g/(1-theta)|, 0 for the baseline
};

LemmaReport check_lemmas(const PlanResult& result);

/// Exhaustive enumeration of every grid cell with an exact feasibility check.
/// kRefusal error when the grid exceeds kOracleCellLimit cells, kInfeasible
/// when no cell fits.
PlanResult brute_force_oracle(const CostConstants& consts, const Workload& workload, const GridSpec& grid,
                              Framework framework);

/// Cell count the oracle would enumerate for `framework`.
std::uint64_t oracle_cell_count(const CostConstants& consts, const GridSpec& grid, Framework framework);

/// Smallest integer m >= 1 with footprint / m <= M0.
double min_integer_mp(double footprint, double mem_per_gpu);

}  // namespace asyncrl
