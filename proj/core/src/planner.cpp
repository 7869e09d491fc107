#include "asyncrl/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <tuple>

#include "asyncrl/error.hpp"

namespace asyncrl {

std::string_view to_string(PlanMode mode) noexcept {
  return mode == PlanMode::kContinuous ? "continuous" : "integer";
}

std::string_view to_string(Framework framework) noexcept {
  return framework == Framework::kBaseline ? "baseline" : "async";
}

namespace {

using BaselineKey = std::tuple<double, double, double>;                  // m, b_t, b_g
using AsyncKey = std::tuple<double, double, double, double, double>;     // m_t, m_g, b_t, b_g, theta

template <class Key>
struct Best {
  double time = std::numeric_limits<double>::infinity();
  Key key{};
  bool found = false;

  void offer(double t, const Key& k) {
    if (!found || t < time || (t == time && k < key)) {
      time = t;
      key = k;
      found = true;
    }
  }
};

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void validate_grid(const Workload& w, const GridSpec& grid) {
  if (grid.trainer_batches.empty() || grid.generator_batches.empty()) {
    fail(ErrorCategory::kConfig, "grid needs at least one trainer and one generator batch size");
  }
  for (double b : grid.trainer_batches) {
    if (b < 1 || b < w.trainer.min_batch() || b > w.trainer.max_batch()) {
      fail(ErrorCategory::kRange, "trainer grid batch " + num(b) + " outside trainer curve domain");
    }
  }
  for (double b : grid.generator_batches) {
    if (b < 1 || b < w.generator.min_batch() || b > w.generator.max_batch()) {
      fail(ErrorCategory::kRange, "generator grid batch " + num(b) + " outside generator curve domain");
    }
  }
}

int integral_gpus(const CostConstants& c) {
  if (c.total_gpus != std::floor(c.total_gpus) || c.total_gpus < 2) {
    fail(ErrorCategory::kConfig, "integer-mode async planning needs an integral total_gpus >= 2");
  }
  return static_cast<int>(c.total_gpus);
}

double mp_for(double footprint, const CostConstants& c, PlanMode mode) {
  return mode == PlanMode::kContinuous ? footprint / c.mem_per_gpu : min_integer_mp(footprint, c.mem_per_gpu);
}

void add_mp_cap_warning(PlanResult& r, const CostConstants& c, const char* side, double m) {
  if (m > c.total_gpus) {
    r.warnings.push_back(std::string(side) + " mp " + num(m) + " exceeds total_gpus " + num(c.total_gpus));
  }
}

PlanResult finish_baseline(const CostConstants& c, const Workload& w, PlanMode mode, double time,
                           const BaselineKey& key) {
  auto [m, b_t, b_g] = key;
  PlanResult r;
  r.framework = Framework::kBaseline;
  r.mode = mode;
  r.config = PlanConfig{b_t, b_g, m, m, std::nullopt};
  r.step_time = time;
  r.trainer_mem = trainer_memory(c, b_t, m);
  r.generator_mem = generator_memory(c, b_g, m, w.generator_quant);
  r.trainer_eta = w.trainer_eta(b_t);
  r.generator_eta = w.generator_eta(b_g);
  const double shared = (trainer_footprint(c, b_t) + generator_footprint(c, b_g, w.generator_quant)) / m;
  r.slacks.push_back({"shared", c.mem_per_gpu - shared});
  add_mp_cap_warning(r, c, "shared", m);
  if (step_time_baseline(c, w, b_t, b_g, m) != time) {
    fail(ErrorCategory::kData, "baseline plan failed its step-time cross-check");
  }
  return r;
}

PlanResult finish_async(const CostConstants& c, const Workload& w, PlanMode mode, double time, const AsyncKey& key) {
  auto [m_t, m_g, b_t, b_g, theta] = key;
  PlanResult r;
  r.framework = Framework::kAsync;
  r.mode = mode;
  r.config = PlanConfig{b_t, b_g, m_t, m_g, theta};
  r.step_time = time;
  r.trainer_mem = trainer_memory(c, b_t, m_t);
  r.generator_mem = generator_memory(c, b_g, m_g, w.generator_quant);
  r.trainer_eta = w.trainer_eta(b_t);
  r.generator_eta = w.generator_eta(b_g);
  r.slacks.push_back({"trainer", c.mem_per_gpu - r.trainer_mem});
  r.slacks.push_back({"generator", c.mem_per_gpu - r.generator_mem});
  add_mp_cap_warning(r, c, "trainer", m_t);
  add_mp_cap_warning(r, c, "generator", m_g);
  if (step_time_async(c, w, b_t, b_g, m_t, m_g, theta) != time) {
    fail(ErrorCategory::kData, "async plan failed its step-time cross-check");
  }
  return r;
}

[[noreturn]] void no_feasible_plan(Framework f) {
  fail(ErrorCategory::kInfeasible, "no feasible " + std::string(to_string(f)) + " plan on the grid");
}

}  // namespace

GridSpec GridSpec::powers_of_two(const Workload& workload, PlanMode mode) {
  auto pick = [](const ProcessingCurve& curve) {
    std::vector<double> out;
    for (double b = 1; b <= curve.max_batch(); b *= 2) {
      if (b >= curve.min_batch()) out.push_back(b);
    }
    if (out.empty()) {
      for (const auto& p : curve.points()) {
        if (p.batch >= 1) out.push_back(p.batch);
      }
    }
    return out;
  };
  GridSpec grid;
  grid.trainer_batches = pick(workload.trainer);
  grid.generator_batches = pick(workload.generator);
  grid.mode = mode;
  return grid;
}

double min_integer_mp(double footprint, double mem_per_gpu) {
  double m = std::max(1.0, std::ceil(footprint / mem_per_gpu));
  while (m > 1 && fits_in_memory(footprint / (m - 1), mem_per_gpu)) m -= 1;
  while (!fits_in_memory(footprint / m, mem_per_gpu)) m += 1;
  return m;
}

PlanResult optimize_baseline(const CostConstants& c, const Workload& w, const GridSpec& grid) {
  c.validate();
  validate_grid(w, grid);
  Best<BaselineKey> best;
  for (double b_t : grid.trainer_batches) {
    const double eta_t = w.trainer_eta(b_t);
    const double fp_t = trainer_footprint(c, b_t);
    for (double b_g : grid.generator_batches) {
      const double eta_g = w.generator_eta(b_g);
      // Step time grows with m, so the smallest m that fits is optimal for this (b_t, b_g).
      const double m = mp_for(fp_t + generator_footprint(c, b_g, w.generator_quant), c, grid.mode);
      if (grid.enforce_mp_cap && m > c.total_gpus) continue;
      best.offer(baseline_time_from_eta(c, eta_t, eta_g, m), {m, b_t, b_g});
    }
  }
  if (!best.found) no_feasible_plan(Framework::kBaseline);
  return finish_baseline(c, w, grid.mode, best.time, best.key);
}

PlanResult optimize_async(const CostConstants& c, const Workload& w, const GridSpec& grid) {
  c.validate();
  validate_grid(w, grid);
  Best<AsyncKey> best;
  const int gpus = grid.mode == PlanMode::kInteger ? integral_gpus(c) : 0;
  for (double b_t : grid.trainer_batches) {
    const double eta_t = w.trainer_eta(b_t);
    const double m_t = mp_for(trainer_footprint(c, b_t), c, grid.mode);
    if (grid.enforce_mp_cap && m_t > c.total_gpus) continue;
    for (double b_g : grid.generator_batches) {
      const double eta_g = w.generator_eta(b_g);
      const double m_g = mp_for(generator_footprint(c, b_g, w.generator_quant), c, grid.mode);
      if (grid.enforce_mp_cap && m_g > c.total_gpus) continue;
      const double trainer_load = eta_t * m_t;
      const double generator_load = eta_g * m_g;
      if (grid.mode == PlanMode::kContinuous) {
        // Balance both arms of the max.
        const double theta = trainer_load / (trainer_load + generator_load);
        best.offer(async_time_from_eta(c, eta_t, eta_g, m_t, m_g, theta), {m_t, m_g, b_t, b_g, theta});
        continue;
      }
      // theta = k / G0 with room for one model instance on each side. The max
      // of a decreasing and an increasing arm is quasi-convex in k, so the
      // best integer k is next to the real balance point.
      const int lo = static_cast<int>(m_t);
      const int hi = gpus - static_cast<int>(m_g);
      if (lo > hi) continue;
      const double k_star = gpus * trainer_load / (trainer_load + generator_load);
      for (double k_real : {std::floor(k_star), std::ceil(k_star)}) {
        const int k = std::clamp(static_cast<int>(k_real), lo, hi);
        const double theta = static_cast<double>(k) / gpus;
        best.offer(async_time_from_eta(c, eta_t, eta_g, m_t, m_g, theta), {m_t, m_g, b_t, b_g, theta});
      }
    }
  }
  if (!best.found) no_feasible_plan(Framework::kAsync);
  return finish_async(c, w, grid.mode, best.time, best.key);
}

DecoupledOptima decoupled_optima(const CostConstants& c, const Workload& w, const GridSpec& grid) {
  c.validate();
  validate_grid(w, grid);
  DecoupledOptima out;
  out.trainer_time = std::numeric_limits<double>::infinity();
  out.generator_time = std::numeric_limits<double>::infinity();
  for (double b_t : grid.trainer_batches) {
    const double t = trainer_footprint(c, b_t) / c.mem_per_gpu * w.trainer_eta(b_t);
    if (t < out.trainer_time) {
      out.trainer_time = t;
      out.trainer_batch = b_t;
    }
  }
  for (double b_g : grid.generator_batches) {
    const double t = generator_footprint(c, b_g, w.generator_quant) / c.mem_per_gpu * w.generator_eta(b_g);
    if (t < out.generator_time) {
      out.generator_time = t;
      out.generator_batch = b_g;
    }
  }
  return out;
}

SpeedupReport verify_speedup(const CostConstants& c, const Workload& w, const GridSpec& grid) {
  SpeedupReport rep;
  rep.baseline = optimize_baseline(c, w, grid);
  rep.async = optimize_async(c, w, grid);
  rep.decoupled = decoupled_optima(c, w, grid);
  rep.gain = rep.baseline.step_time / rep.async.step_time;

  const double scale = c.global_batch / c.total_gpus;
  const auto& bc = rep.baseline.config;
  const double trainer_term = trainer_footprint(c, bc.trainer_microbatch) / c.mem_per_gpu * rep.baseline.trainer_eta;
  const double generator_term =
      generator_footprint(c, bc.generator_concurrency, w.generator_quant) / c.mem_per_gpu * rep.baseline.generator_eta;
  rep.chain.a = scale * (trainer_term + generator_term);
  rep.chain.b = scale * (rep.decoupled.trainer_time + rep.decoupled.generator_time);
  const double theta = *rep.async.config.trainer_fraction;
  rep.chain.c = scale * std::max(rep.decoupled.trainer_time / theta, rep.decoupled.generator_time / (1 - theta));
  rep.chain.d = scale * std::max(rep.async.trainer_eta * rep.async.config.trainer_mp / theta,
                                 rep.async.generator_eta * rep.async.config.generator_mp / (1 - theta));

  auto close = [](double x, double y) { return std::abs(x - y) <= kIdentityRelTol * std::max(std::abs(x), std::abs(y)); };
  rep.chain_ordered = rep.baseline.step_time > rep.chain.a && rep.chain.a >= rep.chain.b &&
                      close(rep.chain.b, rep.chain.c) && close(rep.chain.c, rep.chain.d) &&
                      close(rep.chain.d, rep.async.step_time);
  rep.theorem_holds = rep.async.step_time < rep.baseline.step_time;
  return rep;
}

LemmaReport check_lemmas(const PlanResult& r) {
  LemmaReport rep;
  rep.framework = r.framework;
  for (const auto& s : r.slacks) rep.max_abs_slack = std::max(rep.max_abs_slack, std::abs(s.slack));
  if (r.framework == Framework::kAsync) {
    const double theta = *r.config.trainer_fraction;
    rep.theta_balance_residual = std::abs(r.trainer_eta * r.config.trainer_mp / theta -
                                          r.generator_eta * r.config.generator_mp / (1 - theta));
  }
  return rep;
}

std::uint64_t oracle_cell_count(const CostConstants& c, const GridSpec& grid, Framework framework) {
  const std::uint64_t batches = grid.trainer_batches.size() * grid.generator_batches.size();
  std::uint64_t mps = 0;
  std::uint64_t thetas = 0;
  if (grid.mode == PlanMode::kInteger) {
    mps = static_cast<std::uint64_t>(std::max(grid.max_mp, 0));
    thetas = c.total_gpus >= 2 ? static_cast<std::uint64_t>(c.total_gpus) - 1 : 0;
  } else {
    mps = grid.mp_step > 0 ? static_cast<std::uint64_t>(std::floor(grid.max_mp / grid.mp_step)) : 0;
    thetas = grid.theta_steps >= 2 ? static_cast<std::uint64_t>(grid.theta_steps - 1) : 0;
  }
  return framework == Framework::kBaseline ? batches * mps : batches * mps * mps * thetas;
}

PlanResult brute_force_oracle(const CostConstants& c, const Workload& w, const GridSpec& grid, Framework framework) {
  c.validate();
  validate_grid(w, grid);
  const std::uint64_t cells = oracle_cell_count(c, grid, framework);
  if (cells > kOracleCellLimit) {
    fail(ErrorCategory::kRefusal, "grid has " + std::to_string(cells) + " cells, oracle limit is " +
                                      std::to_string(kOracleCellLimit));
  }
  std::vector<double> mps;
  if (grid.mode == PlanMode::kInteger) {
    for (int m = 1; m <= grid.max_mp; ++m) mps.push_back(m);
  } else {
    const auto n = static_cast<int>(std::floor(grid.max_mp / grid.mp_step));
    for (int j = 1; j <= n; ++j) mps.push_back(j * grid.mp_step);
  }
  auto capped = [&](double m) { return grid.enforce_mp_cap && m > c.total_gpus; };

  if (framework == Framework::kBaseline) {
    Best<BaselineKey> best;
    for (double b_t : grid.trainer_batches) {
      for (double b_g : grid.generator_batches) {
        const double fp = trainer_footprint(c, b_t) + generator_footprint(c, b_g, w.generator_quant);
        for (double m : mps) {
          if (capped(m) || !fits_in_memory(fp / m, c.mem_per_gpu)) continue;
          best.offer(baseline_time_from_eta(c, w.trainer_eta(b_t), w.generator_eta(b_g), m), {m, b_t, b_g});
        }
      }
    }
    if (!best.found) no_feasible_plan(framework);
    return finish_baseline(c, w, grid.mode, best.time, best.key);
  }

  // theta candidates as (numerator, denominator) so the integer cells use the
  // same k / G0 expression as the optimizer.
  int denom = grid.mode == PlanMode::kInteger ? integral_gpus(c) : grid.theta_steps;
  Best<AsyncKey> best;
  for (double b_t : grid.trainer_batches) {
    const double fp_t = trainer_footprint(c, b_t);
    const double eta_t = w.trainer_eta(b_t);
    for (double b_g : grid.generator_batches) {
      const double fp_g = generator_footprint(c, b_g, w.generator_quant);
      const double eta_g = w.generator_eta(b_g);
      for (double m_t : mps) {
        if (capped(m_t) || !fits_in_memory(fp_t / m_t, c.mem_per_gpu)) continue;
        for (double m_g : mps) {
          if (capped(m_g) || !fits_in_memory(fp_g / m_g, c.mem_per_gpu)) continue;
          for (int k = 1; k < denom; ++k) {
            if (grid.mode == PlanMode::kInteger && (k < m_t || denom - k < m_g)) continue;
            const double theta = static_cast<double>(k) / denom;
            best.offer(async_time_from_eta(c, eta_t, eta_g, m_t, m_g, theta), {m_t, m_g, b_t, b_g, theta});
          }
        }
      }
    }
  }
  if (!best.found) no_feasible_plan(framework);
  return finish_async(c, w, grid.mode, best.time, best.key);
}

}  // namespace asyncrl
