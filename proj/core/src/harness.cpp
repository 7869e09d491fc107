#include "asyncrl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "asyncrl/binary_io.hpp"
#include "asyncrl/error.hpp"
#include "json.hpp"

namespace asyncrl {

namespace pt = boost::property_tree;

std::string_view to_string(ExperimentKind kind) noexcept {
  switch (kind) {
    case ExperimentKind::kPlanSweep: return "PLAN_SWEEP";
    case ExperimentKind::kTiming: return "TIMING";
    case ExperimentKind::kTrainCompare: return "TRAIN_COMPARE";
  }
  return "?";
}

ExperimentKind experiment_from_string(std::string_view name) {
  if (name == "PLAN_SWEEP" || name == "plan") return ExperimentKind::kPlanSweep;
  if (name == "TIMING" || name == "timing") return ExperimentKind::kTiming;
  if (name == "TRAIN_COMPARE" || name == "train") return ExperimentKind::kTrainCompare;
  fail(ErrorCategory::kConfig, "unknown experiment id '" + std::string(name) + "'");
}

std::string_view to_string(Arm arm) noexcept {
  switch (arm) {
    case Arm::kSync: return "sync";
    case Arm::kAsyncCorrected: return "async_aipo";
    case Arm::kAsyncUncorrected: return "async_uncorrected";
  }
  return "?";
}

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCategory::kIo, "cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_file_atomic(path.string(), std::as_bytes(std::span(text.data(), text.size())));
}

pt::ptree parse_ini(const std::string& text, const std::string& what) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    fail(ErrorCategory::kConfig, what + ": " + e.message() + " at line " + std::to_string(e.line()));
  }
  return tree;
}

pt::ptree::path_type key(const std::string& section, const std::string& name) {
  return pt::ptree::path_type(section.empty() ? name : section + "/" + name, '/');
}

template <class T>
T get(const pt::ptree& tree, const std::string& section, const std::string& name, T fallback) {
  const auto node = tree.get_optional<std::string>(key(section, name));
  if (!node) return fallback;
  std::string text = *node;
  text.erase(0, text.find_first_not_of(" \t"));
  text.erase(text.find_last_not_of(" \t") + 1);
  if constexpr (std::is_same_v<T, std::string>) {
    return text;
  } else if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    fail(ErrorCategory::kConfig, "[" + section + "] " + name + ": expected a boolean, got '" + text + "'");
  } else {
    std::istringstream in(text);
    T value{};
    if (text == "inf" || text == "+inf") {
      if constexpr (std::is_floating_point_v<T>) return std::numeric_limits<T>::infinity();
    }
    if (!(in >> value) || !(in >> std::ws).eof() || (std::is_unsigned_v<T> && text.front() == '-')) {
      fail(ErrorCategory::kConfig, "[" + section + "] " + name + ": cannot parse '" + text + "'");
    }
    return value;
  }
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

double mean(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

// ---- inputs --------------------------------------------------------------------

CostConstants parse_constants(const std::string& text) {
  const auto tree = parse_ini(text, "constants");
  static const std::set<std::string> known{"total_gpus", "global_batch", "mem_per_gpu",
                                           "model_size", "activation_coeff", "kv_coeff"};
  for (const auto& [k, v] : tree) {
    if (!known.count(k)) fail(ErrorCategory::kConfig, "unknown constant '" + k + "'");
  }
  for (const auto& k : known) {
    if (!tree.get_optional<std::string>(key("", k))) fail(ErrorCategory::kConfig, "missing constant '" + k + "'");
  }
  CostConstants c;
  c.total_gpus = get(tree, "", "total_gpus", 0.0);
  c.global_batch = get(tree, "", "global_batch", 0.0);
  c.mem_per_gpu = get(tree, "", "mem_per_gpu", 0.0);
  c.model_size = get(tree, "", "model_size", 0.0);
  c.activation_coeff = get(tree, "", "activation_coeff", 0.0);
  c.kv_coeff = get(tree, "", "kv_coeff", 0.0);
  c.validate();
  return c;
}

CostConstants load_constants(const std::filesystem::path& path) { return parse_constants(read_text(path)); }

ProcessingCurve parse_curve(const std::string& text) {
  std::vector<CurvePoint> points;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (line.find_first_of("0123456789") == std::string::npos) continue;  // column header
    const auto fields = split_list(line);
    if (fields.size() != 2) fail(ErrorCategory::kData, "curve line " + std::to_string(n) + ": expected 'batch,time'");
    try {
      std::size_t used_b = 0;
      std::size_t used_t = 0;
      const double b = std::stod(fields[0], &used_b);
      const double t = std::stod(fields[1], &used_t);
      if (used_b != fields[0].size() || used_t != fields[1].size()) throw std::invalid_argument("trailing");
      points.push_back({b, t});
    } catch (const std::logic_error&) {
      fail(ErrorCategory::kData, "curve line " + std::to_string(n) + ": not a number pair");
    }
  }
  return ProcessingCurve(std::move(points));
}

ProcessingCurve load_curve(const std::filesystem::path& path) { return parse_curve(read_text(path)); }

// ---- experiment config -------------------------------------------------------------

void ExperimentConfig::validate() const {
  switch (kind) {
    case ExperimentKind::kPlanSweep:
      if (scales.empty()) fail(ErrorCategory::kConfig, "plan sweep needs at least one scale");
      break;
    case ExperimentKind::kTiming:
      timing.durations.validate();
      if (timing.n_lag < 1) fail(ErrorCategory::kConfig, "timing n_lag must be >= 1");
      if (timing.window < 1 || timing.steps <= timing.window) {
        fail(ErrorCategory::kConfig, "timing needs steps > window >= 1");
      }
      break;
    case ExperimentKind::kTrainCompare: {
      const auto& t = train;
      PolicyShape{t.vocab, t.max_len, t.order}.validate();
      SortTask{t.vocab, t.prompt_len, seed}.validate();
      t.aipo.validate();
      t.durations.validate();
      if (t.prompts_per_step < 1 || t.group_size < 1) fail(ErrorCategory::kConfig, "train batch must be non-empty");
      if (t.n_lag < 1) fail(ErrorCategory::kConfig, "train n_lag must be >= 1");
      if (t.final_window < 1 || t.final_window > t.steps) {
        fail(ErrorCategory::kConfig, "final_window must be in [1, steps]");
      }
      ExecutorSpec{"generator", Role::kGenerator, t.generator_workers, t.generator_mp}.validate();
      ExecutorSpec{"trainer", Role::kTrainer, t.trainer_workers, t.trainer_mp}.validate();
      break;
    }
  }
}

ExperimentConfig parse_experiment_config(const std::string& text, const std::filesystem::path& base_dir) {
  const auto tree = parse_ini(text, "config");
  ExperimentConfig c;
  c.config_hash = hex64(fnv1a64(std::string_view(text)));
  c.kind = experiment_from_string(get<std::string>(tree, "experiment", "id", ""));
  c.seed = get<std::uint64_t>(tree, "experiment", "seed", 0);
  c.output_dir = resolve(base_dir, get<std::string>(tree, "experiment", "output", "out"));

  const auto mode = get<std::string>(tree, "plan", "mode", "integer");
  if (mode == "integer") {
    c.plan_mode = PlanMode::kInteger;
  } else if (mode == "continuous") {
    c.plan_mode = PlanMode::kContinuous;
  } else {
    fail(ErrorCategory::kConfig, "[plan] mode must be integer or continuous");
  }

  std::vector<std::string> names = split_list(get<std::string>(tree, "plan", "scales", ""));
  auto timing_scales = split_list(get<std::string>(tree, "timing", "scales", ""));
  for (const auto& s : timing_scales) {
    if (std::find(names.begin(), names.end(), s) == names.end()) names.push_back(s);
  }
  for (const auto& name : names) {
    const std::string sec = "scale." + name;
    if (!tree.get_child_optional(key("", sec))) fail(ErrorCategory::kConfig, "missing section [" + sec + "]");
    ScaleSpec s;
    s.name = name;
    s.constants = resolve(base_dir, get<std::string>(tree, sec, "constants", ""));
    s.trainer_curve = resolve(base_dir, get<std::string>(tree, sec, "trainer_curve", ""));
    s.generator_curve = resolve(base_dir, get<std::string>(tree, sec, "generator_curve", ""));
    s.quant.weight_scale = get(tree, sec, "generator_weight_scale", 1.0);
    s.quant.time_scale = get(tree, sec, "generator_time_scale", 1.0);
    c.scales.push_back(std::move(s));
  }

  auto read_durations = [&](const std::string& sec, StageDurations& d) {
    d.generator = get(tree, sec, "generator", d.generator);
    d.reward = get(tree, sec, "reward", d.reward);
    d.trainer = get(tree, sec, "trainer", d.trainer);
    d.weights_sync = get(tree, sec, "weights_sync", d.weights_sync);
    d.straggler_sigma = get(tree, sec, "straggler_sigma", d.straggler_sigma);
    d.generator_workers = get(tree, sec, "generator_workers", d.generator_workers);
    d.seed = c.seed;
  };

  auto& tm = c.timing;
  tm.steps = get(tree, "timing", "steps", tm.steps);
  tm.window = get(tree, "timing", "window", tm.window);
  tm.n_lag = get(tree, "timing", "n_lag", tm.n_lag);
  tm.scales = timing_scales;
  read_durations("timing", tm.durations);

  auto& tr = c.train;
  tr.vocab = get(tree, "train", "vocab", tr.vocab);
  tr.max_len = get(tree, "train", "max_len", tr.max_len);
  tr.order = get(tree, "train", "context_order", tr.order);
  tr.prompt_len = get(tree, "train", "prompt_len", tr.prompt_len);
  tr.prompts_per_step = get(tree, "train", "prompts_per_step", tr.prompts_per_step);
  tr.group_size = get(tree, "train", "group_size", tr.group_size);
  tr.steps = get(tree, "train", "steps", tr.steps);
  tr.final_window = get(tree, "train", "final_window", tr.final_window);
  tr.n_lag = get(tree, "train", "n_lag", tr.n_lag);
  tr.init_scale = get(tree, "train", "init_scale", tr.init_scale);
  tr.temperature = get(tree, "train", "temperature", tr.temperature);
  tr.aipo.rho = get(tree, "train", "rho", tr.aipo.rho);
  tr.aipo.learning_rate = get(tree, "train", "learning_rate", tr.aipo.learning_rate);
  tr.aipo.kl_coeff = get(tree, "train", "kl_coeff", tr.aipo.kl_coeff);
  tr.aipo.leave_one_out = get(tree, "train", "leave_one_out", tr.aipo.leave_one_out);
  const auto clip = get<std::string>(tree, "train", "clip", "one_sided");
  if (clip == "one_sided") {
    tr.aipo.clip_mode = ClipMode::kOneSided;
  } else if (clip == "ppo") {
    tr.aipo.clip_mode = ClipMode::kPpoDoubleSided;
  } else {
    fail(ErrorCategory::kConfig, "[train] clip must be one_sided or ppo");
  }
  tr.aipo.ppo_epsilon = get(tree, "train", "ppo_epsilon", tr.aipo.ppo_epsilon);
  const auto norm = get<std::string>(tree, "train", "normalization", "per_token");
  if (norm == "per_token") {
    tr.aipo.normalization = Normalization::kPerToken;
  } else if (norm == "per_sequence") {
    tr.aipo.normalization = Normalization::kPerSequence;
  } else {
    fail(ErrorCategory::kConfig, "[train] normalization must be per_token or per_sequence");
  }
  const auto opt = get<std::string>(tree, "train", "optimizer", "adam");
  if (opt == "adam") {
    tr.optimizer = OptimizerKind::kAdam;
  } else if (opt == "sgd") {
    tr.optimizer = OptimizerKind::kSgd;
  } else {
    fail(ErrorCategory::kConfig, "[train] optimizer must be adam or sgd");
  }
  tr.generator_workers = get(tree, "train", "generator_workers", tr.generator_workers);
  tr.generator_mp = get(tree, "train", "generator_mp", tr.generator_mp);
  tr.trainer_workers = get(tree, "train", "trainer_workers", tr.trainer_workers);
  tr.trainer_mp = get(tree, "train", "trainer_mp", tr.trainer_mp);
  read_durations("train", tr.durations);
  tr.aipo.group_size = tr.group_size;

  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return parse_experiment_config(read_text(path), path.parent_path());
}

std::string output_header(const ExperimentConfig& config) {
  return "# seed=" + std::to_string(config.seed) + "\n# config_hash=" + config.config_hash + "\n";
}

// ---- plan sweep -----------------------------------------------------------------

namespace {

nlohmann::ordered_json plan_json(const PlanResult& p) {
  nlohmann::ordered_json j;
  j["framework"] = to_string(p.framework);
  j["step_time"] = p.step_time;
  j["trainer_microbatch"] = p.config.trainer_microbatch;
  j["generator_concurrency"] = p.config.generator_concurrency;
  j["trainer_mp"] = p.config.trainer_mp;
  j["generator_mp"] = p.config.generator_mp;
  if (p.config.trainer_fraction) j["trainer_fraction"] = *p.config.trainer_fraction;
  j["trainer_mem"] = p.trainer_mem;
  j["generator_mem"] = p.generator_mem;
  j["warnings"] = p.warnings;
  return j;
}

Workload load_workload(const ScaleSpec& s) {
  return Workload{load_curve(s.trainer_curve), load_curve(s.generator_curve), s.quant};
}

}  // namespace

PlanSweepResult run_plan_sweep(const ExperimentConfig& config) {
  PlanSweepResult res;
  std::vector<std::pair<double, double>> size_gain;
  std::string summary = output_header(config) +
                        "scale,model_size,baseline_step_time,async_step_time,gain,theorem_holds,chain_ordered,status\n";
  for (const auto& s : config.scales) {
    ScaleOutcome out;
    out.name = s.name;
    CostConstants consts;
    try {
      consts = load_constants(s.constants);
      const Workload w = load_workload(s);
      out.report = verify_speedup(consts, w, GridSpec::powers_of_two(w, config.plan_mode));
    } catch (const Error& e) {
      out.rejection = e.what();
    }
    if (out.report) {
      const auto& r = *out.report;
      nlohmann::ordered_json j;
      j["seed"] = config.seed;
      j["config_hash"] = config.config_hash;
      j["scale"] = s.name;
      j["plan_mode"] = to_string(config.plan_mode);
      j["baseline_step_time"] = r.baseline.step_time;
      j["async_step_time"] = r.async.step_time;
      j["gain"] = r.gain;
      j["theorem_holds"] = r.theorem_holds;
      j["chain_ordered"] = r.chain_ordered;
      j["chain_a"] = r.chain.a;
      j["chain_b"] = r.chain.b;
      j["chain_c"] = r.chain.c;
      j["chain_d"] = r.chain.d;
      j["baseline"] = plan_json(r.baseline);
      j["async"] = plan_json(r.async);
      write_text(config.output_dir / ("plan_" + s.name + ".json"), j.dump(2) + "\n");
      summary += s.name + "," + num(consts.model_size) + "," + num(r.baseline.step_time) + "," +
                 num(r.async.step_time) + "," + num(r.gain) + "," + (r.theorem_holds ? "true" : "false") + "," +
                 (r.chain_ordered ? "true" : "false") + ",ok\n";
      res.all_theorems_hold = res.all_theorems_hold && r.theorem_holds;
      size_gain.emplace_back(consts.model_size, r.gain);
    } else {
      std::string reason = out.rejection;
      std::replace(reason.begin(), reason.end(), ',', ';');
      summary += s.name + ",,,,,,,rejected: " + reason + "\n";
    }
    res.scales.push_back(std::move(out));
  }
  if (size_gain.size() >= 2) {
    std::sort(size_gain.begin(), size_gain.end());
    bool increasing = true;
    for (std::size_t i = 1; i < size_gain.size(); ++i) {
      increasing = increasing && size_gain[i].first > size_gain[i - 1].first &&
                   size_gain[i].second > size_gain[i - 1].second;
    }
    res.gains_increasing = increasing;
  }
  write_text(config.output_dir / "plan_summary.csv", summary);
  if (!res.all_theorems_hold && config.plan_mode == PlanMode::kContinuous) {
    fail(ErrorCategory::kExperiment, "async layout is not faster on some instance");
  }
  if (res.gains_increasing == false) fail(ErrorCategory::kExperiment, "gain does not increase with model size");
  return res;
}

// ---- timing ---------------------------------------------------------------------

StageDurations durations_for_plan(const CostConstants& consts, const Workload& workload, const PlanConfig& plan,
                                  bool async) {
  const double eta_t = workload.trainer_eta(plan.trainer_microbatch);
  const double eta_g = workload.generator_eta(plan.generator_concurrency);
  StageDurations d;
  if (async) {
    const double theta = plan.trainer_fraction.value_or(0.5);
    d.trainer = async_time_from_eta(consts, eta_t, 0.0, plan.trainer_mp, plan.generator_mp, theta);
    d.generator = async_time_from_eta(consts, 0.0, eta_g, plan.trainer_mp, plan.generator_mp, theta);
  } else {
    d.trainer = baseline_time_from_eta(consts, eta_t, 0.0, plan.trainer_mp);
    d.generator = baseline_time_from_eta(consts, 0.0, eta_g, plan.trainer_mp);
  }
  return d;
}

std::vector<TimingRow> run_timing(const ExperimentConfig& config) {
  const auto& tm = config.timing;
  std::vector<TimingRow> rows;
  auto wanted = [&](Mode m) { return !config.only_mode || *config.only_mode == m; };

  for (Mode m : {Mode::kSync, Mode::kAsync}) {
    if (!wanted(m)) continue;
    const auto& d = tm.durations;
    TimingRow r{"constant", 0, 0, m, measure_step_time(m, d, tm.steps, tm.n_lag, tm.window).step_time, 0};
    r.closed_form = m == Mode::kSync ? d.weights_sync + d.generator + d.reward + d.trainer
                                     : std::max({d.generator + d.reward, d.trainer,
                                                 (d.generator + d.reward + d.trainer + d.weights_sync) / (tm.n_lag + 1)});
    if (d.straggler_sigma > 0) r.closed_form = std::nan("");
    rows.push_back(r);
  }

  std::string series = output_header(config) + "scale,curve,batch,batch_time,per_sample_time\n";
  for (const auto& s : config.scales) {
    if (std::find(tm.scales.begin(), tm.scales.end(), s.name) == tm.scales.end()) continue;
    const auto consts = load_constants(s.constants);
    const Workload w = load_workload(s);
    const auto grid = GridSpec::powers_of_two(w, PlanMode::kInteger);
    for (double b : grid.trainer_batches) {
      series += s.name + ",trainer," + num(b) + "," + num(w.trainer.batch_time(b)) + "," +
                num(w.trainer.per_sample_time(b)) + "\n";
    }
    for (double b : grid.generator_batches) {
      series += s.name + ",generator," + num(b) + "," + num(w.generator.batch_time(b)) + "," +
                num(w.generator.per_sample_time(b)) + "\n";
    }

    const auto base = optimize_baseline(consts, w, grid);
    const auto async = optimize_async(consts, w, grid);
    for (Mode m : {Mode::kSync, Mode::kAsync}) {
      if (!wanted(m)) continue;
      const bool is_async = m == Mode::kAsync;
      const PlanConfig layout = is_async ? async.config : base.config;
      // sweep one batch knob at a time around the planned layout
      std::vector<std::pair<double, double>> cells;
      for (double bt : grid.trainer_batches) cells.emplace_back(bt, layout.generator_concurrency);
      for (double bg : grid.generator_batches) cells.emplace_back(layout.trainer_microbatch, bg);
      std::sort(cells.begin(), cells.end());
      cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
      for (auto [bt, bg] : cells) {
        PlanConfig p = layout;
        p.trainer_microbatch = bt;
        p.generator_concurrency = bg;
        double closed = 0;
        try {
          closed = is_async ? step_time_async(consts, w, bt, bg, p.trainer_mp, p.generator_mp, *p.trainer_fraction)
                            : step_time_baseline(consts, w, bt, bg, p.trainer_mp);
        } catch (const FeasibilityError&) {
          continue;
        }
        const auto d = durations_for_plan(consts, w, p, is_async);
        rows.push_back({s.name, bt, bg, m, measure_step_time(m, d, tm.steps, tm.n_lag, tm.window).step_time, closed});
      }
    }
  }

  std::string csv = output_header(config) +
                    "source,trainer_batch,generator_batch,mode,measured_step_time,closed_form_step_time,relative_error\n";
  for (const auto& r : rows) {
    const bool have = !std::isnan(r.closed_form);
    csv += r.source + "," + num(r.trainer_batch) + "," + num(r.generator_batch) + "," +
           std::string(to_string(r.mode)) + "," + num(r.measured) + "," + (have ? num(r.closed_form) : "") + "," +
           (have ? num(std::abs(r.measured - r.closed_form) / r.closed_form) : "") + "\n";
  }
  write_text(config.output_dir / "timing.csv", csv);
  write_text(config.output_dir / "per_sample.csv", series);
  return rows;
}

// ---- training comparison ----------------------------------------------------------

ArmResult run_arm(const TrainSettings& t, Arm arm, std::uint64_t seed) {
  const PolicyShape shape{t.vocab, t.max_len, t.order};
  const SortTask task{t.vocab, t.prompt_len, seed};

  GeneratorConfig gc;
  gc.shape = shape;
  gc.task = task;
  gc.seed = seed;
  gc.init_scale = t.init_scale;
  gc.prompts_per_step = t.prompts_per_step;
  gc.group_size = t.group_size;
  gc.temperature = t.temperature;

  TrainerConfig tc;
  tc.shape = shape;
  tc.seed = seed;
  tc.init_scale = t.init_scale;
  tc.aipo = t.aipo;
  tc.aipo.group_size = t.group_size;
  tc.aipo.apply_is_correction = arm != Arm::kAsyncUncorrected;
  tc.optimizer.kind = t.optimizer;
  tc.task = task;

  std::vector<std::unique_ptr<Executor>> ex;
  ex.push_back(std::make_unique<GeneratorExecutor>(
      ExecutorSpec{"generator", Role::kGenerator, t.generator_workers, t.generator_mp}, gc));
  ex.push_back(std::make_unique<RewardExecutor>(ExecutorSpec{"reward", Role::kReward, 1, 1},
                                                RewardConfig{task, t.group_size, t.aipo.leave_one_out}));
  ex.push_back(std::make_unique<TrainerExecutor>(
      ExecutorSpec{"trainer", Role::kTrainer, t.trainer_workers, t.trainer_mp}, tc));

  ControllerConfig cc;
  cc.channels = {
      {"weights", "trainer", "generator", CommType::kDdmaWeightsUpdate, false},
      {"completions", "generator", "reward", CommType::kGather, false},
      {"completions_with_reward", "reward", "trainer", CommType::kScatter, false},
  };
  cc.max_steps = t.steps;
  cc.mode = arm == Arm::kSync ? Mode::kSync : Mode::kAsync;
  cc.n_lag = t.n_lag;
  cc.durations = t.durations;
  cc.durations.seed = seed;
  cc.scheduler = SchedulerKind::kDiscreteEvent;

  Controller controller(cc, std::move(ex));
  RunResult run = controller.run();
  controller.shutdown();

  ArmResult res;
  res.arm = arm;
  res.metrics = std::move(run.metrics);
  res.trace = std::move(run.trace);
  std::vector<double> window;
  for (std::size_t i = res.metrics.size() - std::min<std::size_t>(t.final_window, res.metrics.size());
       i < res.metrics.size(); ++i) {
    window.push_back(res.metrics[i].mean_reward);
  }
  res.final_window_reward = mean(window);
  double var = 0;
  for (double x : window) var += (x - res.final_window_reward) * (x - res.final_window_reward);
  res.reward_variance = window.empty() ? 0.0 : var / static_cast<double>(window.size());
  for (const auto& m : res.metrics) {
    res.max_is_weight = std::max(res.max_is_weight, m.max_is_weight);
    res.max_grad_norm = std::max(res.max_grad_norm, m.grad_norm);
    res.max_staleness = std::max(res.max_staleness, static_cast<double>(m.learner_version - m.consumed_version));
  }
  return res;
}

std::vector<ArmResult> run_train_compare(const ExperimentConfig& config) {
  std::vector<Arm> arms;
  if (!config.only_mode || *config.only_mode == Mode::kSync) arms.push_back(Arm::kSync);
  if (!config.only_mode || *config.only_mode == Mode::kAsync) {
    arms.push_back(Arm::kAsyncCorrected);
    arms.push_back(Arm::kAsyncUncorrected);
  }
  std::vector<ArmResult> results;
  std::string curve = output_header(config) + "step,arm,mean_reward,max_is_weight,clip_fraction,grad_norm\n";
  std::string summary = output_header(config) +
                        "arm,final_window_mean_reward,reward_variance,max_is_weight,rho,max_staleness,max_grad_norm\n";
  for (Arm arm : arms) {
    auto r = run_arm(config.train, arm, config.seed);
    for (const auto& m : r.metrics) {
      curve += std::to_string(m.step) + "," + std::string(to_string(arm)) + "," + num(m.mean_reward) + "," +
               num(m.max_is_weight) + "," + num(m.clip_fraction) + "," + num(m.grad_norm) + "\n";
    }
    summary += std::string(to_string(arm)) + "," + num(r.final_window_reward) + "," + num(r.reward_variance) + "," +
               num(r.max_is_weight) + "," + num(config.train.aipo.rho) + "," + num(r.max_staleness) + "," +
               num(r.max_grad_norm) + "\n";
    write_text(config.output_dir / ("trace_" + std::string(to_string(arm)) + ".jsonl"),
               output_header(config) + to_jsonl(r.trace));
    results.push_back(std::move(r));
  }
  write_text(config.output_dir / "train_curve.csv", curve);
  write_text(config.output_dir / "train_summary.csv", summary);
  return results;
}

}  // namespace asyncrl
