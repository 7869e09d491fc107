#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "asyncrl/harness.hpp"
#include "expect_error.hpp"

using namespace asyncrl;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = ASYNCRL_SOURCE_DIR;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("asyncrl_harness_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string scale_section(const std::string& name, const std::string& file_stem) {
  const auto base = (kSource / "data" / "scales" / file_stem).string();
  return "[scale." + name + "]\nconstants = " + base + ".constants\ntrainer_curve = " + base +
         "_trainer.csv\ngenerator_curve = " + base + "_generator.csv\n";
}

}  // namespace

TEST(Inputs, ConstantsParse) {
  const auto c = parse_constants(
      "# c\ntotal_gpus = 64\nglobal_batch = 512\nmem_per_gpu = 80\nmodel_size = 8\nactivation_coeff = 0.4\n"
      "kv_coeff = 0.16\n");
  EXPECT_EQ(c.total_gpus, 64);
  EXPECT_EQ(c.model_size, 8);
  EXPECT_EQ(c.kv_coeff, 0.16);
  EXPECT_ERROR(parse_constants("total_gpus = 64\n"), ErrorCategory::kConfig);
  EXPECT_ERROR(parse_constants("total_gpus = 64\nglobal_batch = 512\nmem_per_gpu = 80\nmodel_size = 8\n"
                               "activation_coeff = 0.4\nkv_coeff = 0.16\nbogus = 1\n"),
               ErrorCategory::kConfig);
}

TEST(Inputs, CurveParse) {
  const auto c = parse_curve("batch,time\n# note\n1,2\n2,3\n4,5\n");
  EXPECT_EQ(c.points().size(), 3u);
  EXPECT_ERROR(parse_curve("1,2\nx,3\n"), ErrorCategory::kData);
  EXPECT_ERROR(parse_curve("1,2\n2,5\n"), ErrorCategory::kConfig);
}

TEST(Config, ParsesTrainSection) {
  const auto c = parse_experiment_config(
      "[experiment]\nid = TRAIN_COMPARE\nseed = 9\noutput = res\n"
      "[train]\nvocab = 8\nmax_len = 4\nsteps = 30\nfinal_window = 5\nrho = 2.5\nclip = ppo\n"
      "normalization = per_sequence\noptimizer = sgd\nleave_one_out = true\n",
      "/base");
  EXPECT_EQ(c.kind, ExperimentKind::kTrainCompare);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.output_dir, fs::path("/base/res"));
  EXPECT_EQ(c.train.vocab, 8u);
  EXPECT_EQ(c.train.aipo.rho, 2.5);
  EXPECT_EQ(c.train.aipo.clip_mode, ClipMode::kPpoDoubleSided);
  EXPECT_EQ(c.train.aipo.normalization, Normalization::kPerSequence);
  EXPECT_EQ(c.train.optimizer, OptimizerKind::kSgd);
  EXPECT_TRUE(c.train.aipo.leave_one_out);
  EXPECT_EQ(c.config_hash.size(), 16u);
  EXPECT_EQ(output_header(c), "# seed=9\n# config_hash=" + c.config_hash + "\n");
}

TEST(Config, Rejections) {
  EXPECT_ERROR(parse_experiment_config("[experiment]\nid = NOPE\n", "."), ErrorCategory::kConfig);
  EXPECT_ERROR(parse_experiment_config("[experiment]\nid = PLAN_SWEEP\n", "."), ErrorCategory::kConfig);
  EXPECT_ERROR(parse_experiment_config("[experiment]\nid = PLAN_SWEEP\n[plan]\nscales = a\n", "."),
               ErrorCategory::kConfig);
  EXPECT_ERROR(parse_experiment_config("[experiment]\nid = TRAIN_COMPARE\n[train]\nclip = both\n", "."),
               ErrorCategory::kConfig);
  EXPECT_ERROR(parse_experiment_config("[experiment]\nid = TIMING\n[timing]\nsteps = 4\nwindow = 4\n", "."),
               ErrorCategory::kConfig);
}

TEST(Config, BundledConfigsLoad) {
  for (const char* name : {"plan_sweep.conf", "timing.conf", "train_compare.conf"}) {
    EXPECT_NO_THROW(load_experiment_config(kSource / "configs" / name)) << name;
  }
}

TEST(PlanSweep, RejectedScaleDoesNotStopTheSweep) {
  const auto dir = fresh_dir("reject");
  const auto text = "[experiment]\nid = PLAN_SWEEP\nseed = 3\noutput = " + dir.string() +
                    "\n[plan]\nmode = continuous\nscales = small, broken, large\n" + scale_section("small", "small") +
                    scale_section("large", "large") + "[scale.broken]\nconstants = " + (dir / "missing").string() +
                    "\ntrainer_curve = x\ngenerator_curve = y\n";
  const auto res = run_plan_sweep(parse_experiment_config(text, dir));
  ASSERT_EQ(res.scales.size(), 3u);
  EXPECT_TRUE(res.scales[0].report.has_value());
  EXPECT_FALSE(res.scales[1].report.has_value());
  EXPECT_FALSE(res.scales[1].rejection.empty());
  EXPECT_TRUE(res.scales[2].report.has_value());
  EXPECT_EQ(res.gains_increasing, true);
  const auto summary = slurp(dir / "plan_summary.csv");
  EXPECT_NE(summary.find("broken,,,,,,,rejected"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "plan_small.json"));
  EXPECT_FALSE(fs::exists(dir / "plan_broken.json"));
}

TEST(PlanSweep, SingleScaleMakesNoScalingClaim) {
  const auto dir = fresh_dir("single");
  const auto text = "[experiment]\nid = PLAN_SWEEP\noutput = " + dir.string() +
                    "\n[plan]\nmode = continuous\nscales = medium\n" + scale_section("medium", "medium");
  const auto res = run_plan_sweep(parse_experiment_config(text, dir));
  EXPECT_FALSE(res.gains_increasing.has_value());
  EXPECT_TRUE(res.all_theorems_hold);
}

TEST(PlanSweep, ReversedGainsAreAnExperimentError) {
  const auto dir = fresh_dir("reversed");
  // large model with the small model's curves
  fs::copy_file(kSource / "data/scales/small.constants", dir / "big.constants");
  std::string consts = slurp(dir / "big.constants");
  consts.replace(consts.find("model_size = 1"), 14, "model_size = 99");
  std::ofstream(dir / "big.constants") << consts;
  const auto text = "[experiment]\nid = PLAN_SWEEP\noutput = " + dir.string() +
                    "\n[plan]\nmode = continuous\nscales = medium, big\n" + scale_section("medium", "medium") +
                    "[scale.big]\nconstants = big.constants\ntrainer_curve = " +
                    (kSource / "data/scales/small_trainer.csv").string() +
                    "\ngenerator_curve = " + (kSource / "data/scales/small_generator.csv").string() + "\n";
  EXPECT_ERROR(run_plan_sweep(parse_experiment_config(text, dir)), ErrorCategory::kExperiment);
}

TEST(PlanSweep, RerunsAreByteIdentical) {
  const auto dir = fresh_dir("rerun");
  const auto text = "[experiment]\nid = PLAN_SWEEP\nseed = 5\noutput = " + dir.string() +
                    "\n[plan]\nmode = integer\nscales = small\n" + scale_section("small", "small");
  const auto cfg = parse_experiment_config(text, dir);
  run_plan_sweep(cfg);
  const auto first = slurp(dir / "plan_small.json");
  run_plan_sweep(cfg);
  EXPECT_EQ(slurp(dir / "plan_small.json"), first);
  EXPECT_NE(first.find("\"seed\": 5"), std::string::npos);
  EXPECT_EQ(slurp(dir / "plan_summary.csv").rfind("# seed=5\n# config_hash=", 0), 0u);
}

TEST(Timing, WritesRowsWithMatchingClosedForm) {
  const auto dir = fresh_dir("timing");
  const auto text = "[experiment]\nid = TIMING\nseed = 2\noutput = " + dir.string() +
                    "\n[timing]\nsteps = 48\nwindow = 12\nn_lag = 1\ngenerator = 1\ntrainer = 1\nscales = small\n" +
                    scale_section("small", "small");
  const auto rows = run_timing(parse_experiment_config(text, dir));
  ASSERT_FALSE(rows.empty());
  for (const auto& r : rows) EXPECT_NEAR(r.measured, r.closed_form, 1e-9 * r.closed_form) << r.source;
  EXPECT_TRUE(fs::exists(dir / "timing.csv"));
  EXPECT_TRUE(fs::exists(dir / "per_sample.csv"));
}

TEST(TrainCompare, SmallRunIsReproducible) {
  const auto dir = fresh_dir("train");
  const auto text = "[experiment]\nid = TRAIN_COMPARE\nseed = 4\noutput = " + dir.string() +
                    "\n[train]\nvocab = 6\nmax_len = 4\ncontext_order = 2\nprompts_per_step = 8\nsteps = 12\n"
                    "final_window = 4\nrho = 2\n";
  const auto cfg = parse_experiment_config(text, dir);
  const auto a = run_train_compare(cfg);
  const auto curve = slurp(dir / "train_curve.csv");
  const auto trace = slurp(dir / "trace_async_aipo.jsonl");
  run_train_compare(cfg);
  EXPECT_EQ(slurp(dir / "train_curve.csv"), curve);
  EXPECT_EQ(slurp(dir / "trace_async_aipo.jsonl"), trace);
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(a[0].max_staleness, 0.0);
  EXPECT_LE(a[1].max_staleness, 1.0);
  EXPECT_LE(a[1].max_is_weight, 2.0);
  EXPECT_EQ(a[2].max_is_weight, 1.0);
  EXPECT_EQ(parse_jsonl(trace), a[1].trace);
}
