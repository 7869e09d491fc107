#include "asyncrl/cost_model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "asyncrl/error.hpp"

namespace asyncrl {
namespace {

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void require_finite_positive(double v, const char* name) {
  if (!(std::isfinite(v) && v > 0)) fail(ErrorCategory::kConfig, std::string(name) + " must be > 0, got " + num(v));
}

void require_domain(bool ok, const std::string& what) {
  if (!ok) fail(ErrorCategory::kDomain, what);
}

}  // namespace

void CostConstants::validate() const {
  require_finite_positive(total_gpus, "total_gpus");
  require_finite_positive(global_batch, "global_batch");
  require_finite_positive(mem_per_gpu, "mem_per_gpu");
  require_finite_positive(model_size, "model_size");
  if (!(std::isfinite(activation_coeff) && activation_coeff >= 0)) {
    fail(ErrorCategory::kConfig, "activation_coeff must be >= 0");
  }
  if (!(std::isfinite(kv_coeff) && kv_coeff >= 0)) fail(ErrorCategory::kConfig, "kv_coeff must be >= 0");
  if (4.0 * model_size > mem_per_gpu * total_gpus) {
    fail(ErrorCategory::kConfig, "no feasible plan: 4*model_size exceeds total cluster memory");
  }
}

ProcessingCurve::ProcessingCurve(std::vector<CurvePoint> points) : points_(std::move(points)) {
  if (points_.empty()) fail(ErrorCategory::kConfig, "processing curve needs at least one point");
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const auto& p = points_[i];
    if (!(std::isfinite(p.batch) && p.batch > 0)) fail(ErrorCategory::kConfig, "curve batch sizes must be > 0");
    if (!(std::isfinite(p.time) && p.time > 0)) fail(ErrorCategory::kConfig, "curve times must be > 0");
    if (i == 0) continue;
    const auto& q = points_[i - 1];
    if (!(p.batch > q.batch)) fail(ErrorCategory::kConfig, "curve batch sizes must be strictly increasing");
    // eta(q) >= eta(p)  <=>  q.time * p.batch >= p.time * q.batch
    if (q.time * p.batch < p.time * q.batch) {
      fail(ErrorCategory::kConfig, "per-sample time increases between b=" + num(q.batch) + " and b=" + num(p.batch) +
                                       "; curve must have non-increasing tau(b)/b");
    }
  }
}

ProcessingCurve ProcessingCurve::from_pairs(std::span<const std::pair<double, double>> pairs) {
  std::vector<CurvePoint> pts;
  pts.reserve(pairs.size());
  for (auto [b, t] : pairs) pts.push_back({b, t});
  return ProcessingCurve(std::move(pts));
}

double ProcessingCurve::batch_time(double batch) const {
  if (!(batch >= min_batch() && batch <= max_batch())) {
    fail(ErrorCategory::kRange,
         "batch size " + num(batch) + " outside curve domain [" + num(min_batch()) + ", " + num(max_batch()) + "]");
  }
  auto it = std::lower_bound(points_.begin(), points_.end(), batch,
                             [](const CurvePoint& p, double b) { return p.batch < b; });
  if (it->batch == batch) return it->time;
  const auto& hi = *it;
  const auto& lo = *(it - 1);
  const double w = (batch - lo.batch) / (hi.batch - lo.batch);
  return lo.time + w * (hi.time - lo.time);
}

double ProcessingCurve::per_sample_time(double batch) const { return batch_time(batch) / batch; }

ProcessingCurve ProcessingCurve::scaled(double factor) const {
  require_finite_positive(factor, "curve scale");
  auto pts = points_;
  for (auto& p : pts) p.time *= factor;
  return ProcessingCurve(std::move(pts));
}

void QuantizationProfile::validate() const {
  if (!(weight_scale > 0 && weight_scale <= 1)) fail(ErrorCategory::kConfig, "weight_scale must be in (0, 1]");
  if (!(time_scale > 0 && time_scale <= 1)) fail(ErrorCategory::kConfig, "time_scale must be in (0, 1]");
}

void PlanConfig::validate(bool integral_mp) const {
  auto bad = [](const std::string& m) { fail(ErrorCategory::kConfig, "plan config: " + m); };
  if (!(trainer_microbatch >= 1) || !(generator_concurrency >= 1)) bad("batch sizes must be >= 1");
  if (integral_mp) {
    if (!(trainer_mp >= 1 && generator_mp >= 1)) bad("mp sizes must be >= 1");
    if (trainer_mp != std::floor(trainer_mp) || generator_mp != std::floor(generator_mp)) bad("mp sizes must be integers");
  } else if (!(trainer_mp > 0 && generator_mp > 0)) {
    bad("mp sizes must be > 0");
  }
  if (trainer_fraction && !(*trainer_fraction > 0 && *trainer_fraction < 1)) bad("trainer fraction must be in (0, 1)");
}

double trainer_footprint(const CostConstants& c, double b_t) {
  require_domain(b_t >= 0, "trainer microbatch must be >= 0");
  // weights + Adam (2x) + gradients, then activations
  return 4.0 * c.model_size + c.activation_coeff * b_t;
}

double generator_footprint(const CostConstants& c, double b_g, const QuantizationProfile& quant) {
  require_domain(b_g >= 0, "generator concurrency must be >= 0");
  return quant.weight_scale * c.model_size + c.kv_coeff * b_g;
}

double trainer_memory(const CostConstants& c, double b_t, double m_t) {
  require_domain(m_t > 0, "trainer mp must be > 0");
  return trainer_footprint(c, b_t) / m_t;
}

double generator_memory(const CostConstants& c, double b_g, double m_g, const QuantizationProfile& quant) {
  require_domain(m_g > 0, "generator mp must be > 0");
  return generator_footprint(c, b_g, quant) / m_g;
}

bool fits_in_memory(double per_gpu, double mem_per_gpu) noexcept {
  return per_gpu <= mem_per_gpu * (1.0 + kFeasibilityRelTol);
}

double step_time_baseline(const CostConstants& c, const Workload& w, double b_t, double b_g, double m) {
  require_domain(m > 0, "mp must be > 0");
  const double shared = (trainer_footprint(c, b_t) + generator_footprint(c, b_g, w.generator_quant)) / m;
  if (!fits_in_memory(shared, c.mem_per_gpu)) throw FeasibilityError("shared", shared, c.mem_per_gpu);
  return baseline_time_from_eta(c, w.trainer_eta(b_t), w.generator_eta(b_g), m);
}

double step_time_async(const CostConstants& c, const Workload& w, double b_t, double b_g, double m_t, double m_g,
                       double theta) {
  require_domain(theta > 0 && theta < 1, "trainer fraction must be in (0, 1)");
  const double tm = trainer_memory(c, b_t, m_t);
  if (!fits_in_memory(tm, c.mem_per_gpu)) throw FeasibilityError("trainer", tm, c.mem_per_gpu);
  const double gm = generator_memory(c, b_g, m_g, w.generator_quant);
  if (!fits_in_memory(gm, c.mem_per_gpu)) throw FeasibilityError("generator", gm, c.mem_per_gpu);
  return async_time_from_eta(c, w.trainer_eta(b_t), w.generator_eta(b_g), m_t, m_g, theta);
}

}  // namespace asyncrl
