#pragma once

// Cluster constants, the per-GPU memory model of the trainer and generator,
// tabulated processing-time curves and the two step-time formulas
// (colocated synchronous baseline and decoupled asynchronous layout).
//
// Memory is in abstract units (M0 is dimensionless); time units are whatever
// the processing curves are expressed in.

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace asyncrl {

/// Relative slack allowed when checking `footprint <= mem_per_gpu`, so that a
/// model-parallel degree computed as the exact ratio footprint/M0 is accepted.
inline constexpr double kFeasibilityRelTol = 1e-12;

struct CostConstants {
  double total_gpus = 0;        // G0
  double global_batch = 0;      // B0, samples per RL step
  double mem_per_gpu = 0;       // M0
  double model_size = 0;        // W0, one replica
  double activation_coeff = 0;  // A_t, trainer activations per sample
  double kv_coeff = 0;          // K_g, generator KV cache per sample

  /// G0, B0, M0, W0 must be positive, A_t and K_g non-negative, and a plan
  /// must exist (4 W0 <= M0 G0).
  void validate() const;
};

struct CurvePoint {
  double batch = 0;
  double time = 0;
};

/// Measured batch processing times tau(b), interpolated piecewise-linearly.
/// Construction rejects curves whose per-sample time tau(b)/b increases
/// between tabulated points. Under linear interpolation that check is
/// sufficient for the per-sample time to be non-increasing on the whole domain.
class ProcessingCurve {
 public:
  explicit ProcessingCurve(std::vector<CurvePoint> points);

  /// Convenience for {b, tau} literal lists.
  static ProcessingCurve from_pairs(std::span<const std::pair<double, double>> pairs);

  double min_batch() const noexcept { return points_.front().batch; }
  double max_batch() const noexcept { return points_.back().batch; }
  std::span<const CurvePoint> points() const noexcept { return points_; }

  /// tau(b). kRange error outside [min_batch, max_batch]; there is no extrapolation.
  double batch_time(double batch) const;
  /// eta(b) = tau(b) / b.
  double per_sample_time(double batch) const;

  /// Same batch sizes with every time multiplied by `factor` (> 0).
  ProcessingCurve scaled(double factor) const;

 private:
  std::vector<CurvePoint> points_;
};

/// Generator-side quantization modeled as multipliers on the weight footprint
/// and on generation time. The identity profile is (1, 1).
struct QuantizationProfile {
  double weight_scale = 1.0;
  double time_scale = 1.0;

  void validate() const;
  bool is_identity() const noexcept { return weight_scale == 1.0 && time_scale == 1.0; }
};

/// Everything that describes how fast and how large the two RL stages are.
struct Workload {
  ProcessingCurve trainer;
  ProcessingCurve generator;
  QuantizationProfile generator_quant{};

  double trainer_eta(double b_t) const { return trainer.per_sample_time(b_t); }
  /// Generation per-sample time including the quantization time multiplier.
  double generator_eta(double b_g) const { return generator_quant.time_scale * generator.per_sample_time(b_g); }
};

/// A candidate layout. For the synchronous baseline trainer_mp == generator_mp
/// and trainer_fraction is empty.
struct PlanConfig {
  double trainer_microbatch = 1;     // b_t
  double generator_concurrency = 1;  // b_g
  double trainer_mp = 1;             // m_t
  double generator_mp = 1;           // m_g
  std::optional<double> trainer_fraction;  // theta

  /// b >= 1, m > 0 (m >= 1 when `integral_mp`), 0 < theta < 1 when present.
  void validate(bool integral_mp) const;
};

/// (4 W0 + A_t b_t) / m_t: weights, Adam moments, gradients and activations.
double trainer_memory(const CostConstants& consts, double b_t, double m_t);

/// (s W0 + K_g b_g) / m_g with s the quantization weight scale.
double generator_memory(const CostConstants& consts, double b_g, double m_g,
                        const QuantizationProfile& quant = {});

/// Unsharded footprints, i.e. the numerators of the two memory formulas.
double trainer_footprint(const CostConstants& consts, double b_t);
double generator_footprint(const CostConstants& consts, double b_g, const QuantizationProfile& quant = {});

/// True when `per_gpu` fits in M0 up to kFeasibilityRelTol.
bool fits_in_memory(double per_gpu, double mem_per_gpu) noexcept;

/// (B0/G0) m (eta_t + eta_g) from per-sample times. No validation; the
/// planner and the brute-force oracle both evaluate cells through this.
inline double baseline_time_from_eta(const CostConstants& c, double eta_t, double eta_g, double m) noexcept {
  return c.global_batch / c.total_gpus * m * (eta_t + eta_g);
}

/// (B0/G0) max(eta_t m_t / theta, eta_g m_g / (1 - theta)).
inline double async_time_from_eta(const CostConstants& c, double eta_t, double eta_g, double m_t, double m_g,
                                  double theta) noexcept {
  const double trainer_arm = eta_t * m_t / theta;
  const double generator_arm = eta_g * m_g / (1.0 - theta);
  return c.global_batch / c.total_gpus * (trainer_arm > generator_arm ? trainer_arm : generator_arm);
}

/// Synchronous colocated step time. Throws FeasibilityError (constraint
/// "shared") when trainer and generator do not fit together on m GPUs.
double step_time_baseline(const CostConstants& consts, const Workload& workload, double b_t, double b_g, double m);

/// Asynchronous step time. Throws FeasibilityError naming "trainer" or
/// "generator" when either side does not fit.
double step_time_async(const CostConstants& consts, const Workload& workload, double b_t, double b_g, double m_t,
                       double m_g, double theta);

}  // namespace asyncrl
