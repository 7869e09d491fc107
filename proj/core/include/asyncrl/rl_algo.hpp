#pragma once

// Importance-weighted policy gradient with one-sided ratio clipping, the PPO
// double-sided comparator, group-mean advantages, a rule-scored synthetic
// task, the optimizer, and an exact enumeration oracle for small instances.

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "asyncrl/binary_io.hpp"
#include "asyncrl/policy.hpp"

namespace asyncrl {

// ---- task ----------------------------------------------------------------

/// Sort the prompt. Prompts are ordered tuples of distinct non-EOS tokens; the
/// target is the ascending copy followed by EOS.
struct SortTask {
  std::uint32_t vocab = 16;
  std::uint32_t prompt_len = 2;
  std::uint64_t seed = 0;  // shuffles the prompt cycle

  void validate() const;
  std::uint64_t dataset_size() const;
  /// Prompt `id` of the cyclic, seed-shuffled dataset.
  std::vector<Token> prompt(std::uint64_t id) const;
  std::vector<Token> target(std::span<const Token> prompt) const;
};

/// Length of the longest prefix of `generated` that matches `target`, divided
/// by the target length. 1 only for an exact match.
double prefix_score(std::span<const Token> target, std::span<const Token> generated);

double score(const SortTask& task, std::span<const Token> prompt, std::span<const Token> generated);

// ---- advantages ----------------------------------------------------------

struct GroupAdvantages {
  double baseline = 0;
  std::vector<double> adjusted_rewards;  // r - lambda * KL
  std::vector<double> advantages;
};

/// r~_i = r_i - kl_coeff * kl_i; A_i = r~_i - mean(r~). With `leave_one_out`
/// the baseline of sample i excludes r~_i and `baseline` reports the full mean.
GroupAdvantages group_advantages(std::span<const double> rewards, std::span<const double> kl_penalties,
                                 double kl_coeff, bool leave_one_out = false);

struct ScoredGroup {
  std::uint64_t prompt_id = 0;
  std::vector<Sequence> sequences;
  std::vector<double> rewards;
  std::vector<double> kl_penalties;
  double baseline = 0;
  std::vector<double> advantages;
};

// ---- estimators ------------------------------------------------------------

enum class ClipMode { kOneSided, kPpoDoubleSided };
enum class Normalization { kPerToken, kPerSequence };

struct AipoConfig {
  double rho = 8.0;  // may be +inf
  std::uint32_t group_size = 4;
  double kl_coeff = 0.0;
  double learning_rate = 0.1;
  ClipMode clip_mode = ClipMode::kOneSided;
  double ppo_epsilon = 0.2;
  bool leave_one_out = false;
  Normalization normalization = Normalization::kPerToken;
  /// false forces every ratio to 1 (the uncorrected asynchronous arm).
  bool apply_is_correction = true;

  void validate() const;
};

struct GradientStats {
  std::uint64_t tokens = 0;
  std::uint64_t sequences = 0;
  std::uint64_t clipped_tokens = 0;  // one-sided: ratio > rho; PPO: contribution zeroed
  double max_is_weight = 0;          // after clipping
  double min_is_weight = std::numeric_limits<double>::infinity();
  double max_raw_ratio = 0;
  double grad_norm = 0;

  double clip_fraction() const { return tokens ? static_cast<double>(clipped_tokens) / tokens : 0.0; }
};

struct GradientResult {
  std::vector<double> gradient;
  GradientStats stats;
};

/// sum_t min(pi_t / mu_t, rho) A grad log pi_t, normalized per config. Ratios
/// use the current learner and the stored behavior log-probabilities.
GradientResult aipo_gradient(const PolicyParams& learner, std::span<const ScoredGroup> groups,
                             const AipoConfig& config);

/// PPO surrogate gradient: a token contributes w A grad log pi_t unless
/// (w > 1+eps and A > 0) or (w < 1-eps and A < 0), in which case it contributes 0.
GradientResult ppo_clip_gradient(const PolicyParams& learner, std::span<const ScoredGroup> groups,
                                 const AipoConfig& config);

/// Unweighted policy gradient sum_t A grad log pi_t, same accumulation order.
GradientResult reinforce_gradient(const PolicyParams& learner, std::span<const ScoredGroup> groups,
                                  const AipoConfig& config);

/// Dispatch on config.clip_mode.
GradientResult policy_gradient(const PolicyParams& learner, std::span<const ScoredGroup> groups,
                               const AipoConfig& config);

// ---- enumeration oracle ----------------------------------------------------------

inline constexpr std::uint64_t kEnumerationLimit = 100'000;

enum class RatioMode { kPerToken, kSequence };

struct Enumerated {
  std::vector<Token> tokens;
  double logprob = 0;
};

/// Every generation of length <= T (EOS-terminated or truncated at T) with its
/// log-probability under `params`. kRefusal when there are more than
/// kEnumerationLimit of them.
std::vector<Enumerated> enumerate_sequences(const PolicyParams& params, std::span<const Token> prompt,
                                            std::uint32_t max_len);

using RewardFn = std::function<double(std::span<const Token>)>;

struct ExactGradient {
  std::vector<double> gradient;
  double baseline = 0;  // expected reward under the behavior policy
};

/// sum_y mu(y) sum_t w_t(y) (r(y) - b) grad log pi_t(y), b = E_mu[r].
/// kPerToken: w_t = min(pi_t/mu_t, rho). kSequence: every token of y uses
/// min(pi(y)/mu(y), rho).
ExactGradient exact_expected_gradient(const PolicyParams& pi, const PolicyParams& mu, std::span<const Token> prompt,
                                      std::uint32_t max_len, double rho, const RewardFn& reward,
                                      RatioMode mode = RatioMode::kPerToken);

/// sum_y pi(y) (r(y) - b) grad log pi(y) with the baseline supplied.
std::vector<double> exact_on_policy_gradient(const PolicyParams& pi, std::span<const Token> prompt,
                                             std::uint32_t max_len, const RewardFn& reward, double baseline);

// ---- optimizer ----------------------------------------------------------------

enum class OptimizerKind { kAdam, kSgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

struct OptimizerState {
  std::uint64_t steps = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;

  void serialize(ByteWriter& out) const;
  static OptimizerState deserialize(ByteReader& in);
  bool operator==(const OptimizerState&) const = default;
};

/// One ascent step. Returns a new snapshot with version + 1; kData error and
/// no state change when the gradient is non-finite or mis-shaped.
PolicyParams apply_update(const PolicyParams& params, std::span<const double> gradient, const OptimizerConfig& config,
                          OptimizerState& state);

double l2_norm(std::span<const double> v);

}  // namespace asyncrl
