#include "asyncrl/rl_algo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "asyncrl/error.hpp"

namespace asyncrl {

// ---- task ----------------------------------------------------------------

void SortTask::validate() const {
  if (vocab < 3) fail(ErrorCategory::kConfig, "sort task needs vocab >= 3");
  if (prompt_len < 1 || prompt_len > vocab - 1) fail(ErrorCategory::kConfig, "sort task prompt_len out of range");
  if (dataset_size() == 0) fail(ErrorCategory::kConfig, "sort task dataset is empty");
}

std::uint64_t SortTask::dataset_size() const {
  // ordered tuples of distinct tokens from 1..V-1
  std::uint64_t n = 1;
  for (std::uint32_t i = 0; i < prompt_len; ++i) n *= (vocab - 1 - i);
  return n;
}

std::vector<Token> SortTask::prompt(std::uint64_t id) const {
  const std::uint64_t n = dataset_size();
  // Affine permutation of [0, n): stride coprime to n, seed-dependent offset.
  std::uint64_t stride = (mix64(seed) % n) | 1;
  while (std::gcd(stride, n) != 1) stride += 2;
  std::uint64_t idx = ((id % n) * stride + mix64(seed ^ 0xa5a5a5a5ull)) % n;

  std::vector<Token> pool;
  for (Token t = 1; t < vocab; ++t) pool.push_back(t);
  std::vector<Token> out;
  for (std::uint32_t i = 0; i < prompt_len; ++i) {
    const std::uint64_t k = idx % pool.size();
    idx /= pool.size();
    out.push_back(pool[k]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return out;
}

std::vector<Token> SortTask::target(std::span<const Token> prompt) const {
  std::vector<Token> t(prompt.begin(), prompt.end());
  std::sort(t.begin(), t.end());
  t.push_back(kEos);
  return t;
}

double prefix_score(std::span<const Token> target, std::span<const Token> generated) {
  if (target.empty()) return generated.empty() ? 1.0 : 0.0;
  std::size_t k = 0;
  while (k < target.size() && k < generated.size() && target[k] == generated[k]) ++k;
  return static_cast<double>(k) / static_cast<double>(target.size());
}

double score(const SortTask& task, std::span<const Token> prompt, std::span<const Token> generated) {
  return prefix_score(task.target(prompt), generated);
}

// ---- advantages ----------------------------------------------------------

GroupAdvantages group_advantages(std::span<const double> rewards, std::span<const double> kl_penalties,
                                 double kl_coeff, bool leave_one_out) {
  const std::size_t n = rewards.size();
  if (n < 2) fail(ErrorCategory::kConfig, "group needs at least 2 completions");
  if (!kl_penalties.empty() && kl_penalties.size() != n) fail(ErrorCategory::kConfig, "KL penalties size mismatch");
  if (!(kl_coeff >= 0)) fail(ErrorCategory::kConfig, "kl_coeff must be >= 0");

  GroupAdvantages out;
  out.adjusted_rewards.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.adjusted_rewards[i] = rewards[i] - (kl_penalties.empty() ? 0.0 : kl_coeff * kl_penalties[i]);
  }
  double sum = 0;
  for (double r : out.adjusted_rewards) sum += r;
  out.baseline = sum / static_cast<double>(n);
  out.advantages.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double b = leave_one_out ? (sum - out.adjusted_rewards[i]) / static_cast<double>(n - 1) : out.baseline;
    out.advantages[i] = out.adjusted_rewards[i] - b;
  }
  return out;
}

// ---- estimators ------------------------------------------------------------

void AipoConfig::validate() const {
  if (!(rho > 0)) fail(ErrorCategory::kConfig, "rho must be > 0");
  if (group_size < 2) fail(ErrorCategory::kConfig, "group_size must be >= 2");
  if (!(kl_coeff >= 0)) fail(ErrorCategory::kConfig, "kl_coeff must be >= 0");
  if (!(learning_rate > 0 && std::isfinite(learning_rate))) fail(ErrorCategory::kConfig, "learning_rate must be > 0");
  if (!(ppo_epsilon > 0 && ppo_epsilon < 1)) fail(ErrorCategory::kConfig, "ppo_epsilon must be in (0, 1)");
}

namespace {

enum class Estimator { kOneSided, kPpo, kUnweighted };

GradientResult accumulate(const PolicyParams& learner, std::span<const ScoredGroup> groups, const AipoConfig& config,
                          Estimator estimator) {
  config.validate();
  GradientResult res;
  res.gradient.assign(learner.table().size(), 0.0);
  auto& st = res.stats;
  for (const auto& g : groups) {
    if (g.advantages.size() != g.sequences.size()) {
      fail(ErrorCategory::kData, "group " + std::to_string(g.prompt_id) + " has no advantages for some sequences");
    }
    for (std::size_t i = 0; i < g.sequences.size(); ++i) {
      const auto& s = g.sequences[i];
      const double adv = g.advantages[i];
      if (s.behavior_logprobs.size() != s.tokens.size()) {
        fail(ErrorCategory::kData, "sequence " + std::to_string(s.prompt_id) + "/" + std::to_string(s.attempt) +
                                       " is missing behavior log-probabilities");
      }
      const auto lp = token_logprobs(learner, s.prompt, s.tokens);
      ++st.sequences;
      for (std::size_t t = 0; t < s.tokens.size(); ++t) {
        ++st.tokens;
        double coeff = adv;
        if (estimator != Estimator::kUnweighted) {
          const double mu = s.behavior_logprobs[t];
          const double ratio = std::exp(lp[t] - mu);
          if (!std::isfinite(mu) || !std::isfinite(ratio)) {
            fail(ErrorCategory::kData, "non-finite importance ratio in sequence " + std::to_string(s.prompt_id) +
                                           "/" + std::to_string(s.attempt) + " token " + std::to_string(t));
          }
          double w = config.apply_is_correction ? ratio : 1.0;
          st.max_raw_ratio = std::max(st.max_raw_ratio, w);
          if (estimator == Estimator::kOneSided) {
            if (w > config.rho) {
              w = config.rho;
              ++st.clipped_tokens;
            }
          } else if ((w > 1 + config.ppo_epsilon && adv > 0) || (w < 1 - config.ppo_epsilon && adv < 0)) {
            ++st.clipped_tokens;
            st.max_is_weight = std::max(st.max_is_weight, w);
            st.min_is_weight = std::min(st.min_is_weight, w);
            continue;
          }
          st.max_is_weight = std::max(st.max_is_weight, w);
          st.min_is_weight = std::min(st.min_is_weight, w);
          coeff = w * adv;
        } else {
          st.max_is_weight = std::max(st.max_is_weight, 1.0);
          st.min_is_weight = std::min(st.min_is_weight, 1.0);
        }
        if (coeff != 0) accumulate_token_grad(learner, s.prompt, s.tokens, t, coeff, res.gradient);
      }
    }
  }
  const std::uint64_t denom = config.normalization == Normalization::kPerToken ? st.tokens : st.sequences;
  if (denom > 0) {
    const double scale = 1.0 / static_cast<double>(denom);
    for (auto& v : res.gradient) v *= scale;
  }
  if (st.tokens == 0) st.min_is_weight = 0;
  st.grad_norm = l2_norm(res.gradient);
  return res;
}

}  // namespace

GradientResult aipo_gradient(const PolicyParams& learner, std::span<const ScoredGroup> groups,
                             const AipoConfig& config) {
  return accumulate(learner, groups, config, Estimator::kOneSided);
}

GradientResult ppo_clip_gradient(const PolicyParams& learner, std::span<const ScoredGroup> groups,
                                 const AipoConfig& config) {
  return accumulate(learner, groups, config, Estimator::kPpo);
}

GradientResult reinforce_gradient(const PolicyParams& learner, std::span<const ScoredGroup> groups,
                                  const AipoConfig& config) {
  return accumulate(learner, groups, config, Estimator::kUnweighted);
}

GradientResult policy_gradient(const PolicyParams& learner, std::span<const ScoredGroup> groups,
                               const AipoConfig& config) {
  return config.clip_mode == ClipMode::kOneSided ? aipo_gradient(learner, groups, config)
                                                 : ppo_clip_gradient(learner, groups, config);
}

// ---- enumeration oracle ----------------------------------------------------------

std::vector<Enumerated> enumerate_sequences(const PolicyParams& params, std::span<const Token> prompt,
                                            std::uint32_t max_len) {
  if (max_len < 1) fail(ErrorCategory::kDomain, "enumeration needs max_len >= 1");
  // count: EOS-terminated at each length plus the truncated ones
  const double v = params.vocab();
  double count = 0;
  for (std::uint32_t l = 1; l <= max_len; ++l) count += std::pow(v - 1, l - 1);
  count += std::pow(v - 1, max_len);
  if (count > static_cast<double>(kEnumerationLimit)) {
    fail(ErrorCategory::kRefusal, "enumeration of " + std::to_string(static_cast<std::uint64_t>(count)) +
                                      " sequences exceeds the limit of " + std::to_string(kEnumerationLimit));
  }
  std::vector<Enumerated> out;
  std::vector<Token> cur;
  std::vector<double> lp(params.vocab());
  std::function<void(double)> walk = [&](double acc) {
    log_softmax(params.row(params.context_row(prompt, cur, cur.size())), 1.0, lp);
    const std::vector<double> here = lp;
    for (Token tok = 0; tok < params.vocab(); ++tok) {
      cur.push_back(tok);
      const double next = acc + here[tok];
      if (tok == kEos || cur.size() == max_len) {
        out.push_back({cur, next});
      } else {
        walk(next);
      }
      cur.pop_back();
    }
  };
  walk(0.0);
  return out;
}

ExactGradient exact_expected_gradient(const PolicyParams& pi, const PolicyParams& mu, std::span<const Token> prompt,
                                      std::uint32_t max_len, double rho, const RewardFn& reward, RatioMode mode) {
  if (!(pi.shape() == mu.shape())) fail(ErrorCategory::kShard, "learner and behavior shapes differ");
  if (!(rho > 0)) fail(ErrorCategory::kConfig, "rho must be > 0");
  const auto seqs = enumerate_sequences(mu, prompt, max_len);
  ExactGradient out;
  for (const auto& e : seqs) out.baseline += std::exp(e.logprob) * reward(e.tokens);
  out.gradient.assign(pi.table().size(), 0.0);
  for (const auto& e : seqs) {
    const double p_mu = std::exp(e.logprob);
    const double adv = reward(e.tokens) - out.baseline;
    if (p_mu == 0 || adv == 0) continue;
    const auto lp_pi = token_logprobs(pi, prompt, e.tokens);
    const auto lp_mu = token_logprobs(mu, prompt, e.tokens);
    double seq_w = 0;
    if (mode == RatioMode::kSequence) {
      double d = 0;
      for (std::size_t t = 0; t < e.tokens.size(); ++t) d += lp_pi[t] - lp_mu[t];
      seq_w = std::min(std::exp(d), rho);
    }
    for (std::size_t t = 0; t < e.tokens.size(); ++t) {
      const double w = mode == RatioMode::kSequence ? seq_w : std::min(std::exp(lp_pi[t] - lp_mu[t]), rho);
      accumulate_token_grad(pi, prompt, e.tokens, t, p_mu * w * adv, out.gradient);
    }
  }
  return out;
}

std::vector<double> exact_on_policy_gradient(const PolicyParams& pi, std::span<const Token> prompt,
                                             std::uint32_t max_len, const RewardFn& reward, double baseline) {
  const auto seqs = enumerate_sequences(pi, prompt, max_len);
  std::vector<double> g(pi.table().size(), 0.0);
  for (const auto& e : seqs) {
    const double c = std::exp(e.logprob) * (reward(e.tokens) - baseline);
    if (c == 0) continue;
    for (std::size_t t = 0; t < e.tokens.size(); ++t) accumulate_token_grad(pi, prompt, e.tokens, t, c, g);
  }
  return g;
}

// ---- optimizer ----------------------------------------------------------------

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0 && std::isfinite(learning_rate))) fail(ErrorCategory::kConfig, "learning_rate must be > 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) fail(ErrorCategory::kConfig, "Adam betas must be in [0, 1)");
  if (!(epsilon > 0)) fail(ErrorCategory::kConfig, "Adam epsilon must be > 0");
}

void OptimizerState::serialize(ByteWriter& out) const {
  out.u64(steps);
  out.f64_array(first_moment);
  out.f64_array(second_moment);
}

OptimizerState OptimizerState::deserialize(ByteReader& in) {
  OptimizerState s;
  s.steps = in.u64();
  s.first_moment = in.f64_array();
  s.second_moment = in.f64_array();
  return s;
}

double l2_norm(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

PolicyParams apply_update(const PolicyParams& params, std::span<const double> gradient, const OptimizerConfig& config,
                          OptimizerState& state) {
  config.validate();
  const auto n = params.table().size();
  if (gradient.size() != n) fail(ErrorCategory::kData, "gradient shape does not match parameters; update refused");
  for (double g : gradient) {
    if (!std::isfinite(g)) fail(ErrorCategory::kData, "non-finite gradient; update refused");
  }
  std::vector<double> table(params.table().begin(), params.table().end());
  if (config.kind == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < n; ++i) table[i] += config.learning_rate * gradient[i];
    ++state.steps;
    return params.next(std::move(table));
  }
  if (state.first_moment.empty()) {
    state.first_moment.assign(n, 0.0);
    state.second_moment.assign(n, 0.0);
  }
  if (state.first_moment.size() != n || state.second_moment.size() != n) {
    fail(ErrorCategory::kData, "optimizer state shape does not match parameters");
  }
  const auto t = static_cast<double>(state.steps + 1);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < n; ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = config.beta1 * m + (1 - config.beta1) * gradient[i];
    v = config.beta2 * v + (1 - config.beta2) * gradient[i] * gradient[i];
    table[i] += config.learning_rate * (m / c1) / (std::sqrt(v / c2) + config.epsilon);
  }
  ++state.steps;
  return params.next(std::move(table));
}

}  // namespace asyncrl
