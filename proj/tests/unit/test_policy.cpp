#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "asyncrl/error.hpp"
#include "asyncrl/policy.hpp"
#include "asyncrl/rl_algo.hpp"
#include "oracles.hpp"

using namespace asyncrl;

namespace {

PolicyParams random_params(PolicyShape shape, std::uint64_t seed, double scale = 1.0) {
  return PolicyParams::seeded(shape, seed, scale);
}

}  // namespace

TEST(PolicyShape, Validation) {
  EXPECT_THROW((PolicyShape{1, 4, 1}.validate()), Error);
  EXPECT_THROW((PolicyShape{4, 0, 1}.validate()), Error);
  EXPECT_THROW((PolicyShape{4, 4, 0}.validate()), Error);
  EXPECT_THROW((PolicyShape{64, 8, 6}.validate()), Error);
  EXPECT_EQ((PolicyShape{4, 4, 2}.rows()), 25u);
}

TEST(PolicyParams, ContextRowMatchesReferenceEncoding) {
  const PolicyShape shape{5, 6, 3};
  const PolicyParams p(shape);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    std::vector<Token> prompt(rng() % 3), gen(rng() % 5);
    for (auto& t : prompt) t = static_cast<Token>(rng() % 5);
    for (auto& t : gen) t = static_cast<Token>(rng() % 5);
    for (std::size_t t = 0; t <= gen.size(); ++t) {
      std::vector<Token> history = prompt;
      history.insert(history.end(), gen.begin(), gen.begin() + static_cast<std::ptrdiff_t>(t));
      EXPECT_EQ(p.context_row(prompt, gen, t), oracle::context_index(5, 3, history));
    }
  }
}

TEST(PolicyParams, SnapshotRoundTrip) {
  const auto p = random_params({6, 5, 2}, 9).with_version(17);
  const auto q = PolicyParams::deserialize(p.serialize());
  EXPECT_EQ(q.version(), 17u);
  EXPECT_TRUE(q.shape() == p.shape());
  EXPECT_EQ(q.table_hash(), p.table_hash());
  auto bytes = p.serialize();
  bytes.pop_back();
  EXPECT_THROW(PolicyParams::deserialize(bytes), Error);
}

TEST(PolicyParams, RejectsNonFiniteLogits) {
  std::vector<double> t(PolicyShape{2, 2, 1}.rows() * 2, 0.0);
  t[1] = NAN;
  EXPECT_THROW(PolicyParams(PolicyShape{2, 2, 1}, t, 0), Error);
}

TEST(Generate, UniformLogitsRecordUniformLogprobs) {
  const PolicyParams p({4, 6, 2});
  const std::vector<Token> prompt{1, 2};
  const auto s = generate(p, prompt, RngStream{3, 0, 0}, 6);
  ASSERT_FALSE(s.tokens.empty());
  for (double lp : s.behavior_logprobs) EXPECT_DOUBLE_EQ(lp, std::log(0.25));
}

TEST(Generate, SaturatedLogitsAreDeterministic) {
  const PolicyShape shape{4, 5, 1};
  std::vector<double> table(shape.rows() * shape.cols(), -1e6);
  // context (last token) c -> next token (c + 1) mod 4; PAD -> 3
  for (std::uint64_t r = 0; r < shape.rows(); ++r) table[r * 4 + (r == 4 ? 3 : (r + 1) % 4)] = 1e6;
  const PolicyParams p(shape, table, 0);
  const std::vector<Token> prompt{};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = generate(p, prompt, RngStream{seed, 1, 2}, 5);
    EXPECT_EQ(s.tokens, (std::vector<Token>{3, 0}));
    EXPECT_TRUE(s.complete);
  }
}

TEST(Generate, ResumeEqualsSingleShot) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    const PolicyShape shape{6, 1 + static_cast<std::uint32_t>(rng() % 10), 1 + static_cast<std::uint32_t>(rng() % 3)};
    const auto p = random_params(shape, rng(), 0.5);
    std::vector<Token> prompt(rng() % 3);
    for (auto& t : prompt) t = 1 + static_cast<Token>(rng() % 5);
    const RngStream stream{rng(), rng() % 100, static_cast<std::uint32_t>(rng() % 4)};
    const auto whole = generate(p, prompt, stream, shape.max_len);
    auto part = generate(p, prompt, stream, 1 + rng() % 3);
    while (!part.complete) resume(p, part, stream, 1 + rng() % 3);
    EXPECT_EQ(part, whole);
  }
}

TEST(Generate, BehaviorVersionIsOldestSegment) {
  const PolicyShape shape{5, 8, 2};
  const PolicyParams v3 = PolicyParams(shape).with_version(3);
  const PolicyParams v5 = PolicyParams(shape).with_version(5);
  const std::vector<Token> prompt{1};
  auto s = generate(v5, prompt, RngStream{1, 1, 0}, 1);
  if (!s.complete) {
    resume(v3, s, RngStream{1, 1, 0}, 1);
    EXPECT_EQ(s.behavior_version, 3u);
  }
  auto s2 = generate(v3, prompt, RngStream{2, 1, 0}, 1);
  if (!s2.complete) {
    resume(v5, s2, RngStream{2, 1, 0}, 8);
    EXPECT_EQ(s2.behavior_version, 3u);
  }
}

TEST(Generate, RejectsBadInputs) {
  const PolicyParams p({4, 4, 1});
  const std::vector<Token> bad{7};
  EXPECT_THROW(generate(p, bad, RngStream{}, 2), Error);
  const std::vector<Token> ok{1};
  EXPECT_THROW(generate(p, ok, RngStream{}, 0), Error);
  EXPECT_THROW(generate(p, ok, RngStream{}, 2, 0.0), Error);
}

TEST(RngStream, PureFunctionOfKey) {
  const RngStream a{1, 2, 3};
  const RngStream b{1, 2, 3};
  const RngStream c{1, 2, 4};
  for (std::uint64_t i = 0; i < 100; ++i) {
    EXPECT_EQ(a.bits(i), b.bits(i));
    EXPECT_NE(a.bits(i), c.bits(i));
    EXPECT_GE(a.uniform(i), 0.0);
    EXPECT_LT(a.uniform(i), 1.0);
  }
}

TEST(RngStream, NormalMoments) {
  const RngStream s{42, 0, 0};
  double sum = 0, sq = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double z = s.normal(static_cast<std::uint64_t>(i));
    sum += z;
    sq += z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 4 / std::sqrt(n));
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(SequenceLogprob, UniformLogits) {
  const PolicyParams p({4, 3, 1});
  const std::vector<Token> prompt{1}, y{2, 3, 0};
  EXPECT_NEAR(sequence_logprob(p, prompt, y), 3 * std::log(0.25), 1e-12);
}

TEST(SequenceLogprob, LengthOneEqualsRowSoftmax) {
  const auto p = random_params({5, 3, 2}, 8);
  const std::vector<Token> prompt{1, 4}, y{3};
  EXPECT_NEAR(sequence_logprob(p, prompt, y), oracle::sequence_log_prob(p.table(), p.shape(), prompt, y), 1e-12);
}

TEST(SequenceLogprob, MatchesReferenceOnRandomSequences) {
  std::mt19937_64 rng(6);
  const auto p = random_params({6, 6, 3}, 10);
  for (int i = 0; i < 100; ++i) {
    std::vector<Token> prompt{1 + static_cast<Token>(rng() % 5), 1 + static_cast<Token>(rng() % 5)};
    std::vector<Token> y(1 + rng() % 6);
    for (auto& t : y) t = static_cast<Token>(rng() % 6);
    EXPECT_NEAR(sequence_logprob(p, prompt, y), oracle::sequence_log_prob(p.table(), p.shape(), prompt, y), 1e-10);
  }
}

TEST(SequenceLogprob, ProbabilitiesSumToOneWithForcedStop) {
  const auto p = random_params({3, 2, 2}, 11);
  const std::vector<Token> prompt{1};
  double total = 0;
  for (Token a = 0; a < 3; ++a) {
    if (a == kEos) {
      total += std::exp(sequence_logprob(p, prompt, std::vector<Token>{a}));
      continue;
    }
    for (Token b = 0; b < 3; ++b) total += std::exp(sequence_logprob(p, prompt, std::vector<Token>{a, b}));
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_THROW(sequence_logprob(p, prompt, std::vector<Token>{}), Error);
}

TEST(GradLogProb, UniformLogitsSoftmaxIdentity) {
  const PolicyParams p({4, 1, 1});
  const std::vector<Token> prompt{2}, y{1};
  const auto g = grad_log_prob(p, prompt, y);
  const auto r = p.context_row(prompt, y, 0);
  for (Token v = 0; v < 4; ++v) EXPECT_DOUBLE_EQ(g[r * 4 + v], v == 1 ? 0.75 : -0.25);
}

TEST(GradLogProb, DirectionalFiniteDifference) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0, 1);
  const PolicyShape shape{4, 4, 2};
  for (int i = 0; i < 20; ++i) {
    const auto p = random_params(shape, rng());
    const std::vector<Token> prompt{1, 3};
    const auto s = generate(p, prompt, RngStream{rng(), 0, 0}, 4);
    const auto g = grad_log_prob(p, prompt, s.tokens);
    std::vector<double> dir(g.size());
    for (auto& d : dir) d = n(rng);
    auto f = [&](double eps) {
      std::vector<double> t(p.table().begin(), p.table().end());
      for (std::size_t k = 0; k < t.size(); ++k) t[k] += eps * dir[k];
      return oracle::sequence_log_prob(t, shape, prompt, s.tokens);
    };
    const double h = 1e-5;
    const double fd = (f(h) - f(-h)) / (2 * h);
    double dot = 0;
    for (std::size_t k = 0; k < g.size(); ++k) dot += g[k] * dir[k];
    EXPECT_NEAR(fd, dot, 1e-6 * std::max(1.0, std::abs(dot)));
  }
}

TEST(GradLogProb, EmptyGenerationGivesZero) {
  const auto p = random_params({4, 4, 1}, 1);
  const std::vector<Token> prompt{1};
  for (double v : grad_log_prob(p, prompt, std::vector<Token>{})) EXPECT_EQ(v, 0.0);
}

TEST(Kl, ZeroAgainstItself) {
  const auto p = random_params({5, 4, 2}, 2);
  const std::vector<Token> prompt{1, 2}, y{3, 4, 0};
  EXPECT_EQ(sequence_kl(p, p, prompt, y), 0.0);
}

TEST(Kl, NonNegative) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const auto a = random_params({5, 4, 2}, rng(), 2.0);
    const auto b = random_params({5, 4, 2}, rng(), 2.0);
    const std::vector<Token> prompt{1, 2}, y{3, 4, 0};
    for (std::size_t t = 0; t < y.size(); ++t) EXPECT_GE(kl_to_reference(a, b, prompt, y, t), 0.0);
  }
}

TEST(Kl, MatchesMonteCarloEstimate) {
  const auto pi = random_params({4, 3, 1}, 31, 1.0);
  const auto base = random_params({4, 3, 1}, 32, 1.0);
  const std::vector<Token> prompt{2}, y{1};
  const double exact = kl_to_reference(pi, base, prompt, y, 1);
  const int n = 100000;
  double sum = 0, sq = 0;
  std::vector<double> lp_pi(4), lp_b(4);
  log_softmax(pi.row(pi.context_row(prompt, y, 1)), 1.0, lp_pi);
  log_softmax(base.row(base.context_row(prompt, y, 1)), 1.0, lp_b);
  const RngStream s{77, 0, 0};
  for (int i = 0; i < n; ++i) {
    const double u = s.uniform(static_cast<std::uint64_t>(i));
    double cdf = 0;
    Token pick = 3;
    for (Token v = 0; v < 4; ++v) {
      cdf += std::exp(lp_pi[v]);
      if (u < cdf) {
        pick = v;
        break;
      }
    }
    const double x = lp_pi[pick] - lp_b[pick];
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double sd = std::sqrt((sq / n - mean * mean) / n);
  EXPECT_LE(std::abs(mean - exact), 3 * sd);
}
