#pragma once

// Tiny autoregressive categorical policy. The next-token distribution is a
// softmax over one row of a dense logit table; the row is selected by the last
// `order` tokens of prompt+generation (left-padded with a PAD symbol). Token 0
// is end-of-sequence.
//
// Snapshot layout (little-endian):
//   0   4  magic "ARLP"
//   4   4  u32 format version (1)
//   8   8  u64 policy version
//   16  4  u32 vocab size V
//   20  4  u32 max generation length T_max
//   24  4  u32 context order k
//   28  8  u64 rows = (V+1)^k
//   36  8  u64 cols = V
//   44  .  rows*cols f64 logits, row-major

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "asyncrl/binary_io.hpp"

namespace asyncrl {

using Token = std::uint32_t;
inline constexpr Token kEos = 0;
inline constexpr std::uint32_t kSnapshotFormat = 1;

struct PolicyShape {
  std::uint32_t vocab = 16;
  std::uint32_t max_len = 8;
  std::uint32_t order = 2;

  void validate() const;
  std::uint64_t rows() const;
  std::uint64_t cols() const { return vocab; }
  bool operator==(const PolicyShape&) const = default;
};

class PolicyParams {
 public:
  PolicyParams() = default;
  /// All-zero logits (uniform rows).
  PolicyParams(PolicyShape shape, std::uint64_t version = 0);
  PolicyParams(PolicyShape shape, std::vector<double> table, std::uint64_t version);

  /// Logits drawn i.i.d. N(0, scale^2) from a counter stream keyed by `seed`.
  static PolicyParams seeded(PolicyShape shape, std::uint64_t seed, double scale);

  const PolicyShape& shape() const noexcept { return shape_; }
  std::uint32_t vocab() const noexcept { return shape_.vocab; }
  std::uint32_t max_len() const noexcept { return shape_.max_len; }
  std::uint64_t version() const noexcept { return version_; }
  std::span<const double> table() const noexcept { return table_; }
  std::span<const double> row(std::uint64_t r) const;

  /// Same shape, new table, version + 1.
  PolicyParams next(std::vector<double> table) const;
  PolicyParams with_version(std::uint64_t version) const;

  /// Row of the context formed by `prompt` followed by the first `t` tokens of `generated`.
  std::uint64_t context_row(std::span<const Token> prompt, std::span<const Token> generated, std::size_t t) const;

  Bytes serialize() const;
  static PolicyParams deserialize(std::span<const std::byte> bytes);
  /// Raw table bytes in snapshot order (the part that is sharded).
  Bytes table_bytes() const;
  std::uint64_t table_hash() const;

 private:
  PolicyShape shape_{};
  std::uint64_t version_ = 0;
  std::vector<double> table_;
};

using PolicySnapshot = std::shared_ptr<const PolicyParams>;

inline PolicySnapshot publish(PolicyParams params) {
  return std::make_shared<const PolicyParams>(std::move(params));
}

/// Counter-based random stream. Every draw is a pure function of
/// (seed, prompt id, attempt, position), so a generation that is paused and
/// resumed sees the same draws as one that runs straight through.
struct RngStream {
  std::uint64_t seed = 0;
  std::uint64_t prompt_id = 0;
  std::uint32_t attempt = 0;

  std::uint64_t bits(std::uint64_t position) const noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform(std::uint64_t position) const noexcept;
  /// Standard normal (Box-Muller on two sub-draws of `position`).
  double normal(std::uint64_t position) const noexcept;
};

std::uint64_t mix64(std::uint64_t x) noexcept;

struct Sequence {
  std::uint64_t prompt_id = 0;
  std::uint32_t attempt = 0;
  std::vector<Token> prompt;
  std::vector<Token> tokens;
  std::vector<double> behavior_logprobs;
  std::uint64_t behavior_version = 0;  // oldest policy version that sampled any token
  bool complete = false;

  bool operator==(const Sequence&) const = default;
};

/// log softmax(logits / temperature) into `out` (same size as `logits`).
void log_softmax(std::span<const double> logits, double temperature, std::span<double> out);

/// Start a generation for `prompt` and sample up to `max_new_tokens` tokens.
Sequence generate(const PolicyParams& params, std::span<const Token> prompt, const RngStream& stream,
                  std::size_t max_new_tokens, double temperature = 1.0);

/// Continue an incomplete sequence in place. Sampling stops at EOS or T_max.
void resume(const PolicyParams& params, Sequence& seq, const RngStream& stream, std::size_t max_new_tokens,
            double temperature = 1.0);

/// log pi(y_t | x, y_<t) for every t.
std::vector<double> token_logprobs(const PolicyParams& params, std::span<const Token> prompt,
                                   std::span<const Token> tokens);

double sequence_logprob(const PolicyParams& params, std::span<const Token> prompt, std::span<const Token> tokens);

/// out += coeff * d/dlogits log pi(y_t | x, y_<t) for one step t.
void accumulate_token_grad(const PolicyParams& params, std::span<const Token> prompt, std::span<const Token> tokens,
                           std::size_t t, double coeff, std::span<double> out);

/// Gradient of sequence_logprob with respect to the logit table.
std::vector<double> grad_log_prob(const PolicyParams& params, std::span<const Token> prompt,
                                  std::span<const Token> tokens);

/// KL(pi(.|prefix) || base(.|prefix)) for the context prompt + generated[0..t).
double kl_to_reference(const PolicyParams& pi, const PolicyParams& base, std::span<const Token> prompt,
                       std::span<const Token> generated, std::size_t t);

/// Sum of per-prefix KLs along the generated tokens.
double sequence_kl(const PolicyParams& pi, const PolicyParams& base, std::span<const Token> prompt,
                   std::span<const Token> tokens);

}  // namespace asyncrl
