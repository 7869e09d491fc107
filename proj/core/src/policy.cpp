#include "asyncrl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "asyncrl/error.hpp"

namespace asyncrl {

void PolicyShape::validate() const {
  if (vocab < 2) fail(ErrorCategory::kConfig, "vocab size must be >= 2");
  if (max_len < 1) fail(ErrorCategory::kConfig, "max_len must be >= 1");
  if (order < 1) fail(ErrorCategory::kConfig, "context order must be >= 1");
  if (rows() * cols() > (std::uint64_t{1} << 26)) fail(ErrorCategory::kConfig, "policy table too large");
}

std::uint64_t PolicyShape::rows() const {
  std::uint64_t r = 1;
  for (std::uint32_t i = 0; i < order; ++i) {
    r *= vocab + 1;
    if (r > (std::uint64_t{1} << 32)) fail(ErrorCategory::kConfig, "policy context space too large");
  }
  return r;
}

PolicyParams::PolicyParams(PolicyShape shape, std::uint64_t version) : shape_(shape), version_(version) {
  shape_.validate();
  table_.assign(shape_.rows() * shape_.cols(), 0.0);
}

PolicyParams::PolicyParams(PolicyShape shape, std::vector<double> table, std::uint64_t version)
    : shape_(shape), version_(version), table_(std::move(table)) {
  shape_.validate();
  if (table_.size() != shape_.rows() * shape_.cols()) fail(ErrorCategory::kShard, "policy table has wrong size");
  for (double v : table_) {
    if (!std::isfinite(v)) fail(ErrorCategory::kData, "policy table holds a non-finite logit");
  }
}

PolicyParams PolicyParams::seeded(PolicyShape shape, std::uint64_t seed, double scale) {
  PolicyParams p(shape, 0);
  RngStream stream{seed, ~std::uint64_t{0}, 0};
  for (std::size_t i = 0; i < p.table_.size(); ++i) p.table_[i] = scale * stream.normal(i);
  return p;
}

std::span<const double> PolicyParams::row(std::uint64_t r) const {
  if (r >= shape_.rows()) fail(ErrorCategory::kRange, "policy row out of range");
  return std::span<const double>(table_).subspan(r * shape_.vocab, shape_.vocab);
}

PolicyParams PolicyParams::next(std::vector<double> table) const {
  return PolicyParams(shape_, std::move(table), version_ + 1);
}

PolicyParams PolicyParams::with_version(std::uint64_t version) const {
  PolicyParams p = *this;
  p.version_ = version;
  return p;
}

std::uint64_t PolicyParams::context_row(std::span<const Token> prompt, std::span<const Token> generated,
                                        std::size_t t) const {
  const std::uint64_t base = shape_.vocab + 1;
  const std::uint64_t pad = shape_.vocab;
  const std::size_t len = prompt.size() + t;
  std::uint64_t r = 0;
  for (std::uint32_t j = shape_.order; j > 0; --j) {
    // j-th most recent token, oldest first
    std::uint64_t tok = pad;
    if (len >= j) {
      const std::size_t idx = len - j;
      tok = idx < prompt.size() ? prompt[idx] : generated[idx - prompt.size()];
      if (tok >= shape_.vocab) fail(ErrorCategory::kDomain, "token " + std::to_string(tok) + " >= vocab size");
    }
    r = r * base + tok;
  }
  return r;
}

Bytes PolicyParams::table_bytes() const {
  ByteWriter w;
  for (double v : table_) w.f64(v);
  return std::move(w).take();
}

Bytes PolicyParams::serialize() const {
  ByteWriter w;
  w.tag("ARLP");
  w.u32(kSnapshotFormat);
  w.u64(version_);
  w.u32(shape_.vocab);
  w.u32(shape_.max_len);
  w.u32(shape_.order);
  w.u64(shape_.rows());
  w.u64(shape_.cols());
  for (double v : table_) w.f64(v);
  return std::move(w).take();
}

PolicyParams PolicyParams::deserialize(std::span<const std::byte> bytes) {
  ByteReader r(bytes);
  r.expect_tag("ARLP");
  if (auto fmt = r.u32(); fmt != kSnapshotFormat) {
    fail(ErrorCategory::kData, "unsupported policy snapshot format " + std::to_string(fmt));
  }
  const auto version = r.u64();
  PolicyShape shape;
  shape.vocab = r.u32();
  shape.max_len = r.u32();
  shape.order = r.u32();
  shape.validate();
  const auto rows = r.u64();
  const auto cols = r.u64();
  if (rows != shape.rows() || cols != shape.cols()) fail(ErrorCategory::kData, "snapshot table dims disagree with shape");
  if (rows * cols > r.remaining() / 8) fail(ErrorCategory::kData, "truncated policy snapshot");
  std::vector<double> table(rows * cols);
  for (auto& v : table) v = r.f64();
  if (!r.done()) fail(ErrorCategory::kData, "trailing bytes after policy snapshot");
  return PolicyParams(shape, std::move(table), version);
}

std::uint64_t PolicyParams::table_hash() const { return fnv1a64(table_bytes()); }

std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t RngStream::bits(std::uint64_t position) const noexcept {
  std::uint64_t h = mix64(seed);
  h = mix64(h ^ prompt_id);
  h = mix64(h ^ attempt);
  return mix64(h ^ position);
}

double RngStream::uniform(std::uint64_t position) const noexcept {
  return static_cast<double>(bits(position) >> 11) * 0x1.0p-53;
}

double RngStream::normal(std::uint64_t position) const noexcept {
  const std::uint64_t b = bits(position);
  const double u1 = (static_cast<double>(mix64(b) >> 11) + 0.5) * 0x1.0p-53;
  const double u2 = static_cast<double>(mix64(b ^ 0x5bd1e995ull) >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void log_softmax(std::span<const double> logits, double temperature, std::span<double> out) {
  if (!(temperature > 0)) fail(ErrorCategory::kDomain, "temperature must be > 0");
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = logits[i] / temperature;
    hi = std::max(hi, out[i]);
  }
  double sum = 0;
  for (double v : out) sum += std::exp(v - hi);
  const double lse = hi + std::log(sum);
  for (auto& v : out) v -= lse;
}

namespace {

void check_tokens(const PolicyParams& params, std::span<const Token> tokens, const char* what) {
  for (Token t : tokens) {
    if (t >= params.vocab()) {
      fail(ErrorCategory::kDomain, std::string(what) + " token " + std::to_string(t) + " >= vocab size");
    }
  }
}

}  // namespace

Sequence generate(const PolicyParams& params, std::span<const Token> prompt, const RngStream& stream,
                  std::size_t max_new_tokens, double temperature) {
  check_tokens(params, prompt, "prompt");
  Sequence seq;
  seq.prompt_id = stream.prompt_id;
  seq.attempt = stream.attempt;
  seq.prompt.assign(prompt.begin(), prompt.end());
  seq.behavior_version = params.version();
  resume(params, seq, stream, max_new_tokens, temperature);
  return seq;
}

void resume(const PolicyParams& params, Sequence& seq, const RngStream& stream, std::size_t max_new_tokens,
            double temperature) {
  if (max_new_tokens < 1) fail(ErrorCategory::kDomain, "max_new_tokens must be >= 1");
  if (seq.complete) return;
  if (seq.tokens.empty()) {
    seq.behavior_version = params.version();
  } else {
    seq.behavior_version = std::min(seq.behavior_version, params.version());
  }
  std::vector<double> lp(params.vocab());
  for (std::size_t n = 0; n < max_new_tokens && seq.tokens.size() < params.max_len(); ++n) {
    const std::size_t t = seq.tokens.size();
    log_softmax(params.row(params.context_row(seq.prompt, seq.tokens, t)), temperature, lp);
    const double u = stream.uniform(t);
    Token pick = params.vocab() - 1;
    double cdf = 0;
    for (Token v = 0; v < params.vocab(); ++v) {
      cdf += std::exp(lp[v]);
      if (u < cdf) {
        pick = v;
        break;
      }
    }
    // rounding can leave the tail token at probability 0; step back to a live one
    while (pick > 0 && lp[pick] == -std::numeric_limits<double>::infinity()) --pick;
    seq.tokens.push_back(pick);
    seq.behavior_logprobs.push_back(lp[pick]);
    if (pick == kEos) break;
  }
  seq.complete = (!seq.tokens.empty() && seq.tokens.back() == kEos) || seq.tokens.size() >= params.max_len();
}

std::vector<double> token_logprobs(const PolicyParams& params, std::span<const Token> prompt,
                                   std::span<const Token> tokens) {
  check_tokens(params, tokens, "generated");
  std::vector<double> out(tokens.size());
  std::vector<double> lp(params.vocab());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    log_softmax(params.row(params.context_row(prompt, tokens, t)), 1.0, lp);
    out[t] = lp[tokens[t]];
  }
  return out;
}

double sequence_logprob(const PolicyParams& params, std::span<const Token> prompt, std::span<const Token> tokens) {
  if (tokens.empty()) fail(ErrorCategory::kDomain, "sequence_logprob needs a nonempty generation");
  double s = 0;
  for (double v : token_logprobs(params, prompt, tokens)) s += v;
  return s;
}

void accumulate_token_grad(const PolicyParams& params, std::span<const Token> prompt, std::span<const Token> tokens,
                           std::size_t t, double coeff, std::span<double> out) {
  const auto r = params.context_row(prompt, tokens, t);
  const auto v_count = params.vocab();
  std::vector<double> lp(v_count);
  log_softmax(params.row(r), 1.0, lp);
  double* dst = out.data() + r * v_count;
  for (Token v = 0; v < v_count; ++v) dst[v] -= coeff * std::exp(lp[v]);
  dst[tokens[t]] += coeff;
}

std::vector<double> grad_log_prob(const PolicyParams& params, std::span<const Token> prompt,
                                  std::span<const Token> tokens) {
  check_tokens(params, tokens, "generated");
  std::vector<double> g(params.table().size(), 0.0);
  for (std::size_t t = 0; t < tokens.size(); ++t) accumulate_token_grad(params, prompt, tokens, t, 1.0, g);
  return g;
}

double kl_to_reference(const PolicyParams& pi, const PolicyParams& base, std::span<const Token> prompt,
                       std::span<const Token> generated, std::size_t t) {
  if (!(pi.shape() == base.shape())) fail(ErrorCategory::kShard, "KL needs policies of the same shape");
  const auto r = pi.context_row(prompt, generated, t);
  std::vector<double> lp(pi.vocab());
  std::vector<double> lq(pi.vocab());
  log_softmax(pi.row(r), 1.0, lp);
  log_softmax(base.row(r), 1.0, lq);
  double kl = 0;
  for (std::size_t v = 0; v < lp.size(); ++v) kl += std::exp(lp[v]) * (lp[v] - lq[v]);
  return std::max(kl, 0.0);
}

double sequence_kl(const PolicyParams& pi, const PolicyParams& base, std::span<const Token> prompt,
                   std::span<const Token> tokens) {
  double s = 0;
  for (std::size_t t = 0; t < tokens.size(); ++t) s += kl_to_reference(pi, base, prompt, tokens, t);
  return s;
}

}  // namespace asyncrl
