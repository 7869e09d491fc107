#include "asyncrl/executors.hpp"

#include <algorithm>
#include <limits>

#include "asyncrl/error.hpp"

namespace asyncrl {

std::string_view to_string(Role role) noexcept {
  switch (role) {
    case Role::kGenerator: return "GENERATOR";
    case Role::kTrainer: return "TRAINER";
    case Role::kReward: return "REWARD";
  }
  return "UNKNOWN";
}

Role role_from_string(std::string_view name) {
  for (auto r : {Role::kGenerator, Role::kTrainer, Role::kReward}) {
    if (name == to_string(r)) return r;
  }
  fail(ErrorCategory::kConfig, "unknown executor role '" + std::string(name) + "'");
}

void ExecutorSpec::validate() const {
  if (name.empty()) fail(ErrorCategory::kConfig, "executor name must not be empty");
  if (worker_count < 1) fail(ErrorCategory::kConfig, "executor '" + name + "' needs worker_count >= 1");
  if (mp < 1 || worker_count % mp != 0) {
    fail(ErrorCategory::kConfig, "executor '" + name + "': worker_count must be divisible by mp");
  }
}

Bytes checkpoint_bytes(Role role, std::uint64_t step, std::span<const std::byte> payload) {
  ByteWriter w;
  w.tag("ARLC");
  w.u32(kCheckpointFormat);
  w.u8(static_cast<std::uint8_t>(role));
  w.u8(0);
  w.u8(0);
  w.u8(0);
  w.u64(step);
  w.raw(payload);
  return std::move(w).take();
}

CheckpointHeader read_checkpoint_header(ByteReader& r) {
  r.expect_tag("ARLC");
  if (auto fmt = r.u32(); fmt != kCheckpointFormat) {
    fail(ErrorCategory::kData, "unsupported checkpoint format " + std::to_string(fmt));
  }
  const auto role = r.u8();
  if (role > static_cast<std::uint8_t>(Role::kReward)) fail(ErrorCategory::kData, "checkpoint has unknown role");
  for (int i = 0; i < 3; ++i) {
    if (r.u8() != 0) fail(ErrorCategory::kData, "checkpoint reserved bytes are not zero");
  }
  CheckpointHeader h;
  h.role = static_cast<Role>(role);
  h.step = r.u64();
  return h;
}

// ---- base -----------------------------------------------------------------------

Executor::Executor(ExecutorSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

void Executor::init() {
  if (shut_down_) fail(ErrorCategory::kProtocol, "executor '" + name() + "' is shut down");
  if (initialized_) fail(ErrorCategory::kProtocol, "executor '" + name() + "' is already initialized");
  step_ = 0;
  try {
    do_init();
  } catch (const Error& e) {
    if (e.category() == ErrorCategory::kIo || e.category() == ErrorCategory::kData ||
        e.category() == ErrorCategory::kConfig) {
      fail(ErrorCategory::kInit, "executor '" + name() + "': " + e.what());
    }
    throw;
  }
  initialized_ = true;
}

void Executor::step() {
  if (shut_down_) fail(ErrorCategory::kProtocol, "step() on shut down executor '" + name() + "'");
  if (!initialized_) fail(ErrorCategory::kProtocol, "step() before init() on executor '" + name() + "'");
  do_step();
  ++step_;
}

void Executor::shutdown() {
  if (shut_down_) return;
  drain();
  shut_down_ = true;
}

void Executor::unknown_output(std::string_view out) const {
  fail(ErrorCategory::kLookup, "executor '" + name() + "' has no output '" + std::string(out) + "'");
}

Items Executor::get_output(std::string_view out) const { unknown_output(out); }

std::vector<Items> Executor::get_worker_outputs(std::string_view out) const { return {get_output(out)}; }

void Executor::deliver(std::string_view channel, std::vector<Items>) {
  fail(ErrorCategory::kProtocol, "executor '" + name() + "' accepts no input on '" + std::string(channel) + "'");
}

ShardedModel Executor::get_model() const {
  fail(ErrorCategory::kLookup, "executor '" + name() + "' holds no model");
}

void Executor::receive_weights(const PolicyParams&) {
  fail(ErrorCategory::kProtocol, "executor '" + name() + "' does not take weight updates");
}

Bytes Executor::checkpoint() const {
  ByteWriter payload;
  write_payload(payload);
  return checkpoint_bytes(spec_.role, step_, payload.bytes());
}

void Executor::restore(std::span<const std::byte> bytes) {
  ByteReader r(bytes);
  const auto h = read_checkpoint_header(r);
  if (h.role != spec_.role) {
    fail(ErrorCategory::kData, "checkpoint role " + std::string(to_string(h.role)) + " does not match executor '" +
                                   name() + "'");
  }
  read_payload(r);
  if (!r.done()) fail(ErrorCategory::kData, "trailing bytes in checkpoint");
  step_ = h.step;
}

void Executor::save_checkpoint(const std::string& path) const {
  if (!initialized_) fail(ErrorCategory::kProtocol, "save_checkpoint() before init() on '" + name() + "'");
  write_file_atomic(path, checkpoint());
}

void Executor::load_checkpoint(const std::string& path) {
  restore(read_file(path));
  initialized_ = true;
}

namespace {

template <class T>
std::vector<T> concat(std::vector<Items>& per_worker, const char* what, const std::string& who) {
  std::vector<T> out;
  for (auto& part : per_worker) {
    auto* v = std::get_if<std::vector<T>>(&part);
    if (!v) fail(ErrorCategory::kProtocol, "executor '" + who + "' expected " + what);
    std::move(v->begin(), v->end(), std::back_inserter(out));
  }
  return out;
}

PolicyParams initial_params(const PolicyShape& shape, std::uint64_t seed, double scale,
                            const std::optional<PolicyParams>& given) {
  if (given) {
    if (!(given->shape() == shape)) fail(ErrorCategory::kConfig, "initial parameters do not match the policy shape");
    return *given;
  }
  return PolicyParams::seeded(shape, seed, scale);
}

}  // namespace

// ---- generator ----------------------------------------------------------------

GeneratorExecutor::GeneratorExecutor(ExecutorSpec spec, GeneratorConfig config)
    : Executor(std::move(spec)), config_(std::move(config)) {
  if (spec_.role != Role::kGenerator) fail(ErrorCategory::kConfig, "generator executor needs role GENERATOR");
  config_.shape.validate();
  config_.task.validate();
  if (config_.group_size < 2) fail(ErrorCategory::kConfig, "group_size must be >= 2");
  if (config_.prompts_per_step < 1) fail(ErrorCategory::kConfig, "prompts_per_step must be >= 1");
  if (config_.task.vocab != config_.shape.vocab) fail(ErrorCategory::kConfig, "task and policy vocab differ");
}

void GeneratorExecutor::do_init() {
  params_ = initial_params(config_.shape, config_.seed, config_.init_scale, config_.initial_params);
  pending_.clear();
  cache_.clear();
  buffer_.clear();
  emitted_.clear();
  has_output_ = false;
  if (config_.checkpoint) restore(read_file(*config_.checkpoint));
}

RngStream GeneratorExecutor::stream(std::uint64_t prompt_id, std::uint32_t attempt) const {
  return RngStream{config_.seed, prompt_id, attempt};
}

void GeneratorExecutor::do_step() {
  const std::uint64_t first = step_ * config_.prompts_per_step;
  for (std::uint64_t id = first; id < first + config_.prompts_per_step; ++id) {
    for (std::uint32_t a = 0; a < config_.group_size; ++a) pending_.push_back({id, a});
  }
  std::size_t budget = config_.max_decode_concurrency == 0 ? std::numeric_limits<std::size_t>::max()
                                                           : config_.max_decode_concurrency;
  const std::size_t max_new = config_.max_new_tokens == 0 ? config_.shape.max_len : config_.max_new_tokens;

  auto route = [&](Sequence&& s, std::vector<Sequence>& unfinished) {
    if (s.complete) {
      buffer_[s.prompt_id].push_back(std::move(s));
    } else {
      unfinished.push_back(std::move(s));
    }
  };

  std::vector<Sequence> unfinished;
  for (auto& s : cache_) {
    if (budget == 0) {
      unfinished.push_back(std::move(s));
      continue;
    }
    --budget;
    resume(params_, s, stream(s.prompt_id, s.attempt), max_new, config_.temperature);
    route(std::move(s), unfinished);
  }
  std::size_t started = 0;
  for (; started < pending_.size() && budget > 0; ++started, --budget) {
    const auto& w = pending_[started];
    route(generate(params_, config_.task.prompt(w.prompt_id), stream(w.prompt_id, w.attempt), max_new,
                   config_.temperature),
          unfinished);
  }
  pending_.erase(pending_.begin(), pending_.begin() + static_cast<std::ptrdiff_t>(started));
  cache_ = std::move(unfinished);

  emitted_.clear();
  for (auto it = buffer_.begin(); it != buffer_.end();) {
    if (it->second.size() < config_.group_size) {
      ++it;
      continue;
    }
    auto& group = it->second;
    std::sort(group.begin(), group.end(), [](const Sequence& a, const Sequence& b) { return a.attempt < b.attempt; });
    std::move(group.begin(), group.end(), std::back_inserter(emitted_));
    it = buffer_.erase(it);
  }
  has_output_ = true;
}

Items GeneratorExecutor::get_output(std::string_view out) const {
  if (out != "completions" || !has_output_) unknown_output(out);
  return emitted_;
}

std::vector<Items> GeneratorExecutor::get_worker_outputs(std::string_view out) const {
  if (out != "completions" || !has_output_) unknown_output(out);
  const std::size_t n = config_.group_size;
  const auto counts = scatter_counts(emitted_.size() / n, spec_.dp());
  std::vector<Items> parts;
  std::size_t pos = 0;
  for (auto c : counts) {
    std::vector<Sequence> part(emitted_.begin() + static_cast<std::ptrdiff_t>(pos),
                               emitted_.begin() + static_cast<std::ptrdiff_t>(pos + c * n));
    parts.emplace_back(std::move(part));
    pos += c * n;
  }
  return parts;
}

ShardedModel GeneratorExecutor::get_model() const { return shard_model(params_, spec_.mp); }

void GeneratorExecutor::receive_weights(const PolicyParams& params) {
  if (!(params.shape() == config_.shape)) fail(ErrorCategory::kShard, "weights do not match the generator shape");
  if (params.version() < params_.version()) {
    fail(ErrorCategory::kProtocol, "weights version " + std::to_string(params.version()) + " is older than " +
                                       std::to_string(params_.version()));
  }
  params_ = params;
}

void GeneratorExecutor::write_payload(ByteWriter& out) const {
  out.blob(params_.serialize());
  out.u64(pending_.size());
  for (const auto& w : pending_) {
    out.u64(w.prompt_id);
    out.u32(w.attempt);
  }
  out.u64(cache_.size());
  for (const auto& s : cache_) write_sequence(out, s);
  std::uint64_t buffered = 0;
  for (const auto& [id, g] : buffer_) buffered += g.size();
  out.u64(buffered);
  for (const auto& [id, g] : buffer_) {
    for (const auto& s : g) write_sequence(out, s);
  }
}

void GeneratorExecutor::read_payload(ByteReader& in) {
  auto params = PolicyParams::deserialize(in.blob());
  if (!(params.shape() == config_.shape)) fail(ErrorCategory::kData, "checkpoint policy shape differs from config");
  std::vector<WorkItem> pending;
  const auto np = in.u64();
  for (std::uint64_t i = 0; i < np; ++i) {
    WorkItem w;
    w.prompt_id = in.u64();
    w.attempt = in.u32();
    pending.push_back(w);
  }
  std::vector<Sequence> cache;
  const auto nc = in.u64();
  for (std::uint64_t i = 0; i < nc; ++i) cache.push_back(read_sequence(in));
  std::map<std::uint64_t, std::vector<Sequence>> buffer;
  const auto nb = in.u64();
  for (std::uint64_t i = 0; i < nb; ++i) {
    auto s = read_sequence(in);
    buffer[s.prompt_id].push_back(std::move(s));
  }
  params_ = std::move(params);
  pending_ = std::move(pending);
  cache_ = std::move(cache);
  buffer_ = std::move(buffer);
  emitted_.clear();
  has_output_ = false;
}

// ---- reward -------------------------------------------------------------------

ScoredGroup score_group(const SortTask& task, std::vector<Sequence> sequences, bool leave_one_out) {
  ScoredGroup g;
  if (sequences.empty()) fail(ErrorCategory::kProtocol, "cannot score an empty group");
  g.prompt_id = sequences.front().prompt_id;
  for (const auto& s : sequences) g.rewards.push_back(score(task, s.prompt, s.tokens));
  auto adv = group_advantages(g.rewards, {}, 0.0, leave_one_out);
  g.baseline = adv.baseline;
  g.advantages = std::move(adv.advantages);
  g.sequences = std::move(sequences);
  return g;
}

RewardExecutor::RewardExecutor(ExecutorSpec spec, RewardConfig config)
    : Executor(std::move(spec)), config_(std::move(config)) {
  if (spec_.role != Role::kReward) fail(ErrorCategory::kConfig, "reward executor needs role REWARD");
  config_.task.validate();
  if (config_.group_size < 2) fail(ErrorCategory::kConfig, "group_size must be >= 2");
}

void RewardExecutor::deliver(std::string_view, std::vector<Items> per_worker) {
  input_ = concat<Sequence>(per_worker, "completions", name());
}

void RewardExecutor::do_step() {
  if (!input_) fail(ErrorCategory::kProtocol, "reward executor '" + name() + "' stepped without completions");
  output_.clear();
  for (auto& g : group_by_prompt(*input_)) {
    if (g.size() != config_.group_size) {
      fail(ErrorCategory::kProtocol, "prompt " + std::to_string(g.front().prompt_id) + " arrived with " +
                                         std::to_string(g.size()) + " completions, expected " +
                                         std::to_string(config_.group_size));
    }
    output_.push_back(score_group(config_.task, std::move(g), config_.leave_one_out));
  }
  input_.reset();
  has_output_ = true;
}

Items RewardExecutor::get_output(std::string_view out) const {
  if (out != "completions_with_reward" || !has_output_) unknown_output(out);
  return output_;
}

// ---- trainer ------------------------------------------------------------------

TrainerExecutor::TrainerExecutor(ExecutorSpec spec, TrainerConfig config)
    : Executor(std::move(spec)), config_(std::move(config)) {
  if (spec_.role != Role::kTrainer) fail(ErrorCategory::kConfig, "trainer executor needs role TRAINER");
  config_.shape.validate();
  config_.aipo.validate();
  config_.optimizer.validate();
  if (config_.built_in_scorer) config_.task.validate();
}

void TrainerExecutor::do_init() {
  params_ = initial_params(config_.shape, config_.seed, config_.init_scale, config_.initial_params);
  reference_ = params_;
  optimizer_ = {};
  metrics_.reset();
  if (config_.checkpoint) restore(read_file(*config_.checkpoint));
}

void TrainerExecutor::deliver(std::string_view, std::vector<Items> per_worker) {
  if (!per_worker.empty() && std::holds_alternative<std::vector<Sequence>>(per_worker.front())) {
    if (!config_.built_in_scorer) {
      fail(ErrorCategory::kProtocol, "trainer '" + name() + "' got raw completions but has no built-in scorer");
    }
    sequences_in_ = concat<Sequence>(per_worker, "completions", name());
    return;
  }
  groups_in_ = concat<ScoredGroup>(per_worker, "scored groups", name());
}

void TrainerExecutor::drain() {
  groups_in_.reset();
  sequences_in_.reset();
}

void TrainerExecutor::do_step() {
  if (!groups_in_ && !sequences_in_) {
    fail(ErrorCategory::kProtocol, "trainer '" + name() + "' stepped without a delivered batch");
  }
  std::vector<ScoredGroup> groups;
  if (sequences_in_) {
    for (auto& g : group_by_prompt(*sequences_in_)) {
      groups.push_back(score_group(config_.task, std::move(g), config_.aipo.leave_one_out));
    }
  }
  if (groups_in_) std::move(groups_in_->begin(), groups_in_->end(), std::back_inserter(groups));
  drain();

  const auto& aipo = config_.aipo;
  if (aipo.kl_coeff > 0) {
    for (auto& g : groups) {
      g.kl_penalties.clear();
      for (const auto& s : g.sequences) g.kl_penalties.push_back(sequence_kl(params_, reference_, s.prompt, s.tokens));
      auto adv = group_advantages(g.rewards, g.kl_penalties, aipo.kl_coeff, aipo.leave_one_out);
      g.baseline = adv.baseline;
      g.advantages = std::move(adv.advantages);
    }
  }

  TrainerMetrics m;
  m.step = step_;
  m.learner_version = params_.version();
  m.consumed_version = params_.version();
  double reward_sum = 0;
  for (const auto& g : groups) {
    for (std::size_t i = 0; i < g.sequences.size(); ++i) {
      m.consumed_version = std::min(m.consumed_version, g.sequences[i].behavior_version);
      reward_sum += g.rewards.at(i);
      ++m.sequences;
    }
  }
  m.groups = groups.size();
  m.mean_reward = m.sequences ? reward_sum / static_cast<double>(m.sequences) : 0.0;

  const auto grad = policy_gradient(params_, groups, aipo);
  m.max_is_weight = grad.stats.max_is_weight;
  m.min_is_weight = grad.stats.min_is_weight;
  m.clip_fraction = grad.stats.clip_fraction();
  m.grad_norm = grad.stats.grad_norm;

  OptimizerConfig opt = config_.optimizer;
  opt.learning_rate = aipo.learning_rate;
  params_ = apply_update(params_, grad.gradient, opt, optimizer_);
  m.produced_version = params_.version();
  metrics_ = m;
  consumed_ = std::move(groups);
}

Items TrainerExecutor::get_output(std::string_view out) const {
  if (out != "consumed_batch" || !metrics_) unknown_output(out);
  return consumed_;
}

ShardedModel TrainerExecutor::get_model() const { return shard_model(params_, spec_.mp); }

void TrainerExecutor::write_payload(ByteWriter& out) const {
  out.blob(params_.serialize());
  out.blob(reference_.serialize());
  optimizer_.serialize(out);
}

void TrainerExecutor::read_payload(ByteReader& in) {
  auto params = PolicyParams::deserialize(in.blob());
  auto reference = PolicyParams::deserialize(in.blob());
  auto opt = OptimizerState::deserialize(in);
  if (!(params.shape() == config_.shape) || !(reference.shape() == config_.shape)) {
    fail(ErrorCategory::kData, "checkpoint policy shape differs from config");
  }
  params_ = std::move(params);
  reference_ = std::move(reference);
  optimizer_ = std::move(opt);
  metrics_.reset();
}

}  // namespace asyncrl
