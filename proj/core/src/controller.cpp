#include "asyncrl/controller.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <deque>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "asyncrl/bounded_queue.hpp"
#include "asyncrl/error.hpp"
#include "json.hpp"

namespace asyncrl {

std::string_view to_string(Mode mode) noexcept { return mode == Mode::kSync ? "sync" : "async"; }

Mode mode_from_string(std::string_view name) {
  if (name == "sync" || name == "SYNC") return Mode::kSync;
  if (name == "async" || name == "ASYNC") return Mode::kAsync;
  fail(ErrorCategory::kConfig, "unknown mode '" + std::string(name) + "', expected sync or async");
}

void StageDurations::validate() const {
  for (double d : {generator, reward, trainer, weights_sync}) {
    if (!(d >= 0 && std::isfinite(d))) fail(ErrorCategory::kConfig, "stage durations must be finite and >= 0");
  }
  if (!(straggler_sigma >= 0)) fail(ErrorCategory::kConfig, "straggler sigma must be >= 0");
  if (generator_workers < 1) fail(ErrorCategory::kConfig, "generator_workers must be >= 1");
}

double StageDurations::generator_time(std::uint64_t batch) const {
  if (straggler_sigma == 0) return generator;
  double worst = 0;
  for (std::uint32_t w = 0; w < generator_workers; ++w) {
    const RngStream s{seed, batch, w};
    worst = std::max(worst, std::exp(straggler_sigma * s.normal(0)));
  }
  return generator * worst;
}

void ControllerConfig::validate() const {
  if (mode == Mode::kAsync && n_lag < 1) fail(ErrorCategory::kConfig, "n_lag must be >= 1 in async mode");
  if (checkpoint_every < 1) fail(ErrorCategory::kConfig, "checkpoint_every must be >= 1");
  if (!(stall_timeout_seconds > 0)) fail(ErrorCategory::kConfig, "stall timeout must be > 0");
  durations.validate();
  validate_channels(channels);
  validate_channels(init_channels);
}

// ---- trace ---------------------------------------------------------------------

std::string to_jsonl(const std::vector<TraceRecord>& trace) {
  std::string out;
  for (const auto& r : trace) {
    nlohmann::ordered_json j;
    j["kind"] = r.kind;
    j["step"] = r.step;
    j["executor"] = r.executor;
    j["version_consumed"] = r.version_consumed;
    j["version_produced"] = r.version_produced;
    j["t_start"] = r.t_start;
    j["t_end"] = r.t_end;
    j["items"] = r.items;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<TraceRecord> parse_jsonl(const std::string& text) {
  std::vector<TraceRecord> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TraceRecord r;
      r.kind = j.at("kind").get<std::string>();
      r.step = j.at("step").get<std::uint64_t>();
      r.executor = j.at("executor").get<std::string>();
      r.version_consumed = j.at("version_consumed").get<std::uint64_t>();
      r.version_produced = j.at("version_produced").get<std::uint64_t>();
      r.t_start = j.at("t_start").get<double>();
      r.t_end = j.at("t_end").get<double>();
      r.items = j.at("items").get<std::uint64_t>();
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCategory::kData, std::string("bad trace line: ") + e.what());
    }
  }
  return out;
}

// ---- timing-only pipeline ------------------------------------------------------

double steady_state_step_time(const std::vector<double>& ends, std::uint64_t window) {
  if (window < 1 || ends.size() <= window) fail(ErrorCategory::kConfig, "steady-state window needs more steps");
  const std::size_t last = ends.size() - 1;
  return (ends[last] - ends[last - window]) / static_cast<double>(window);
}

PipelineScheduler::PipelineScheduler(std::uint64_t steps, std::uint32_t n_lag, std::size_t queue_capacity)
    : steps_(steps), n_lag_(n_lag), capacity_(queue_capacity) {}

namespace {

std::string dump_schedule(const Schedule& s) {
  std::ostringstream os;
  os.precision(17);
  for (const auto& g : s.generator) {
    os << "{\"kind\":\"generate\",\"step\":" << g.index << ",\"version\":" << g.version << ",\"t_start\":" << g.t_start
       << ",\"t_end\":" << g.t_end << "}\n";
  }
  for (const auto& t : s.trainer) {
    os << "{\"kind\":\"train\",\"step\":" << t.index << ",\"version\":" << t.version << ",\"t_start\":" << t.t_start
       << ",\"t_end\":" << t.t_end << "}\n";
  }
  return os.str();
}

}  // namespace

Schedule PipelineScheduler::run(const Hooks& hooks) const {
  Schedule s;
  std::vector<double> publish{0.0};                   // publish[v]: time version v reaches the generator
  std::vector<std::optional<double>> enqueue;         // per generated batch
  std::vector<double> dequeue;                        // per trainer step
  double trainer_free = 0;

  auto generator_start = [&]() -> std::optional<double> {
    const std::uint64_t j = s.generator.size();
    if (j >= steps_) return std::nullopt;
    double t = 0;
    if (j > 0) {
      if (!enqueue[j - 1]) return std::nullopt;  // blocked on a full queue
      t = *enqueue[j - 1];
    }
    const std::uint64_t need = j > n_lag_ ? j - n_lag_ : 0;
    if (need >= publish.size()) return std::nullopt;
    return std::max(t, publish[need]);
  };
  auto trainer_start = [&]() -> std::optional<double> {
    const std::uint64_t k = s.trainer.size();
    if (k >= steps_ || k >= enqueue.size() || !enqueue[k]) return std::nullopt;
    return std::max(trainer_free, *enqueue[k]);
  };
  // Batch j can enter the queue once batch j - capacity has left it.
  auto settle_enqueue = [&](std::uint64_t j) {
    if (enqueue[j]) return;
    const double done = s.generator[j].t_end;
    if (capacity_ == 0) return;
    if (j < capacity_) {
      enqueue[j] = done;
    } else if (j - capacity_ < dequeue.size()) {
      enqueue[j] = std::max(done, dequeue[j - capacity_]);
    }
  };

  while (s.trainer.size() < steps_) {
    const auto tg = generator_start();
    const auto tt = trainer_start();
    if (!tg && !tt) {
      fail(ErrorCategory::kProtocol, "pipeline made no progress after " + std::to_string(s.trainer.size()) +
                                         " trainer steps; schedule so far:\n" + dump_schedule(s));
    }
    if (tt && (!tg || *tt <= *tg)) {
      const std::uint64_t k = s.trainer.size();
      ScheduledStage st;
      st.index = k;
      st.version = s.generator[k].version;
      st.t_start = *tt;
      dequeue.push_back(st.t_start);
      st.t_end = st.t_start + hooks.train(k, st.version, st.t_start);
      st.t_handoff = st.t_end + hooks.sync(k + 1, st.t_end);
      publish.push_back(st.t_handoff);
      trainer_free = st.t_end;
      s.trainer.push_back(st);
      for (std::uint64_t j = 0; j < s.generator.size(); ++j) {
        settle_enqueue(j);
        s.generator[j].t_handoff = enqueue[j].value_or(0.0);
      }
      continue;
    }
    const std::uint64_t j = s.generator.size();
    ScheduledStage g;
    g.index = j;
    g.t_start = *tg;
    // newest version already delivered at the start time
    g.version = static_cast<std::uint64_t>(std::upper_bound(publish.begin(), publish.end(), g.t_start) -
                                           publish.begin()) - 1;
    g.t_end = g.t_start + hooks.generate(j, g.version, g.t_start);
    s.generator.push_back(g);
    enqueue.emplace_back();
    settle_enqueue(j);
    s.generator[j].t_handoff = enqueue[j].value_or(0.0);
  }
  return s;
}

TimingResult measure_step_time(Mode mode, const StageDurations& d, std::uint64_t steps, std::uint32_t n_lag,
                               std::uint64_t window) {
  d.validate();
  TimingResult res;
  if (mode == Mode::kSync) {
    double t = 0;
    for (std::uint64_t k = 0; k < steps; ++k) {
      t += d.weights_sync + d.generator_time(k) + d.reward + d.trainer;
      res.trainer_end_times.push_back(t);
    }
  } else {
    if (n_lag < 1) fail(ErrorCategory::kConfig, "n_lag must be >= 1 in async mode");
    PipelineScheduler sched(steps, n_lag, n_lag);
    PipelineScheduler::Hooks hooks;
    hooks.generate = [&](std::uint64_t j, std::uint64_t, double) { return d.generator_time(j) + d.reward; };
    hooks.train = [&](std::uint64_t, std::uint64_t, double) { return d.trainer; };
    hooks.sync = [&](std::uint64_t, double) { return d.weights_sync; };
    res.schedule = sched.run(hooks);
    for (const auto& t : res.schedule.trainer) res.trainer_end_times.push_back(t.t_end);
  }
  res.step_time = steady_state_step_time(res.trainer_end_times, window);
  return res;
}

// ---- controller ------------------------------------------------------------------

struct Controller::Impl {
  Controller& c;
  std::map<std::string, Executor*, std::less<>> by_name;
  RunResult result;

  explicit Impl(Controller& owner) : c(owner) {
    for (auto& e : c.executors_) by_name[e->name()] = e.get();
  }

  Executor& get(const std::string& name) { return *by_name.at(name); }

  static std::uint64_t count_items(const std::vector<Items>& parts) {
    std::uint64_t n = 0;
    for (const auto& p : parts) {
      std::visit(
          [&](const auto& v) {
            using V = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<V, std::vector<Sequence>>) {
              n += v.size();
            } else {
              for (const auto& g : v) n += g.sequences.size();
            }
          },
          p);
    }
    return n;
  }

  // Payload for each inbound worker of a data channel.
  std::vector<Items> collect(const ChannelSpec& ch) {
    Executor& out = get(ch.outbound);
    Executor& in = get(ch.inbound);
    switch (ch.type) {
      case CommType::kBroadcast:
        return std::vector<Items>(in.spec().dp(), out.get_output(ch.name));
      case CommType::kGather: {
        auto parts = out.get_worker_outputs(ch.name);
        return {std::visit(
            [&](auto& first) -> Items {
              using V = std::decay_t<decltype(first)>;
              std::vector<std::optional<V>> contributions;
              for (auto& p : parts) contributions.emplace_back(std::get<V>(std::move(p)));
              return gather<typename V::value_type>(ch, std::span<const std::optional<V>>(contributions));
            },
            parts.front())};
      }
      case CommType::kScatter: {
        const Items whole = out.get_output(ch.name);
        const auto workers = in.spec().dp();
        std::vector<Items> parts;
        if (const auto* groups = std::get_if<std::vector<ScoredGroup>>(&whole)) {
          for (auto& chunk : scatter<ScoredGroup>(ch, *groups, workers)) parts.emplace_back(std::move(chunk));
        } else {
          const auto grouped = group_by_prompt(std::get<std::vector<Sequence>>(whole));
          for (auto& chunk : scatter<std::vector<Sequence>>(ch, grouped, workers)) {
            std::vector<Sequence> flat;
            for (auto& g : chunk) std::move(g.begin(), g.end(), std::back_inserter(flat));
            parts.emplace_back(std::move(flat));
          }
        }
        return parts;
      }
      case CommType::kDdmaWeightsUpdate:
        break;
    }
    fail(ErrorCategory::kProtocol, "channel '" + ch.name + "' carries weights, not data");
  }

  DdmaResult transfer_weights(const ChannelSpec& ch) {
    Executor& out = get(ch.outbound);
    Executor& in = get(ch.inbound);
    const auto model = out.get_model();
    const auto* gen = dynamic_cast<const GeneratorExecutor*>(&in);
    if (!gen) fail(ErrorCategory::kConfig, "weights channel '" + ch.name + "' must end at a generator");
    const auto target_shape = gen->config().shape;
    const DdmaModel timing = c.config_.ddma.value_or(DdmaModel{1.0, 0.0});
    auto res = ddma_sync(ch, model, target_shape, in.spec().mp, timing);
    if (!c.config_.ddma) res.time = c.config_.durations.weights_sync;
    return res;
  }

  double duration_of(Executor& e) const {
    const auto& d = c.config_.durations;
    switch (e.spec().role) {
      case Role::kGenerator: return d.generator_time(e.curr_step());
      case Role::kReward: return d.reward;
      case Role::kTrainer: return d.trainer;
    }
    return 0;
  }

  // Steps `e` and appends its trace record; returns the end time.
  double step_executor(Executor& e, std::uint64_t round, double t) {
    TraceRecord r;
    r.kind = "step";
    r.step = round;
    r.executor = e.name();
    r.t_start = t;
    const double dur = duration_of(e);
    e.step();
    if (auto* g = dynamic_cast<GeneratorExecutor*>(&e)) {
      r.version_consumed = r.version_produced = g->params().version();
      r.items = g->emitted().size();
    } else if (auto* tr = dynamic_cast<TrainerExecutor*>(&e)) {
      const auto& m = *tr->last_metrics();
      r.version_consumed = m.consumed_version;
      r.version_produced = m.produced_version;
      r.items = m.sequences;
      result.metrics.push_back(m);
    } else {
      const auto items = e.get_output("completions_with_reward");
      r.items = count_items({items});
      std::uint64_t oldest = std::numeric_limits<std::uint64_t>::max();
      for (const auto& g : std::get<std::vector<ScoredGroup>>(items)) {
        for (const auto& s : g.sequences) oldest = std::min(oldest, s.behavior_version);
      }
      r.version_consumed = r.version_produced = r.items ? oldest : 0;
    }
    r.t_end = t + dur;
    result.trace.push_back(r);
    return r.t_end;
  }

  double run_channel(const ChannelSpec& ch, std::uint64_t round, double t) {
    TraceRecord r;
    r.kind = "channel";
    r.step = round;
    r.executor = ch.name;
    r.t_start = t;
    if (ch.type == CommType::kDdmaWeightsUpdate) {
      auto res = transfer_weights(ch);
      get(ch.inbound).receive_weights(res.params);
      r.version_consumed = r.version_produced = res.params.version();
      r.items = res.generator_model.total_bytes();
      r.t_end = t + res.time;
    } else {
      auto parts = collect(ch);
      r.items = count_items(parts);
      get(ch.inbound).deliver(ch.name, std::move(parts));
      r.t_end = t;
    }
    result.trace.push_back(r);
    return r.t_end;
  }

  void checkpoint_all(std::uint64_t round, double t, bool trainer_only) {
    if (!c.config_.checkpoint_dir) return;
    std::filesystem::create_directories(*c.config_.checkpoint_dir);
    for (auto& e : c.executors_) {
      if (trainer_only && e->spec().role != Role::kTrainer) continue;
      e->save_checkpoint((std::filesystem::path(*c.config_.checkpoint_dir) / (e->name() + ".ckpt")).string());
      result.trace.push_back({"checkpoint", round, e->name(), 0, 0, t, t, e->curr_step()});
    }
  }

  // Executor index -> index of the last channel feeding it (-1 for sources).
  std::map<std::string, int> step_slots() const {
    std::map<std::string, int> slot;
    for (const auto& e : c.executors_) slot[e->name()] = -1;
    for (std::size_t i = 0; i < c.config_.channels.size(); ++i) slot[c.config_.channels[i].inbound] = static_cast<int>(i);
    return slot;
  }

  void validate_wiring() {
    const auto& channels = c.config_.channels;
    for (const auto* list : std::array<const std::vector<ChannelSpec>*, 2>{&channels, &c.config_.init_channels}) {
      for (const auto& ch : *list) {
        if (!by_name.count(ch.outbound) || !by_name.count(ch.inbound)) {
          fail(ErrorCategory::kConfig, "channel '" + ch.name + "' references an undeclared executor");
        }
        if (ch.type == CommType::kDdmaWeightsUpdate &&
            (get(ch.outbound).spec().role != Role::kTrainer || get(ch.inbound).spec().role != Role::kGenerator)) {
          fail(ErrorCategory::kConfig, "weights channel '" + ch.name + "' must run from a trainer to a generator");
        }
      }
    }
    const auto slot = step_slots();
    for (std::size_t i = 0; i < channels.size(); ++i) {
      const auto& ch = channels[i];
      if (ch.type == CommType::kDdmaWeightsUpdate) continue;
      if (slot.at(ch.outbound) >= static_cast<int>(i)) {
        fail(ErrorCategory::kConfig, "channel '" + ch.name + "' runs before its outbound executor '" + ch.outbound +
                                         "' has stepped");
      }
    }
    if (c.config_.mode == Mode::kAsync) {
      int gens = 0;
      int trainers = 0;
      for (const auto& e : c.executors_) {
        gens += e->spec().role == Role::kGenerator;
        trainers += e->spec().role == Role::kTrainer;
      }
      if (gens != 1 || trainers != 1) {
        fail(ErrorCategory::kConfig, "async mode needs exactly one generator and one trainer");
      }
    }
  }

  Executor& with_role(Role role) {
    for (auto& e : c.executors_) {
      if (e->spec().role == role) return *e;
    }
    fail(ErrorCategory::kConfig, "no executor with role " + std::string(to_string(role)));
  }

  const ChannelSpec* weights_channel() const {
    for (const auto& ch : c.config_.channels) {
      if (ch.type == CommType::kDdmaWeightsUpdate) return &ch;
    }
    return nullptr;
  }

  void run_init_channels() {
    for (const auto& ch : c.config_.init_channels) run_channel(ch, 0, 0.0);
  }

  void run_sync() {
    const auto slot = step_slots();
    double t = 0;
    for (std::uint64_t round = 0; round < c.config_.max_steps; ++round) {
      for (auto& e : c.executors_) {
        if (slot.at(e->name()) == -1) t = step_executor(*e, round, t);
      }
      for (std::size_t i = 0; i < c.config_.channels.size(); ++i) {
        t = run_channel(c.config_.channels[i], round, t);
        for (auto& e : c.executors_) {
          if (slot.at(e->name()) == static_cast<int>(i)) t = step_executor(*e, round, t);
        }
      }
      if ((round + 1) % c.config_.checkpoint_every == 0) checkpoint_all(round, t, false);
    }
    result.end_time = t;
  }

  // Runs the generator side of one async batch up to the hand-off into the
  // trainer. Returns the payload for the trainer and the time spent.
  struct Batch {
    std::string channel;
    std::vector<Items> parts;
  };

  double generator_pipeline(std::uint64_t j, double t, Batch& out) {
    Executor& gen = with_role(Role::kGenerator);
    Executor& trainer = with_role(Role::kTrainer);
    t = step_executor(gen, j, t);
    for (const auto& ch : c.config_.channels) {
      if (ch.type == CommType::kDdmaWeightsUpdate) continue;
      if (ch.inbound == trainer.name()) {
        TraceRecord r{"channel", j, ch.name, 0, 0, t, t, 0};
        out.channel = ch.name;
        out.parts = collect(ch);
        r.items = count_items(out.parts);
        result.trace.push_back(r);
        continue;
      }
      t = run_channel(ch, j, t);
      Executor& in = get(ch.inbound);
      if (in.spec().role != Role::kGenerator) t = step_executor(in, j, t);
    }
    return t;
  }

  void run_async_des() {
    Executor& gen = with_role(Role::kGenerator);
    Executor& trainer = with_role(Role::kTrainer);
    const ChannelSpec* wch = weights_channel();
    std::map<std::uint64_t, PolicyParams> delivered;  // generator-side copy of each published version
    if (wch) delivered.emplace(0, transfer_weights(*wch).params);
    std::map<std::uint64_t, Batch> queue;
    double last_end = 0;

    PipelineScheduler::Hooks hooks;
    hooks.generate = [&](std::uint64_t j, std::uint64_t version, double t) {
      if (wch) {
        auto it = delivered.find(version);
        if (it == delivered.end()) fail(ErrorCategory::kProtocol, "version " + std::to_string(version) + " never published");
        gen.receive_weights(it->second);
        delivered.erase(delivered.begin(), it);
      }
      Batch b;
      const double end = generator_pipeline(j, t, b);
      queue.emplace(j, std::move(b));
      return end - t;
    };
    hooks.train = [&](std::uint64_t k, std::uint64_t, double t) {
      auto node = queue.extract(k);
      if (node.empty()) fail(ErrorCategory::kProtocol, "trainer step " + std::to_string(k) + " found no batch");
      trainer.deliver(node.mapped().channel, std::move(node.mapped().parts));
      const double end = step_executor(trainer, k, t);
      last_end = end;
      return end - t;
    };
    hooks.sync = [&](std::uint64_t version, double t) {
      if ((version % c.config_.checkpoint_every) == 0) checkpoint_all(version - 1, t, false);
      if (!wch) return 0.0;
      auto res = transfer_weights(*wch);
      delivered.emplace(version, res.params);
      result.trace.push_back({"channel", version - 1, wch->name, version, version, t, t + res.time,
                              res.generator_model.total_bytes()});
      return res.time;
    };
    const std::size_t capacity = c.config_.queue_capacity.value_or(c.config_.n_lag);
    PipelineScheduler(c.config_.max_steps, c.config_.n_lag, capacity).run(hooks);
    result.end_time = last_end;
  }

  void run_async_threaded() {
    auto& gen = dynamic_cast<GeneratorExecutor&>(with_role(Role::kGenerator));
    Executor& trainer = with_role(Role::kTrainer);
    const ChannelSpec* wch = weights_channel();
    const auto timeout = std::chrono::milliseconds(static_cast<long long>(c.config_.stall_timeout_seconds * 1000));
    const auto t0 = std::chrono::steady_clock::now();
    auto now = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

    BoundedQueue<Batch> queue(c.config_.queue_capacity.value_or(c.config_.n_lag));
    VersionedMailbox<std::shared_ptr<const PolicyParams>> mailbox;
    if (wch) mailbox.publish(0, std::make_shared<const PolicyParams>(transfer_weights(*wch).params));

    // Trace and metrics are appended from both threads.
    std::mutex trace_mu;
    RunResult gen_side;
    std::exception_ptr gen_error;
    const std::uint64_t steps = c.config_.max_steps;
    const std::uint32_t lag = c.config_.n_lag;

    std::thread producer([&] {
      try {
        Impl local(c);
        for (std::uint64_t j = 0; j < steps; ++j) {
          if (wch) {
            auto got = mailbox.wait_for(j > lag ? j - lag : 0, timeout);
            if (!got) fail(ErrorCategory::kProtocol, "generator stalled waiting for weights before batch " + std::to_string(j));
            gen.receive_weights(*got->second);
          }
          Batch b;
          local.generator_pipeline(j, now(), b);
          {
            std::lock_guard lock(trace_mu);
            for (auto& r : local.result.trace) gen_side.trace.push_back(std::move(r));
            local.result.trace.clear();
          }
          if (!queue.push(std::move(b), timeout)) {
            fail(ErrorCategory::kProtocol, "generator stalled on a full queue at batch " + std::to_string(j));
          }
        }
      } catch (...) {
        gen_error = std::current_exception();
        queue.close();
      }
    });

    std::exception_ptr trainer_error;
    try {
      for (std::uint64_t k = 0; k < steps; ++k) {
        auto b = queue.pop(timeout);
        if (!b) {
          producer.join();
          if (gen_error) std::rethrow_exception(gen_error);
          fail(ErrorCategory::kProtocol, "trainer stalled waiting for batch " + std::to_string(k));
        }
        trainer.deliver(b->channel, std::move(b->parts));
        Impl local(c);
        local.step_executor(trainer, k, now());
        auto& rec = local.result.trace.back();
        rec.t_end = now();
        {
          std::lock_guard lock(trace_mu);
          result.trace.push_back(rec);
          result.metrics.push_back(local.result.metrics.back());
        }
        if (wch) {
          auto res = transfer_weights(*wch);
          const double ts = now();
          mailbox.publish(k + 1, std::make_shared<const PolicyParams>(std::move(res.params)));
          std::lock_guard lock(trace_mu);
          result.trace.push_back({"channel", k, wch->name, k + 1, k + 1, ts, now(), res.generator_model.total_bytes()});
        }
        if ((k + 1) % c.config_.checkpoint_every == 0) {
          std::lock_guard lock(trace_mu);
          checkpoint_all(k, now(), true);
        }
      }
    } catch (...) {
      trainer_error = std::current_exception();
      queue.close();
      mailbox.close();
    }
    mailbox.close();
    if (producer.joinable()) producer.join();
    if (trainer_error) std::rethrow_exception(trainer_error);
    if (gen_error) std::rethrow_exception(gen_error);
    for (auto& r : gen_side.trace) result.trace.push_back(std::move(r));
    std::stable_sort(result.trace.begin(), result.trace.end(),
                     [](const TraceRecord& a, const TraceRecord& b) { return a.t_start < b.t_start; });
    result.end_time = now();
  }
};

Controller::Controller(ControllerConfig config, std::vector<std::unique_ptr<Executor>> executors)
    : config_(std::move(config)), executors_(std::move(executors)) {
  config_.validate();
  std::set<std::string> names;
  for (const auto& e : executors_) {
    if (!e) fail(ErrorCategory::kConfig, "null executor");
    if (!names.insert(e->name()).second) fail(ErrorCategory::kConfig, "duplicate executor name '" + e->name() + "'");
  }
  Impl(*this).validate_wiring();
}

Controller::~Controller() {
  try {
    shutdown();
  } catch (...) {
  }
}

Executor& Controller::executor(std::string_view name) {
  for (auto& e : executors_) {
    if (e->name() == name) return *e;
  }
  fail(ErrorCategory::kLookup, "no executor named '" + std::string(name) + "'");
}

RunResult Controller::run() {
  if (shut_down_) fail(ErrorCategory::kProtocol, "controller is shut down");
  if (ran_) fail(ErrorCategory::kProtocol, "controller has already run");
  ran_ = true;
  Impl impl(*this);
  if (config_.max_steps == 0) return {};
  for (auto& e : executors_) {
    if (!e->initialized()) e->init();
  }
  impl.run_init_channels();
  if (config_.mode == Mode::kSync) {
    impl.run_sync();
  } else if (config_.scheduler == SchedulerKind::kDiscreteEvent) {
    impl.run_async_des();
  } else {
    impl.run_async_threaded();
  }
  return std::move(impl.result);
}

void Controller::shutdown() {
  if (shut_down_) return;
  shut_down_ = true;
  if (config_.checkpoint_dir && ran_) {
    std::filesystem::create_directories(*config_.checkpoint_dir);
    for (auto& e : executors_) {
      if (e->initialized() && !e->shut_down()) {
        e->save_checkpoint((std::filesystem::path(*config_.checkpoint_dir) / (e->name() + ".ckpt")).string());
      }
    }
  }
  for (auto& e : executors_) e->shutdown();
}

}  // namespace asyncrl
