#include "asyncrl/channels.hpp"

#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <map>
#include <set>

namespace asyncrl {

std::string_view to_string(CommType type) noexcept {
  switch (type) {
    case CommType::kBroadcast: return "BROADCAST";
    case CommType::kScatter: return "SCATTER";
    case CommType::kGather: return "GATHER";
    case CommType::kDdmaWeightsUpdate: return "DDMA_WEIGHTS_UPDATE";
  }
  return "UNKNOWN";
}

CommType comm_type_from_string(std::string_view name) {
  for (auto t : {CommType::kBroadcast, CommType::kScatter, CommType::kGather, CommType::kDdmaWeightsUpdate}) {
    if (name == to_string(t)) return t;
  }
  fail(ErrorCategory::kConfig, "unknown communication type '" + std::string(name) + "'");
}

void validate_channels(std::span<const ChannelSpec> channels) {
  std::set<std::string> names;
  for (const auto& c : channels) {
    if (c.name.empty()) fail(ErrorCategory::kConfig, "channel name must not be empty");
    if (!names.insert(c.name).second) fail(ErrorCategory::kConfig, "duplicate channel name '" + c.name + "'");
    if (c.outbound == c.inbound) fail(ErrorCategory::kConfig, "channel '" + c.name + "' links an executor to itself");
  }
}

void require_type(const ChannelSpec& channel, CommType expected) {
  if (channel.type != expected) {
    fail(ErrorCategory::kProtocol, "channel '" + channel.name + "' is " + std::string(to_string(channel.type)) +
                                       ", operation needs " + std::string(to_string(expected)));
  }
}

std::vector<Bytes> broadcast(const ChannelSpec& channel, std::span<const std::byte> payload, std::size_t workers) {
  require_type(channel, CommType::kBroadcast);
  return std::vector<Bytes>(workers, Bytes(payload.begin(), payload.end()));
}

std::vector<std::size_t> scatter_counts(std::size_t groups, std::size_t workers) {
  std::vector<std::size_t> out(workers, workers ? groups / workers : 0);
  for (std::size_t w = 0; w < (workers ? groups % workers : 0); ++w) ++out[w];
  return out;
}

std::vector<std::vector<Sequence>> group_by_prompt(std::span<const Sequence> sequences) {
  std::vector<std::vector<Sequence>> out;
  std::map<std::uint64_t, std::size_t> slot;
  for (const auto& s : sequences) {
    auto [it, fresh] = slot.try_emplace(s.prompt_id, out.size());
    if (fresh) out.emplace_back();
    out[it->second].push_back(s);
  }
  return out;
}

// ---- sharding -----------------------------------------------------------------

std::vector<ByteRange> shard_ranges(std::uint64_t total_bytes, std::uint32_t parts, std::uint32_t align) {
  if (parts == 0) fail(ErrorCategory::kShard, "mp size must be >= 1");
  if (align == 0 || total_bytes % align != 0) fail(ErrorCategory::kShard, "table size is not a multiple of the alignment");
  const std::uint64_t units = total_bytes / align;
  std::vector<ByteRange> out(parts);
  std::uint64_t pos = 0;
  for (std::uint32_t i = 0; i < parts; ++i) {
    const std::uint64_t n = units / parts + (i < units % parts ? 1 : 0);
    out[i] = {pos * align, n * align};
    pos += n;
  }
  return out;
}

std::uint64_t ShardedModel::total_bytes() const {
  std::uint64_t n = 0;
  for (const auto& s : shards) n += s.data.size();
  return n;
}

ShardedModel shard_model(const PolicyParams& params, std::uint32_t mp) {
  const Bytes table = params.table_bytes();
  ShardedModel m;
  m.shape = params.shape();
  m.version = params.version();
  const auto ranges = shard_ranges(table.size(), mp);
  for (std::uint32_t i = 0; i < mp; ++i) {
    Shard s;
    s.index = i;
    s.offset = ranges[i].offset;
    s.data.assign(table.begin() + static_cast<std::ptrdiff_t>(ranges[i].offset),
                  table.begin() + static_cast<std::ptrdiff_t>(ranges[i].offset + ranges[i].length));
    m.shards.push_back(std::move(s));
  }
  return m;
}

PolicyParams assemble_model(const ShardedModel& model) {
  const std::uint64_t total = model.shape.rows() * model.shape.cols() * 8;
  Bytes table(total);
  std::vector<bool> seen(total, false);
  for (const auto& s : model.shards) {
    if (s.offset + s.data.size() > total) fail(ErrorCategory::kShard, "shard extends past the parameter table");
    for (std::size_t i = 0; i < s.data.size(); ++i) {
      if (seen[s.offset + i]) fail(ErrorCategory::kShard, "shards overlap at byte " + std::to_string(s.offset + i));
      seen[s.offset + i] = true;
      table[s.offset + i] = s.data[i];
    }
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) fail(ErrorCategory::kShard, "shards leave a gap");
  ByteReader r(table);
  std::vector<double> values(total / 8);
  for (auto& v : values) v = r.f64();
  return PolicyParams(model.shape, std::move(values), model.version);
}

ShardMap ShardMap::build(std::uint64_t total_bytes, std::uint32_t source_mp, std::uint32_t destination_mp) {
  ShardMap m;
  m.source_ranges = shard_ranges(total_bytes, source_mp);
  m.destination_ranges = shard_ranges(total_bytes, destination_mp);
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < m.source_ranges.size() && j < m.destination_ranges.size()) {
    const auto& s = m.source_ranges[i];
    const auto& d = m.destination_ranges[j];
    const std::uint64_t lo = std::max(s.offset, d.offset);
    const std::uint64_t hi = std::min(s.offset + s.length, d.offset + d.length);
    if (hi > lo) m.transfers.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), lo, hi - lo});
    if (s.offset + s.length <= d.offset + d.length) {
      ++i;
    } else {
      ++j;
    }
  }
  return m;
}

std::vector<std::uint64_t> ShardMap::bytes_per_destination() const {
  std::vector<std::uint64_t> out(destination_ranges.size(), 0);
  for (const auto& t : transfers) out[t.destination] += t.length;
  return out;
}

// ---- transfer-time models -------------------------------------------------------

DdmaModel DdmaModel::fit(double bytes_a, double time_a, double bytes_b, double time_b) {
  if (!(bytes_b > bytes_a && time_b > time_a)) fail(ErrorCategory::kConfig, "DDMA anchors must increase");
  const double per_byte = (time_b - time_a) / (bytes_b - bytes_a);
  const double latency = time_a - per_byte * bytes_a;
  if (!(latency >= 0)) fail(ErrorCategory::kConfig, "DDMA anchors imply a negative latency");
  return {1.0 / per_byte, latency};
}

DdmaModel DdmaModel::calibrated() { return fit(140e9 / 8, 1.15, 810e9 / 16, 2.31); }

double DdmaModel::transfer_time(std::span<const std::uint64_t> bytes_per_destination) const {
  if (!(bandwidth > 0)) fail(ErrorCategory::kConfig, "DDMA bandwidth must be > 0");
  std::uint64_t worst = 0;
  for (auto b : bytes_per_destination) worst = std::max(worst, b);
  return static_cast<double>(worst) / bandwidth;
}

double DdmaModel::time(std::span<const std::uint64_t> bytes_per_destination) const {
  return transfer_time(bytes_per_destination) + latency;
}

double DdmaModel::time_for(double model_bytes, std::uint32_t ranks) const {
  if (ranks == 0) fail(ErrorCategory::kShard, "rank count must be >= 1");
  return model_bytes / ranks / bandwidth + latency;
}

GatherSyncModel GatherSyncModel::fit(double alpha, double bytes_a, double time_a, double bytes_b, double time_b) {
  const double ra = time_a - alpha * bytes_a;
  const double rb = time_b - alpha * bytes_b;
  if (!(ra > 0 && rb > ra && bytes_b > bytes_a)) fail(ErrorCategory::kConfig, "gather anchors cannot be fitted");
  GatherSyncModel m;
  m.alpha = alpha;
  m.gamma = std::log(rb / ra) / std::log(bytes_b / bytes_a);
  m.beta = ra / std::pow(bytes_a, m.gamma);
  return m;
}

GatherSyncModel GatherSyncModel::calibrated() { return fit(1e-11, 14e9, 4.32, 140e9, 111.65); }

double GatherSyncModel::time(double model_bytes, std::uint32_t workers) const {
  if (!(model_bytes > 0) || workers == 0) fail(ErrorCategory::kDomain, "gather model needs positive bytes and workers");
  return alpha * model_bytes + beta * std::pow(model_bytes, gamma);
}

DdmaResult ddma_sync(const ChannelSpec& channel, const ShardedModel& trainer, const PolicyShape& generator_shape,
                     std::uint32_t generator_mp, const DdmaModel& model) {
  require_type(channel, CommType::kDdmaWeightsUpdate);
  if (!(trainer.shape == generator_shape)) {
    fail(ErrorCategory::kShard, "channel '" + channel.name + "': trainer and generator parameter shapes differ");
  }
  const std::uint64_t total = generator_shape.rows() * generator_shape.cols() * 8;
  if (trainer.total_bytes() != total) fail(ErrorCategory::kShard, "trainer shards do not cover the parameter table");
  const auto trainer_mp = static_cast<std::uint32_t>(trainer.shards.size());
  const auto map = ShardMap::build(total, trainer_mp, generator_mp);
  for (std::uint32_t i = 0; i < trainer_mp; ++i) {
    const auto& s = trainer.shards[i];
    if (s.index != i || s.offset != map.source_ranges[i].offset || s.data.size() != map.source_ranges[i].length) {
      fail(ErrorCategory::kShard, "trainer shard " + std::to_string(i) + " does not match the even layout");
    }
  }

  DdmaResult res;
  res.generator_model.shape = generator_shape;
  res.generator_model.version = trainer.version;
  for (std::uint32_t j = 0; j < generator_mp; ++j) {
    Shard d;
    d.index = j;
    d.offset = map.destination_ranges[j].offset;
    d.data.resize(map.destination_ranges[j].length);
    res.generator_model.shards.push_back(std::move(d));
  }
  for (const auto& t : map.transfers) {
    const auto& src = trainer.shards[t.source];
    auto& dst = res.generator_model.shards[t.destination];
    std::memcpy(dst.data.data() + (t.offset - dst.offset), src.data.data() + (t.offset - src.offset), t.length);
  }
  res.params = assemble_model(res.generator_model);
  res.bytes_per_destination = map.bytes_per_destination();
  res.transfer_time = model.transfer_time(res.bytes_per_destination);
  res.time = res.transfer_time + model.latency;
  return res;
}

// ---- frames ---------------------------------------------------------------------

Bytes encode_frame(const Frame& frame) {
  if (frame.payload.size() > kMaxFramePayload) fail(ErrorCategory::kData, "frame payload too large");
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(frame.payload.size()));
  w.u16(frame.channel_id);
  w.u8(static_cast<std::uint8_t>(frame.type));
  w.raw(frame.payload);
  return std::move(w).take();
}

namespace {

Frame decode_header(std::span<const std::byte> header, std::uint32_t& length) {
  ByteReader r(header);
  length = r.u32();
  Frame f;
  f.channel_id = r.u16();
  const auto type = r.u8();
  if (type > static_cast<std::uint8_t>(CommType::kDdmaWeightsUpdate)) {
    fail(ErrorCategory::kData, "frame has unknown communication type " + std::to_string(type));
  }
  if (length > kMaxFramePayload) fail(ErrorCategory::kData, "frame length " + std::to_string(length) + " too large");
  f.type = static_cast<CommType>(type);
  return f;
}

void write_all(int fd, const std::byte* data, std::size_t n) {
  while (n > 0) {
    const ssize_t k = ::write(fd, data, n);
    if (k < 0 && errno == EINTR) continue;
    if (k <= 0) fail(ErrorCategory::kIo, std::string("frame write failed: ") + std::strerror(errno));
    data += k;
    n -= static_cast<std::size_t>(k);
  }
}

// Returns bytes read; fewer than n only at EOF.
std::size_t read_all(int fd, std::byte* data, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t k = ::read(fd, data + got, n - got);
    if (k < 0 && errno == EINTR) continue;
    if (k < 0) fail(ErrorCategory::kIo, std::string("frame read failed: ") + std::strerror(errno));
    if (k == 0) break;
    got += static_cast<std::size_t>(k);
  }
  return got;
}

}  // namespace

void FrameDecoder::feed(std::span<const std::byte> bytes) {
  if (consumed_ > 0 && consumed_ == buffer_.size()) {
    buffer_.clear();
    consumed_ = 0;
  }
  buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

std::optional<Frame> FrameDecoder::next() {
  if (buffered() < kFrameHeaderBytes) return std::nullopt;
  std::uint32_t length = 0;
  Frame f = decode_header(std::span<const std::byte>(buffer_).subspan(consumed_, kFrameHeaderBytes), length);
  if (buffered() < kFrameHeaderBytes + length) return std::nullopt;
  const auto begin = buffer_.begin() + static_cast<std::ptrdiff_t>(consumed_ + kFrameHeaderBytes);
  f.payload.assign(begin, begin + length);
  consumed_ += kFrameHeaderBytes + length;
  return f;
}

void send_frame(int fd, const Frame& frame) {
  const Bytes bytes = encode_frame(frame);
  write_all(fd, bytes.data(), bytes.size());
}

std::optional<Frame> recv_frame(int fd) {
  std::byte header[kFrameHeaderBytes];
  const std::size_t got = read_all(fd, header, kFrameHeaderBytes);
  if (got == 0) return std::nullopt;
  if (got < kFrameHeaderBytes) fail(ErrorCategory::kIo, "stream ended inside a frame header");
  std::uint32_t length = 0;
  Frame f = decode_header(header, length);
  f.payload.resize(length);
  if (read_all(fd, f.payload.data(), length) < length) fail(ErrorCategory::kIo, "stream ended inside a frame payload");
  return f;
}

void write_sequence(ByteWriter& out, const Sequence& seq) {
  out.u64(seq.prompt_id);
  out.u32(seq.attempt);
  out.u32_array(seq.prompt);
  out.u32_array(seq.tokens);
  out.f64_array(seq.behavior_logprobs);
  out.u64(seq.behavior_version);
  out.u8(seq.complete ? 1 : 0);
}

Sequence read_sequence(ByteReader& in) {
  Sequence s;
  s.prompt_id = in.u64();
  s.attempt = in.u32();
  s.prompt = in.u32_array();
  s.tokens = in.u32_array();
  s.behavior_logprobs = in.f64_array();
  s.behavior_version = in.u64();
  const auto flag = in.u8();
  if (flag > 1) fail(ErrorCategory::kData, "bad completion flag in sequence record");
  s.complete = flag == 1;
  if (s.behavior_logprobs.size() != s.tokens.size()) fail(ErrorCategory::kData, "sequence record length mismatch");
  return s;
}

Bytes encode_sequences(std::span<const Sequence> sequences) {
  ByteWriter w;
  w.u64(sequences.size());
  for (const auto& s : sequences) write_sequence(w, s);
  return std::move(w).take();
}

std::vector<Sequence> decode_sequences(std::span<const std::byte> bytes) {
  ByteReader r(bytes);
  const auto n = r.u64();
  std::vector<Sequence> out;
  for (std::uint64_t i = 0; i < n; ++i) out.push_back(read_sequence(r));
  if (!r.done()) fail(ErrorCategory::kData, "trailing bytes after sequence list");
  return out;
}

}  // namespace asyncrl
