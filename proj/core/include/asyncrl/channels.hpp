#pragma once

// Directed links between executors. Data channels move sequences or scored
// groups with BROADCAST / SCATTER / GATHER semantics; the weights channel
// copies sharded parameters from trainer ranks to generator ranks and reports
// a simulated transfer time.
//
// Wire frame (multi-process transport), little-endian:
//   0  4  u32 payload length n
//   4  2  u16 channel id
//   6  1  u8  communication type (CommType value)
//   7  n  payload

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "asyncrl/binary_io.hpp"
#include "asyncrl/error.hpp"
#include "asyncrl/policy.hpp"

namespace asyncrl {

enum class CommType : std::uint8_t { kBroadcast = 0, kScatter = 1, kGather = 2, kDdmaWeightsUpdate = 3 };

std::string_view to_string(CommType type) noexcept;
CommType comm_type_from_string(std::string_view name);

struct ChannelSpec {
  std::string name;
  std::string outbound;
  std::string inbound;
  CommType type = CommType::kBroadcast;
  /// SCATTER only: permit empty chunks when there are fewer groups than workers.
  bool allow_empty = false;
};

/// Endpoints distinct and names unique; kConfig otherwise.
void validate_channels(std::span<const ChannelSpec> channels);

// ---- data channels ------------------------------------------------------------

std::vector<Bytes> broadcast(const ChannelSpec& channel, std::span<const std::byte> payload, std::size_t workers);

void require_type(const ChannelSpec& channel, CommType expected);

/// Chunk sizes for `groups` groups over `workers` workers: contiguous, the
/// first (groups mod workers) chunks one larger.
std::vector<std::size_t> scatter_counts(std::size_t groups, std::size_t workers);

template <class Group>
std::vector<std::vector<Group>> scatter(const ChannelSpec& channel, std::span<const Group> groups, std::size_t workers) {
  require_type(channel, CommType::kScatter);
  if (workers == 0) fail(ErrorCategory::kProtocol, "scatter on '" + channel.name + "' to zero workers");
  if (groups.size() < workers && !channel.allow_empty) {
    fail(ErrorCategory::kProtocol, "scatter on '" + channel.name + "': " + std::to_string(groups.size()) +
                                       " groups for " + std::to_string(workers) + " workers");
  }
  std::vector<std::vector<Group>> out(workers);
  std::size_t pos = 0;
  const auto counts = scatter_counts(groups.size(), workers);
  for (std::size_t w = 0; w < workers; ++w) {
    out[w].assign(groups.begin() + pos, groups.begin() + pos + counts[w]);
    pos += counts[w];
  }
  return out;
}

/// Concatenation ordered by outbound worker index. A missing contribution is
/// a protocol error.
template <class Item>
std::vector<Item> gather(const ChannelSpec& channel, std::span<const std::optional<std::vector<Item>>> per_worker) {
  require_type(channel, CommType::kGather);
  std::vector<Item> out;
  for (std::size_t w = 0; w < per_worker.size(); ++w) {
    if (!per_worker[w]) {
      fail(ErrorCategory::kProtocol, "gather on '" + channel.name + "': worker " + std::to_string(w) + " sent nothing");
    }
    out.insert(out.end(), per_worker[w]->begin(), per_worker[w]->end());
  }
  return out;
}

/// Groups sequences by prompt id, in order of first appearance.
std::vector<std::vector<Sequence>> group_by_prompt(std::span<const Sequence> sequences);

// ---- sharding -----------------------------------------------------------------

struct ByteRange {
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
  bool operator==(const ByteRange&) const = default;
};

/// Contiguous split of `total_bytes` into `parts` ranges aligned to `align`
/// bytes; earlier ranges take the remainder. kShard when parts == 0 or the
/// size is not a multiple of `align`.
std::vector<ByteRange> shard_ranges(std::uint64_t total_bytes, std::uint32_t parts, std::uint32_t align = 8);

struct Shard {
  std::uint32_t index = 0;
  std::uint64_t offset = 0;
  Bytes data;
};

/// A parameter table split over the ranks of one model instance.
struct ShardedModel {
  PolicyShape shape;
  std::uint64_t version = 0;
  std::vector<Shard> shards;

  std::uint64_t total_bytes() const;
};

ShardedModel shard_model(const PolicyParams& params, std::uint32_t mp);
/// Reassembles the table; kShard when shards overlap, leave gaps or disagree with the shape.
PolicyParams assemble_model(const ShardedModel& model);

struct ShardTransfer {
  std::uint32_t source = 0;
  std::uint32_t destination = 0;
  std::uint64_t offset = 0;  // absolute byte offset in the table
  std::uint64_t length = 0;
};

/// Byte-range intersection of the two layouts: every byte appears in exactly one transfer.
struct ShardMap {
  std::vector<ByteRange> source_ranges;
  std::vector<ByteRange> destination_ranges;
  std::vector<ShardTransfer> transfers;

  static ShardMap build(std::uint64_t total_bytes, std::uint32_t source_mp, std::uint32_t destination_mp);
  std::vector<std::uint64_t> bytes_per_destination() const;
};

// ---- transfer-time models -------------------------------------------------------

/// Fully distributed direct transfer: every destination rank pulls its bytes
/// over its own link, so the time is the slowest rank's, not the sum.
struct DdmaModel {
  double bandwidth = 0;  // bytes per time unit per link
  double latency = 0;    // fixed per sync

  /// Two-point fit through (bytes per rank, time) anchors.
  static DdmaModel fit(double bytes_a, double time_a, double bytes_b, double time_b);
  /// Anchored at 140e9 B over 8 ranks -> 1.15 and 810e9 B over 16 ranks -> 2.31.
  static DdmaModel calibrated();

  double transfer_time(std::span<const std::uint64_t> bytes_per_destination) const;
  double time(std::span<const std::uint64_t> bytes_per_destination) const;
  /// Even split of `model_bytes` over `ranks`.
  double time_for(double model_bytes, std::uint32_t ranks) const;
};

/// Comparator for designs that aggregate the full model on one host before
/// redistribution: alpha * bytes + beta * bytes^gamma, gamma > 1. Independent
/// of the worker count because the aggregation hop carries every byte.
struct GatherSyncModel {
  double alpha = 0;
  double beta = 0;
  double gamma = 1;

  /// Fixes alpha and fits beta, gamma through two anchors.
  static GatherSyncModel fit(double alpha, double bytes_a, double time_a, double bytes_b, double time_b);
  /// alpha = 1e-11, anchored at 14e9 B -> 4.32 and 140e9 B -> 111.65.
  static GatherSyncModel calibrated();

  double time(double model_bytes, std::uint32_t workers = 1) const;
};

struct DdmaResult {
  ShardedModel generator_model;
  PolicyParams params;
  std::vector<std::uint64_t> bytes_per_destination;
  double transfer_time = 0;
  double time = 0;
};

/// Copies `trainer` into a layout of `generator_mp` ranks. kProtocol on a
/// non-weights channel, kShard when the generator expects another shape.
DdmaResult ddma_sync(const ChannelSpec& channel, const ShardedModel& trainer, const PolicyShape& generator_shape,
                     std::uint32_t generator_mp, const DdmaModel& model);

// ---- frames ---------------------------------------------------------------------

inline constexpr std::uint32_t kMaxFramePayload = 1u << 30;
inline constexpr std::size_t kFrameHeaderBytes = 7;

struct Frame {
  std::uint16_t channel_id = 0;
  CommType type = CommType::kBroadcast;
  Bytes payload;
  bool operator==(const Frame&) const = default;
};

Bytes encode_frame(const Frame& frame);

/// Incremental decoder for a byte stream carrying back-to-back frames.
class FrameDecoder {
 public:
  void feed(std::span<const std::byte> bytes);
  std::optional<Frame> next();
  std::size_t buffered() const noexcept { return buffer_.size() - consumed_; }

 private:
  Bytes buffer_;
  std::size_t consumed_ = 0;
};

/// Blocking frame I/O on a stream socket or pipe. kIo on a short read/write,
/// kData on a malformed header.
void send_frame(int fd, const Frame& frame);
std::optional<Frame> recv_frame(int fd);  // nullopt on clean EOF before a header

// Payload codecs for frames and checkpoints.
void write_sequence(ByteWriter& out, const Sequence& seq);
Sequence read_sequence(ByteReader& in);
Bytes encode_sequences(std::span<const Sequence> sequences);
std::vector<Sequence> decode_sequences(std::span<const std::byte> bytes);

}  // namespace asyncrl
