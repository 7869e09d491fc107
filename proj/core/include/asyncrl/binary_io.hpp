#pragma once

// Little-endian byte encoding shared by policy snapshots, checkpoints and
// the multi-process frame format. Encoding is explicit per byte so the
// layout does not depend on host endianness.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace asyncrl {

using Bytes = std::vector<std::byte>;

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<std::byte>(v)); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void raw(std::span<const std::byte> bytes) { out_.insert(out_.end(), bytes.begin(), bytes.end()); }
  void tag(std::string_view four_cc);

  /// u64 length prefix followed by the bytes.
  void blob(std::span<const std::byte> bytes) {
    u64(bytes.size());
    raw(bytes);
  }

  void f64_array(std::span<const double> values) {
    u64(values.size());
    for (double v : values) f64(v);
  }

  void u32_array(std::span<const std::uint32_t> values) {
    u64(values.size());
    for (auto v : values) u32(v);
  }

  const Bytes& bytes() const& { return out_; }
  Bytes take() && { return std::move(out_); }

 private:
  void put(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) out_.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xffu));
  }

  Bytes out_;
};

/// Bounds-checked reader; truncated input raises a kData error.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::byte> in) : in_(in) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::span<const std::byte> raw(std::size_t n);
  void expect_tag(std::string_view four_cc);
  Bytes blob();
  std::vector<double> f64_array();
  std::vector<std::uint32_t> u32_array();

  std::size_t remaining() const noexcept { return in_.size() - pos_; }
  bool done() const noexcept { return pos_ == in_.size(); }

 private:
  std::uint64_t get(int width);

  std::span<const std::byte> in_;
  std::size_t pos_ = 0;
};

/// FNV-1a 64-bit; stable across platforms, used for parameter and payload hashes.
std::uint64_t fnv1a64(std::span<const std::byte> bytes) noexcept;
std::uint64_t fnv1a64(std::string_view text) noexcept;
std::string hex64(std::uint64_t value);

/// Reads a whole file; kIo on failure.
Bytes read_file(const std::string& path);

/// Writes to `path + ".tmp"` then renames over `path`, so readers never see a
/// partially written file.
void write_file_atomic(const std::string& path, std::span<const std::byte> bytes);

}  // namespace asyncrl
