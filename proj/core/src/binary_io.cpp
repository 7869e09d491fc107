#include "asyncrl/binary_io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "asyncrl/error.hpp"

namespace asyncrl {

void ByteWriter::tag(std::string_view four_cc) {
  for (std::size_t i = 0; i < 4; ++i) u8(i < four_cc.size() ? static_cast<std::uint8_t>(four_cc[i]) : 0);
}

std::uint64_t ByteReader::get(int width) {
  if (remaining() < static_cast<std::size_t>(width)) {
    fail(ErrorCategory::kData, "truncated input at byte " + std::to_string(pos_));
  }
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) {
    v |= static_cast<std::uint64_t>(std::to_integer<std::uint8_t>(in_[pos_ + i])) << (8 * i);
  }
  pos_ += width;
  return v;
}

std::span<const std::byte> ByteReader::raw(std::size_t n) {
  if (remaining() < n) fail(ErrorCategory::kData, "truncated input at byte " + std::to_string(pos_));
  auto out = in_.subspan(pos_, n);
  pos_ += n;
  return out;
}

void ByteReader::expect_tag(std::string_view four_cc) {
  auto got = raw(4);
  for (std::size_t i = 0; i < 4; ++i) {
    auto want = i < four_cc.size() ? static_cast<std::uint8_t>(four_cc[i]) : 0;
    if (std::to_integer<std::uint8_t>(got[i]) != want) {
      fail(ErrorCategory::kData, "bad magic, expected '" + std::string(four_cc) + "'");
    }
  }
}

Bytes ByteReader::blob() {
  auto n = u64();
  auto span = raw(n);
  return Bytes(span.begin(), span.end());
}

std::vector<double> ByteReader::f64_array() {
  auto n = u64();
  if (n > remaining() / 8) fail(ErrorCategory::kData, "array length exceeds input");
  std::vector<double> out(n);
  for (auto& v : out) v = f64();
  return out;
}

std::vector<std::uint32_t> ByteReader::u32_array() {
  auto n = u64();
  if (n > remaining() / 4) fail(ErrorCategory::kData, "array length exceeds input");
  std::vector<std::uint32_t> out(n);
  for (auto& v : out) v = u32();
  return out;
}

std::uint64_t fnv1a64(std::span<const std::byte> bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto b : bytes) {
    h ^= std::to_integer<std::uint8_t>(b);
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t fnv1a64(std::string_view text) noexcept {
  return fnv1a64(std::as_bytes(std::span(text.data(), text.size())));
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCategory::kIo, "cannot open '" + path + "'");
  std::vector<char> chars((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Bytes out(chars.size());
  for (std::size_t i = 0; i < chars.size(); ++i) out[i] = static_cast<std::byte>(chars[i]);
  return out;
}

void write_file_atomic(const std::string& path, std::span<const std::byte> bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCategory::kIo, "cannot write '" + tmp + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCategory::kIo, "short write to '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCategory::kIo, "rename '" + tmp + "' -> '" + path + "': " + ec.message());
}

}  // namespace asyncrl
