#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <utility>

namespace asyncrl {

/// Blocking FIFO with a fixed capacity. push() blocks while full, pop()
/// while empty; both give up after `timeout` or once the queue is closed.
template <class T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  /// false on timeout or when closed.
  bool push(T value, std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    if (!not_full_.wait_for(lock, timeout, [&] { return closed_ || items_.size() < capacity_; })) return false;
    if (closed_) return false;
    items_.push_back(std::move(value));
    not_empty_.notify_one();
    return true;
  }

  /// nullopt on timeout, or when closed and empty.
  std::optional<T> pop(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    if (!not_empty_.wait_for(lock, timeout, [&] { return closed_ || !items_.empty(); })) return std::nullopt;
    if (items_.empty()) return std::nullopt;
    T v = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return v;
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_full_.notify_all();
    not_empty_.notify_all();
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return items_.size();
  }

  std::size_t capacity() const noexcept { return capacity_; }

 private:
  const std::size_t capacity_;
  mutable std::mutex mu_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
  std::deque<T> items_;
  bool closed_ = false;
};

/// Latest-value slot with a monotone version. Readers can wait for a minimum
/// version.
template <class T>
class VersionedMailbox {
 public:
  void publish(std::uint64_t version, T value) {
    std::lock_guard lock(mu_);
    if (has_value_ && version < version_) return;
    version_ = version;
    value_ = std::move(value);
    has_value_ = true;
    cv_.notify_all();
  }

  /// Latest (version, value) once version >= min_version; nullopt on timeout or close.
  std::optional<std::pair<std::uint64_t, T>> wait_for(std::uint64_t min_version, std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    if (!cv_.wait_for(lock, timeout, [&] { return closed_ || (has_value_ && version_ >= min_version); })) {
      return std::nullopt;
    }
    if (!has_value_ || version_ < min_version) return std::nullopt;
    return std::make_pair(version_, value_);
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    cv_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::uint64_t version_ = 0;
  T value_{};
  bool has_value_ = false;
  bool closed_ = false;
};

}  // namespace asyncrl
