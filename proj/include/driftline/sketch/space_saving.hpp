#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "driftline/common.hpp"

namespace driftline::sketch {

struct HeavyHitter {
  std::string item;
  std::uint64_t count = 0;
  std::uint64_t error = 0;
  /// True when the item is certainly among the top-k: count - error is at
  /// least the (k+1)-th count.
  bool guaranteed = false;
};

/// Space-Saving (stream-summary) over at most `capacity` counters. A new item
/// evicts the current minimum and inherits its count as overestimation error,
/// so every tracked estimate is within N / capacity of the truth.
class SpaceSaving {
 public:
  struct Counter {
    std::string item;
    std::uint64_t count = 0;
    std::uint64_t error = 0;
    friend bool operator==(const Counter&, const Counter&) = default;
  };

  explicit SpaceSaving(std::uint32_t capacity);

  void add(std::string_view item, std::uint64_t weight = 1);

  /// Top-k by count (ties by item). Throws kDomain if k is 0 or exceeds the
  /// capacity.
  std::vector<HeavyHitter> heavy_hitters(std::uint32_t k) const;

  /// Estimated count, or 0 if the item is not tracked.
  std::uint64_t estimate(std::string_view item) const;
  bool tracked(std::string_view item) const;

  /// Counter union: an item missing from a full side is charged that side's
  /// minimum as both count and error. The result keeps the top `capacity`.
  void merge(const SpaceSaving& other);

  std::uint32_t capacity() const { return capacity_; }
  std::uint64_t total() const { return total_; }
  std::size_t size() const { return heap_.size(); }
  std::uint64_t min_count() const { return heap_.size() < capacity_ || heap_.empty() ? 0 : heap_.front().count; }
  std::vector<Counter> counters() const { return heap_; }
  std::size_t memory_bytes() const;

  /// item,count,error rows sorted by count descending.
  std::string to_csv() const;

  Bytes serialize() const;
  static SpaceSaving deserialize(std::span<const std::uint8_t> data);

  friend bool operator==(const SpaceSaving& a, const SpaceSaving& b) {
    return a.capacity_ == b.capacity_ && a.total_ == b.total_ && a.heap_ == b.heap_;
  }

 private:
  bool less(std::size_t a, std::size_t b) const;
  void sift_up(std::size_t i);
  void sift_down(std::size_t i);
  void swap_nodes(std::size_t a, std::size_t b);
  void rebuild_index();

  std::uint32_t capacity_;
  std::uint64_t total_ = 0;
  bool saturated_ = false;
  std::vector<Counter> heap_;  // min-heap on (count, item)
  std::unordered_map<std::string, std::size_t> pos_;
};

}  // namespace driftline::sketch
