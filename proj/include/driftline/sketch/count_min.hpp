#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "driftline/common.hpp"

namespace driftline::sketch {

/// Count-min sketch: d rows of w saturating 64-bit counters.
///
/// Point estimates never undercount. With w = ceil(e/eps) and
/// d = ceil(ln(1/delta)), an estimate exceeds the true count by more than
/// eps * total with probability at most delta.
class CountMinSketch {
 public:
  CountMinSketch(std::uint32_t width, std::uint32_t depth, std::uint64_t seed);
  static CountMinSketch for_accuracy(double eps, double delta, std::uint64_t seed);

  /// Adds `count` occurrences. Counters saturate instead of wrapping; check
  /// saturated() afterwards.
  void add(std::string_view item, std::uint64_t count = 1);
  std::uint64_t estimate(std::string_view item) const;

  /// Min over rows of the row-wise dot product; never below the exact
  /// sum_x f_a(x) f_b(x).
  std::uint64_t inner_product(const CountMinSketch& other) const;

  void merge(const CountMinSketch& other);
  bool compatible(const CountMinSketch& other) const;

  std::uint32_t width() const { return width_; }
  std::uint32_t depth() const { return static_cast<std::uint32_t>(seeds_.size()); }
  std::uint64_t total() const { return total_; }
  bool saturated() const { return saturated_; }
  std::uint64_t counter(std::uint32_t row, std::uint32_t col) const { return grid_[row * width_ + col]; }
  std::size_t memory_bytes() const { return grid_.size() * sizeof(std::uint64_t); }

  Bytes serialize() const;
  static CountMinSketch deserialize(std::span<const std::uint8_t> data);

  friend bool operator==(const CountMinSketch&, const CountMinSketch&) = default;

 private:
  CountMinSketch() = default;
  std::uint32_t width_ = 0;
  std::vector<std::uint64_t> seeds_;
  std::vector<std::uint64_t> grid_;
  std::uint64_t total_ = 0;
  bool saturated_ = false;
};

/// Array of count-min sketches over an integer universe [0, U). Level j
/// counts x under key floor(x / 2^j), so any range splits into at most
/// 2 log2(U) dyadic blocks.
class DyadicCountMin {
 public:
  DyadicCountMin(std::uint64_t universe, std::uint32_t width, std::uint32_t depth, std::uint64_t seed);

  void add(std::uint64_t x, std::uint64_t count = 1);
  /// Estimated number of items in [lo, hi]; never an undercount.
  std::uint64_t range(std::uint64_t lo, std::uint64_t hi) const;
  std::uint64_t point(std::uint64_t x) const;

  void merge(const DyadicCountMin& other);

  std::uint64_t universe() const { return universe_; }
  std::size_t levels() const { return levels_.size(); }
  const CountMinSketch& level(std::size_t j) const { return levels_[j]; }
  std::uint64_t total() const { return levels_.front().total(); }

  Bytes serialize() const;
  static DyadicCountMin deserialize(std::span<const std::uint8_t> data);

  friend bool operator==(const DyadicCountMin&, const DyadicCountMin&) = default;

 private:
  DyadicCountMin() = default;
  std::uint64_t universe_ = 0;
  std::vector<CountMinSketch> levels_;
};

}  // namespace driftline::sketch
