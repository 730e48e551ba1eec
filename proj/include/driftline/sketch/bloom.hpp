#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "driftline/common.hpp"

namespace driftline::sketch {

enum class Membership { kDefinitelyAbsent, kMaybePresent };

struct BloomPlan {
  std::uint32_t k = 1;
  double fpr_estimate = 0.0;
};

/// Optimal hash count k = round((m/n) ln 2), clamped to [1, 64], and the
/// approximate false-positive rate (1 - e^{-kn/m})^k at that k.
BloomPlan bloom_plan(std::uint64_t n_expected, std::uint64_t m_bits);

/// False-positive rate for an explicit (n, m, k).
double bloom_fpr(std::uint64_t n, std::uint64_t m_bits, std::uint32_t k);

class BloomFilter {
 public:
  BloomFilter(std::uint64_t m_bits, std::uint32_t k, std::uint64_t seed);
  /// Sized with bloom_plan for `n_expected` items at `bits_per_item`.
  static BloomFilter for_capacity(std::uint64_t n_expected, double bits_per_item, std::uint64_t seed);

  void add(std::string_view item);
  Membership contains(std::string_view item) const;

  /// Bitwise OR. Parameters and seeds must match.
  void merge(const BloomFilter& other);
  bool compatible(const BloomFilter& other) const;

  std::uint64_t bits() const { return m_; }
  std::uint32_t hash_count() const { return static_cast<std::uint32_t>(seeds_.size()); }
  std::uint64_t inserted() const { return inserted_; }
  std::uint64_t popcount() const;
  std::size_t memory_bytes() const { return words_.size() * sizeof(std::uint64_t); }

  Bytes serialize() const;
  static BloomFilter deserialize(std::span<const std::uint8_t> data);

  friend bool operator==(const BloomFilter&, const BloomFilter&) = default;

 private:
  BloomFilter() = default;
  std::uint64_t m_ = 0;
  std::vector<std::uint64_t> seeds_;
  std::vector<std::uint64_t> words_;
  std::uint64_t inserted_ = 0;
};

}  // namespace driftline::sketch
