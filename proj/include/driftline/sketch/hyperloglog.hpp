#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "driftline/common.hpp"

namespace driftline::sketch {

/// Relative standard error of a HyperLogLog with m registers: 1.04 / sqrt(m).
double hll_standard_error(std::uint32_t precision);

/// Register count that reaches `target_error` exactly, (1.04 / target)^2,
/// before rounding to a power of two.
double hll_registers_for(double target_error);

/// Precision p whose 2^p is nearest (in log space) to hll_registers_for().
std::uint32_t hll_precision_for(double target_error);

/// Memory at `bits_per_register` for the unrounded register count.
double hll_memory_bytes(double target_error, double bits_per_register);

/// HyperLogLog over 64-bit hashes. Registers keep the maximum rank (leading
/// zeros + 1) in a 6-bit range; storage is one byte per register in memory
/// and 6 packed bits per register on the wire.
class HyperLogLog {
 public:
  explicit HyperLogLog(std::uint32_t precision = 13, std::uint64_t seed = 0x5eedu);

  void add(std::string_view item);
  /// Adds a pre-computed 64-bit hash.
  void add_hash(std::uint64_t h);

  /// Bias-corrected harmonic-mean estimate with linear counting when the raw
  /// estimate is below 2.5 m and some register is still zero.
  double estimate() const;
  std::uint64_t cardinality() const;

  void merge(const HyperLogLog& other);
  bool compatible(const HyperLogLog& other) const { return p_ == other.p_ && seed_ == other.seed_; }

  std::uint32_t precision() const { return p_; }
  std::uint32_t register_count() const { return 1u << p_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<std::uint8_t>& registers() const { return registers_; }
  std::size_t memory_bytes() const { return registers_.size(); }

  Bytes serialize() const;
  static HyperLogLog deserialize(std::span<const std::uint8_t> data);

  friend bool operator==(const HyperLogLog&, const HyperLogLog&) = default;

 private:
  std::uint32_t p_;
  std::uint64_t seed_;
  std::vector<std::uint8_t> registers_;
};

}  // namespace driftline::sketch
