#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "driftline/common.hpp"

namespace driftline::sketch {

/// Sparse sign random projection R^D -> R^d. Entries are +1, 0, -1 with
/// probabilities 1/6, 2/3, 1/6, scaled by sqrt(3/d). The matrix is never
/// stored: entry (row, col) is a pure function of (seed, row, col).
class RandomProjection {
 public:
  RandomProjection(std::uint32_t input_dim, std::uint32_t output_dim, std::uint64_t seed);

  std::uint32_t input_dim() const { return input_dim_; }
  std::uint32_t output_dim() const { return output_dim_; }
  std::uint64_t seed() const { return seed_; }

  /// Unscaled entry in {-1, 0, +1}.
  int entry(std::uint32_t row, std::uint32_t col) const;

  std::vector<double> project(std::span<const double> x, ExecPolicy policy = ExecPolicy::kSerial) const;

  Bytes serialize() const;
  static RandomProjection deserialize(std::span<const std::uint8_t> data);

  friend bool operator==(const RandomProjection&, const RandomProjection&) = default;

 private:
  std::uint32_t input_dim_;
  std::uint32_t output_dim_;
  std::uint64_t seed_;
};

}  // namespace driftline::sketch
