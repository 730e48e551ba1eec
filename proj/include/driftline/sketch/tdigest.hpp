#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "driftline/common.hpp"

namespace driftline::sketch {

/// Merging t-digest with the arcsine (k1) scale function. Centroids near the
/// tails stay small, which is what keeps extreme quantiles accurate.
class TDigest {
 public:
  struct Centroid {
    double mean = 0.0;
    double weight = 0.0;
    friend bool operator==(const Centroid&, const Centroid&) = default;
  };

  explicit TDigest(double compression = 100.0);

  void add(double x, double weight = 1.0);
  /// Folds the pending buffer into the centroid list.
  void compress();

  /// Interpolated quantile; q = 0 gives min, q = 1 gives max. Throws
  /// kEmptySummary on an empty digest, kDomain for q outside [0, 1].
  double quantile(double q) const;
  /// Fraction of weight at or below x.
  double cdf(double x) const;

  void merge(const TDigest& other);

  double compression() const { return compression_; }
  double total_weight() const { return total_weight_; }
  bool empty() const { return total_weight_ <= 0.0; }
  double min() const { return min_; }
  double max() const { return max_; }
  /// Compressed centroids (a compressed copy when the buffer is pending).
  std::vector<Centroid> centroids() const;
  std::size_t memory_bytes() const { return (centroids_.size() + buffer_.size()) * sizeof(Centroid); }

  /// mean,weight rows.
  std::string to_csv() const;

  Bytes serialize() const;
  static TDigest deserialize(std::span<const std::uint8_t> data);

 private:
  double scale(double q) const;
  static std::vector<Centroid> merge_sorted(std::vector<Centroid> all, double total, double compression);

  double compression_;
  std::vector<Centroid> centroids_;
  std::vector<Centroid> buffer_;
  double total_weight_ = 0.0;
  double min_ = 0.0;
  double max_ = 0.0;
};

}  // namespace driftline::sketch
