#pragma once

#include <cstdint>
#include <span>
#include <string_view>

#include "driftline/sketch/bloom.hpp"
#include "driftline/sketch/count_min.hpp"
#include "driftline/sketch/hyperloglog.hpp"
#include "driftline/sketch/space_saving.hpp"

namespace driftline::sketch {

/// Parameters for a bank of sketches computed side by side over one stream.
struct SketchPreset {
  std::uint64_t expected_distinct = 1'000'000;
  double bloom_bits_per_item = 5.4;
  double cms_eps = 0.04;
  double cms_delta = 0.04;
  std::uint32_t ss_capacity = 25;
  std::uint32_t hll_precision = 10;
  std::uint64_t seed = 0xD1F7;

  /// Multi-sketch preset at a nominal 4% error rate: count-min eps = delta =
  /// 0.04, 25 Space-Saving counters (N/c = 4% of N), HyperLogLog at 1.04/sqrt(m)
  /// <= 4%. The Bloom filter gets 5.4 bits per expected distinct item
  /// (~7.5% FPR), since 4% would need 6.7 bits per item on its own.
  static SketchPreset four_percent(std::uint64_t expected_distinct);
};

/// Bloom filter + count-min + Space-Saving + HyperLogLog over the same items.
class CombinedSketch {
 public:
  explicit CombinedSketch(const SketchPreset& preset);

  void add(std::string_view item);
  void add(std::uint32_t item) { add(int_key(item)); }

  /// Exact for Bloom, count-min and HyperLogLog; bounded-error for
  /// Space-Saving.
  void merge(const CombinedSketch& other);

  const BloomFilter& bloom() const { return bloom_; }
  const CountMinSketch& count_min() const { return cms_; }
  const SpaceSaving& space_saving() const { return ss_; }
  const HyperLogLog& hll() const { return hll_; }

  Bytes serialize() const;
  static CombinedSketch deserialize(std::span<const std::uint8_t> data);

 private:
  CombinedSketch(BloomFilter b, CountMinSketch c, SpaceSaving s, HyperLogLog h)
      : bloom_(std::move(b)), cms_(std::move(c)), ss_(std::move(s)), hll_(std::move(h)) {}
  BloomFilter bloom_;
  CountMinSketch cms_;
  SpaceSaving ss_;
  HyperLogLog hll_;
};

/// Builds a CombinedSketch over `items`. The stream is cut into `partitions`
/// contiguous chunks that are sketched independently and merged in chunk
/// order, so the result does not depend on the thread count. kSerial runs the
/// chunks one after another; kParallel runs them under OpenMP.
CombinedSketch ingest_partitioned(std::span<const std::uint32_t> items, const SketchPreset& preset,
                                  std::size_t partitions, ExecPolicy policy);

}  // namespace driftline::sketch
