#include "driftline/sketch/combined.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "driftline/sketch/format.hpp"

namespace driftline::sketch {

SketchPreset SketchPreset::four_percent(std::uint64_t expected_distinct) {
  SketchPreset p;
  p.expected_distinct = expected_distinct;
  p.bloom_bits_per_item = 5.4;
  p.cms_eps = 0.04;
  p.cms_delta = 0.04;
  p.ss_capacity = 25;
  p.hll_precision = 10;  // 1.04 / sqrt(1024) = 3.25%
  return p;
}

namespace {
std::vector<std::uint64_t> preset_seeds(const SketchPreset& p) { return derive_seeds(p.seed, 3); }
}  // namespace

CombinedSketch::CombinedSketch(const SketchPreset& preset)
    : bloom_(BloomFilter::for_capacity(preset.expected_distinct, preset.bloom_bits_per_item, preset_seeds(preset)[0])),
      cms_(CountMinSketch::for_accuracy(preset.cms_eps, preset.cms_delta, preset_seeds(preset)[1])),
      ss_(preset.ss_capacity),
      hll_(preset.hll_precision, preset_seeds(preset)[2]) {}

void CombinedSketch::add(std::string_view item) {
  bloom_.add(item);
  cms_.add(item);
  ss_.add(item);
  hll_.add(item);
}

void CombinedSketch::merge(const CombinedSketch& other) {
  bloom_.merge(other.bloom_);
  cms_.merge(other.cms_);
  ss_.merge(other.ss_);
  hll_.merge(other.hll_);
}

Bytes CombinedSketch::serialize() const {
  ByteWriter body;
  for (const auto& part : {bloom_.serialize(), cms_.serialize(), ss_.serialize(), hll_.serialize()}) {
    body.raw(part);
  }
  return seal(kSketchMagic, static_cast<std::uint16_t>(Kind::kCombined), {}, body.take());
}

CombinedSketch CombinedSketch::deserialize(std::span<const std::uint8_t> data) {
  auto env = open_kind(Kind::kCombined, data);
  auto rest = env.payload;
  auto next = [&rest]() {
    auto e = open(kSketchMagic, rest);
    auto part = rest.subspan(0, e.total_size);
    rest = rest.subspan(e.total_size);
    return part;
  };
  auto b = BloomFilter::deserialize(next());
  auto c = CountMinSketch::deserialize(next());
  auto s = SpaceSaving::deserialize(next());
  auto h = HyperLogLog::deserialize(next());
  if (!rest.empty()) throw Error(Errc::kData, "trailing bytes after combined sketch");
  return CombinedSketch(std::move(b), std::move(c), std::move(s), std::move(h));
}

CombinedSketch ingest_partitioned(std::span<const std::uint32_t> items, const SketchPreset& preset,
                                  std::size_t partitions, ExecPolicy policy) {
  partitions = std::max<std::size_t>(1, partitions);
  std::vector<CombinedSketch> parts(partitions, CombinedSketch(preset));
  const std::size_t n = items.size();
  const auto chunk = [&](std::int64_t p) {
    const std::size_t lo = n * static_cast<std::size_t>(p) / partitions;
    const std::size_t hi = n * static_cast<std::size_t>(p + 1) / partitions;
    for (std::size_t i = lo; i < hi; ++i) parts[p].add(items[i]);
  };
  const auto count = static_cast<std::int64_t>(partitions);
  if (policy == ExecPolicy::kParallel) {
#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t p = 0; p < count; ++p) chunk(p);
  } else {
    for (std::int64_t p = 0; p < count; ++p) chunk(p);
  }
  for (std::size_t p = 1; p < partitions; ++p) parts[0].merge(parts[p]);
  return std::move(parts[0]);
}

}  // namespace driftline::sketch
