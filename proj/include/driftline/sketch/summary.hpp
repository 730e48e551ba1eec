#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>

#include "driftline/sketch/bloom.hpp"
#include "driftline/sketch/count_min.hpp"
#include "driftline/sketch/hyperloglog.hpp"
#include "driftline/sketch/reservoir.hpp"
#include "driftline/sketch/space_saving.hpp"
#include "driftline/sketch/tdigest.hpp"

namespace driftline::sketch {

using RecordReservoir = DampedReservoir<std::string>;

/// Runtime-typed handle over the sketch family, for code that receives
/// summaries without knowing their kind (deserialized blobs, config-driven
/// sketch banks).
using Summary = std::variant<BloomFilter, CountMinSketch, DyadicCountMin, HyperLogLog, SpaceSaving, TDigest,
                             RecordReservoir>;

struct WeightedBytes {
  std::string_view bytes;
  std::uint64_t count = 1;
};
struct WeightedValue {
  double value = 0.0;
  double weight = 1.0;
};
struct IntegerItem {
  std::uint64_t value = 0;
  std::uint64_t count = 1;
};
struct RecordItem {
  std::string record;
};

using Item = std::variant<std::string_view, WeightedBytes, double, WeightedValue, IntegerItem, RecordItem>;

const char* summary_kind(const Summary& s);

/// Applies one item. Throws kDomain when the item type does not fit the
/// summary and kSaturation when a counter saturated on this update (the
/// saturated state is kept).
void ingest(Summary& summary, const Item& item);

/// Returns the merge of two summaries of the same kind and parameters.
/// Throws kIncompatible on kind/parameter mismatch and kUnsupported for
/// reservoirs.
Summary merge(const Summary& a, const Summary& b);

Bytes serialize(const Summary& s);
/// Reads any sketch kind back; reservoirs have no binary form.
Summary deserialize(std::span<const std::uint8_t> data);

}  // namespace driftline::sketch
