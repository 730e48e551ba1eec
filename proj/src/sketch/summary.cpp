#include "driftline/sketch/summary.hpp"

#include "driftline/sketch/format.hpp"

namespace driftline::sketch {

namespace {
template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

[[noreturn]] void mismatch(const char* kind) {
  throw Error(Errc::kDomain, std::string("item type does not match ") + kind + " summary");
}
}  // namespace

const char* summary_kind(const Summary& s) {
  return std::visit(overloaded{
                        [](const BloomFilter&) { return "bloom"; },
                        [](const CountMinSketch&) { return "count_min"; },
                        [](const DyadicCountMin&) { return "dyadic_count_min"; },
                        [](const HyperLogLog&) { return "hyperloglog"; },
                        [](const SpaceSaving&) { return "space_saving"; },
                        [](const TDigest&) { return "tdigest"; },
                        [](const RecordReservoir&) { return "reservoir"; },
                    },
                    s);
}

void ingest(Summary& summary, const Item& item) {
  std::visit(
      overloaded{
          [&](BloomFilter& b) {
            if (auto* v = std::get_if<std::string_view>(&item)) return b.add(*v);
            mismatch("bloom");
          },
          [&](CountMinSketch& c) {
            const bool before = c.saturated();
            if (auto* v = std::get_if<std::string_view>(&item)) {
              c.add(*v);
            } else if (auto* w = std::get_if<WeightedBytes>(&item)) {
              c.add(w->bytes, w->count);
            } else {
              mismatch("count_min");
            }
            if (!before && c.saturated()) throw Error(Errc::kSaturation, "count-min counter saturated");
          },
          [&](DyadicCountMin& d) {
            if (auto* v = std::get_if<IntegerItem>(&item)) return d.add(v->value, v->count);
            mismatch("dyadic_count_min");
          },
          [&](HyperLogLog& h) {
            if (auto* v = std::get_if<std::string_view>(&item)) return h.add(*v);
            mismatch("hyperloglog");
          },
          [&](SpaceSaving& s) {
            const auto before = s.total();
            std::uint64_t w = 0;
            if (auto* v = std::get_if<std::string_view>(&item)) {
              w = 1;
              s.add(*v);
            } else if (auto* wb = std::get_if<WeightedBytes>(&item)) {
              w = wb->count;
              s.add(wb->bytes, wb->count);
            } else {
              mismatch("space_saving");
            }
            if (s.total() - before != w) throw Error(Errc::kSaturation, "space-saving counter saturated");
          },
          [&](TDigest& t) {
            if (auto* v = std::get_if<double>(&item)) return t.add(*v);
            if (auto* w = std::get_if<WeightedValue>(&item)) return t.add(w->value, w->weight);
            mismatch("tdigest");
          },
          [&](RecordReservoir& r) {
            if (auto* v = std::get_if<RecordItem>(&item)) {
              r.step(v->record);
              return;
            }
            mismatch("reservoir");
          },
      },
      summary);
}

Summary merge(const Summary& a, const Summary& b) {
  if (a.index() != b.index()) {
    throw Error(Errc::kIncompatible, std::string("cannot merge ") + summary_kind(a) + " with " + summary_kind(b));
  }
  return std::visit(
      [&](const auto& lhs) -> Summary {
        using T = std::decay_t<decltype(lhs)>;
        if constexpr (std::is_same_v<T, RecordReservoir>) {
          throw Error(Errc::kUnsupported, "reservoir merge is not supported");
        } else {
          T out = lhs;
          out.merge(std::get<T>(b));
          return out;
        }
      },
      a);
}

Bytes serialize(const Summary& s) {
  return std::visit(
      [](const auto& v) -> Bytes {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, RecordReservoir>) {
          throw Error(Errc::kUnsupported, "reservoirs are persisted as JSON snapshots");
        } else {
          return v.serialize();
        }
      },
      s);
}

Summary deserialize(std::span<const std::uint8_t> data) {
  const auto env = open(kSketchMagic, data);
  switch (static_cast<Kind>(env.kind)) {
    case Kind::kBloom: return BloomFilter::deserialize(data);
    case Kind::kCountMin: return CountMinSketch::deserialize(data);
    case Kind::kDyadicCountMin: return DyadicCountMin::deserialize(data);
    case Kind::kHyperLogLog: return HyperLogLog::deserialize(data);
    case Kind::kSpaceSaving: return SpaceSaving::deserialize(data);
    case Kind::kTDigest: return TDigest::deserialize(data);
    default: break;
  }
  throw Error(Errc::kData, "unsupported summary kind " + std::to_string(env.kind));
}

}  // namespace driftline::sketch
