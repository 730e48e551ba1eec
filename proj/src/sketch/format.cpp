#include "driftline/sketch/format.hpp"

#include <string>

namespace driftline::sketch {

const char* kind_name(Kind k) {
  switch (k) {
    case Kind::kBloom: return "bloom";
    case Kind::kCountMin: return "count_min";
    case Kind::kDyadicCountMin: return "dyadic_count_min";
    case Kind::kHyperLogLog: return "hyperloglog";
    case Kind::kSpaceSaving: return "space_saving";
    case Kind::kTDigest: return "tdigest";
    case Kind::kProjection: return "projection";
    case Kind::kCombined: return "combined";
  }
  return "unknown";
}

Bytes seal(std::array<char, 4> magic, std::uint16_t kind, const Bytes& params, const Bytes& payload) {
  ByteWriter w;
  for (char c : magic) w.u8(static_cast<std::uint8_t>(c));
  w.u16(kind);
  w.u16(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(params.size()));
  w.u32(static_cast<std::uint32_t>(payload.size()));
  w.raw(params);
  w.raw(payload);
  return w.take();
}

Envelope open(std::array<char, 4> magic, std::span<const std::uint8_t> data) {
  if (data.size() < kHeaderSize) throw Error(Errc::kData, "buffer shorter than header");
  for (std::size_t i = 0; i < 4; ++i) {
    if (data[i] != static_cast<std::uint8_t>(magic[i])) throw Error(Errc::kData, "bad magic");
  }
  ByteReader r(data.subspan(4));
  Envelope env;
  env.kind = r.u16();
  env.version = r.u16();
  if (env.version != kFormatVersion) {
    throw Error(Errc::kData, "unsupported format version " + std::to_string(env.version));
  }
  const std::uint32_t plen = r.u32();
  const std::uint32_t len = r.u32();
  if (data.size() - kHeaderSize < static_cast<std::size_t>(plen) + len) {
    throw Error(Errc::kData, "truncated summary body");
  }
  env.params = data.subspan(kHeaderSize, plen);
  env.payload = data.subspan(kHeaderSize + plen, len);
  env.total_size = kHeaderSize + plen + len;
  return env;
}

Envelope open_kind(Kind expected, std::span<const std::uint8_t> data) {
  auto env = open(kSketchMagic, data);
  if (env.kind != static_cast<std::uint16_t>(expected)) {
    throw Error(Errc::kIncompatible, std::string("expected ") + kind_name(expected) + " summary, got kind " +
                                         std::to_string(env.kind));
  }
  return env;
}

}  // namespace driftline::sketch
