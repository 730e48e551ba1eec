#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "driftline/common.hpp"

namespace driftline::sketch {

enum class Kind : std::uint16_t {
  kBloom = 1,
  kCountMin = 2,
  kDyadicCountMin = 3,
  kHyperLogLog = 4,
  kSpaceSaving = 5,
  kTDigest = 6,
  kProjection = 7,
  kCombined = 9,
};

const char* kind_name(Kind k);

inline constexpr std::array<char, 4> kSketchMagic{'D', 'L', 'S', 'K'};
inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr std::size_t kHeaderSize = 16;

/// Binary envelope shared by every summary:
///   magic[4] | kind u16 | version u16 | param_len u32 | payload_len u32
/// followed by the parameter block and the payload, all little-endian.
Bytes seal(std::array<char, 4> magic, std::uint16_t kind, const Bytes& params, const Bytes& payload);

struct Envelope {
  std::uint16_t kind = 0;
  std::uint16_t version = 0;
  std::span<const std::uint8_t> params;
  std::span<const std::uint8_t> payload;
  std::size_t total_size = 0;
};

/// Parses the envelope at the start of `data`. Throws kData on bad magic or
/// truncation; trailing bytes after the payload are left for the caller.
Envelope open(std::array<char, 4> magic, std::span<const std::uint8_t> data);

/// open() plus a kind check.
Envelope open_kind(Kind expected, std::span<const std::uint8_t> data);

}  // namespace driftline::sketch
