#include "driftline/sketch/hyperloglog.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "driftline/sketch/format.hpp"

namespace driftline::sketch {

double hll_standard_error(std::uint32_t precision) {
  return 1.04 / std::sqrt(static_cast<double>(1u << precision));
}

double hll_registers_for(double target_error) {
  if (!(target_error > 0.0)) throw Error(Errc::kDomain, "target error must be positive");
  const double r = 1.04 / target_error;
  return r * r;
}

std::uint32_t hll_precision_for(double target_error) {
  const double p = std::round(std::log2(hll_registers_for(target_error)));
  return static_cast<std::uint32_t>(std::clamp(p, 4.0, 18.0));
}

double hll_memory_bytes(double target_error, double bits_per_register) {
  return hll_registers_for(target_error) * bits_per_register / 8.0;
}

HyperLogLog::HyperLogLog(std::uint32_t precision, std::uint64_t seed)
    : p_(precision), seed_(seed), registers_(std::size_t{1} << std::clamp(precision, 4u, 18u), 0) {
  if (precision < 4 || precision > 18) throw Error(Errc::kDomain, "hyperloglog precision must be in [4, 18]");
}

void HyperLogLog::add(std::string_view item) { add_hash(hash64(item, seed_)); }

void HyperLogLog::add_hash(std::uint64_t h) {
  const std::uint64_t idx = h >> (64 - p_);
  const std::uint64_t rest = h << p_;
  // Rank of the first 1 bit in the remaining 64 - p bits; all-zero gives
  // 64 - p + 1.
  const int rank = rest == 0 ? static_cast<int>(64 - p_ + 1) : std::countl_zero(rest) + 1;
  auto& reg = registers_[idx];
  reg = std::max(reg, static_cast<std::uint8_t>(rank));
}

double HyperLogLog::estimate() const {
  const double m = static_cast<double>(registers_.size());
  double sum = 0.0;
  std::size_t zeros = 0;
  for (auto r : registers_) {
    sum += std::ldexp(1.0, -static_cast<int>(r));
    if (r == 0) ++zeros;
  }
  if (zeros == registers_.size()) return 0.0;
  double alpha;
  switch (registers_.size()) {
    case 16: alpha = 0.673; break;
    case 32: alpha = 0.697; break;
    case 64: alpha = 0.709; break;
    default: alpha = 0.7213 / (1.0 + 1.079 / m);
  }
  const double raw = alpha * m * m / sum;
  if (raw <= 2.5 * m && zeros > 0) return m * std::log(m / static_cast<double>(zeros));
  return raw;
}

std::uint64_t HyperLogLog::cardinality() const { return static_cast<std::uint64_t>(std::llround(estimate())); }

void HyperLogLog::merge(const HyperLogLog& other) {
  if (!compatible(other)) throw Error(Errc::kIncompatible, "hyperloglog precision or seed differ");
  for (std::size_t i = 0; i < registers_.size(); ++i) registers_[i] = std::max(registers_[i], other.registers_[i]);
}

Bytes HyperLogLog::serialize() const {
  ByteWriter p;
  p.u32(p_);
  p.u64(seed_);
  ByteWriter body;
  std::uint32_t acc = 0;
  int nbits = 0;
  for (auto r : registers_) {
    acc |= static_cast<std::uint32_t>(r & 0x3F) << nbits;
    nbits += 6;
    while (nbits >= 8) {
      body.u8(static_cast<std::uint8_t>(acc));
      acc >>= 8;
      nbits -= 8;
    }
  }
  if (nbits > 0) body.u8(static_cast<std::uint8_t>(acc));
  return seal(kSketchMagic, static_cast<std::uint16_t>(Kind::kHyperLogLog), p.take(), body.take());
}

HyperLogLog HyperLogLog::deserialize(std::span<const std::uint8_t> data) {
  auto env = open_kind(Kind::kHyperLogLog, data);
  ByteReader p(env.params);
  const auto prec = p.u32();
  const auto seed = p.u64();
  HyperLogLog h(prec, seed);
  const std::size_t expect = (h.registers_.size() * 6 + 7) / 8;
  if (env.payload.size() != expect) throw Error(Errc::kData, "hyperloglog payload size mismatch");
  std::uint32_t acc = 0;
  int nbits = 0;
  std::size_t in = 0;
  for (auto& r : h.registers_) {
    while (nbits < 6) {
      acc |= static_cast<std::uint32_t>(env.payload[in++]) << nbits;
      nbits += 8;
    }
    r = static_cast<std::uint8_t>(acc & 0x3F);
    acc >>= 6;
    nbits -= 6;
  }
  return h;
}

}  // namespace driftline::sketch
