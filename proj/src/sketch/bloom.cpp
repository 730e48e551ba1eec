#include "driftline/sketch/bloom.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "driftline/sketch/format.hpp"

namespace driftline::sketch {

double bloom_fpr(std::uint64_t n, std::uint64_t m_bits, std::uint32_t k) {
  const double kn_m = static_cast<double>(k) * static_cast<double>(n) / static_cast<double>(m_bits);
  return std::pow(1.0 - std::exp(-kn_m), static_cast<double>(k));
}

BloomPlan bloom_plan(std::uint64_t n_expected, std::uint64_t m_bits) {
  if (m_bits < 1) throw Error(Errc::kDomain, "bloom_plan: m_bits must be >= 1");
  if (n_expected < 1) throw Error(Errc::kDomain, "bloom_plan: n_expected must be >= 1");
  if (m_bits < n_expected) throw Error(Errc::kDomain, "bloom_plan: m_bits must be >= n_expected");
  const double ratio = static_cast<double>(m_bits) / static_cast<double>(n_expected);
  const double k = std::clamp(std::round(ratio * std::log(2.0)), 1.0, 64.0);
  BloomPlan plan;
  plan.k = static_cast<std::uint32_t>(k);
  plan.fpr_estimate = bloom_fpr(n_expected, m_bits, plan.k);
  return plan;
}

BloomFilter::BloomFilter(std::uint64_t m_bits, std::uint32_t k, std::uint64_t seed)
    : m_(m_bits), seeds_(derive_seeds(seed, k)), words_((m_bits + 63) / 64, 0) {
  if (m_bits < 1) throw Error(Errc::kDomain, "bloom filter needs at least one bit");
  if (k < 1 || k > 64) throw Error(Errc::kDomain, "bloom hash count must be in [1, 64]");
}

BloomFilter BloomFilter::for_capacity(std::uint64_t n_expected, double bits_per_item, std::uint64_t seed) {
  const auto m = static_cast<std::uint64_t>(std::ceil(static_cast<double>(n_expected) * bits_per_item));
  const auto plan = bloom_plan(n_expected, m);
  return BloomFilter(m, plan.k, seed);
}

void BloomFilter::add(std::string_view item) {
  for (auto s : seeds_) {
    const std::uint64_t bit = hash64(item, s) % m_;
    words_[bit >> 6] |= 1ull << (bit & 63);
  }
  ++inserted_;
}

Membership BloomFilter::contains(std::string_view item) const {
  for (auto s : seeds_) {
    const std::uint64_t bit = hash64(item, s) % m_;
    if ((words_[bit >> 6] & (1ull << (bit & 63))) == 0) return Membership::kDefinitelyAbsent;
  }
  return Membership::kMaybePresent;
}

bool BloomFilter::compatible(const BloomFilter& other) const { return m_ == other.m_ && seeds_ == other.seeds_; }

void BloomFilter::merge(const BloomFilter& other) {
  if (!compatible(other)) throw Error(Errc::kIncompatible, "bloom filters differ in size or seeds");
  for (std::size_t i = 0; i < words_.size(); ++i) words_[i] |= other.words_[i];
  inserted_ += other.inserted_;
}

std::uint64_t BloomFilter::popcount() const {
  std::uint64_t c = 0;
  for (auto w : words_) c += static_cast<std::uint64_t>(std::popcount(w));
  return c;
}

Bytes BloomFilter::serialize() const {
  ByteWriter p;
  p.u64(m_);
  p.u32(hash_count());
  for (auto s : seeds_) p.u64(s);
  p.u64(inserted_);
  ByteWriter body;
  // Packed bit array, exactly ceil(m/8) bytes.
  const std::size_t nbytes = (m_ + 7) / 8;
  for (std::size_t i = 0; i < nbytes; ++i) body.u8(static_cast<std::uint8_t>(words_[i / 8] >> (8 * (i % 8))));
  return seal(kSketchMagic, static_cast<std::uint16_t>(Kind::kBloom), p.take(), body.take());
}

BloomFilter BloomFilter::deserialize(std::span<const std::uint8_t> data) {
  auto env = open_kind(Kind::kBloom, data);
  ByteReader p(env.params);
  BloomFilter f;
  f.m_ = p.u64();
  const auto k = p.u32();
  if (f.m_ < 1 || k < 1 || k > 64) throw Error(Errc::kData, "bad bloom parameters");
  f.seeds_.resize(k);
  for (auto& s : f.seeds_) s = p.u64();
  f.inserted_ = p.u64();
  f.words_.assign((f.m_ + 63) / 64, 0);
  const std::size_t nbytes = (f.m_ + 7) / 8;
  if (env.payload.size() != nbytes) throw Error(Errc::kData, "bloom payload size mismatch");
  for (std::size_t i = 0; i < nbytes; ++i) f.words_[i / 8] |= static_cast<std::uint64_t>(env.payload[i]) << (8 * (i % 8));
  return f;
}

}  // namespace driftline::sketch
