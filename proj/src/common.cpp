#include "driftline/common.hpp"

#include <cmath>

namespace driftline {

const char* errc_name(Errc code) {
  switch (code) {
    case Errc::kDomain: return "domain error";
    case Errc::kIncompatible: return "incompatible";
    case Errc::kUnsupported: return "unsupported operation";
    case Errc::kSaturation: return "saturation";
    case Errc::kEmptySummary: return "empty summary";
    case Errc::kConvergence: return "convergence";
    case Errc::kNotFound: return "not found";
    case Errc::kConflict: return "conflict";
    case Errc::kConfiguration: return "configuration error";
    case Errc::kNotReady: return "not ready";
    case Errc::kPartialReplay: return "partial replay";
    case Errc::kData: return "data error";
    case Errc::kIo: return "io error";
  }
  return "error";
}

namespace {

constexpr std::uint64_t kP1 = 0x9E3779B185EBCA87ull;
constexpr std::uint64_t kP2 = 0xC2B2AE3D27D4EB4Full;
constexpr std::uint64_t kP3 = 0x165667B19E3779F9ull;
constexpr std::uint64_t kP4 = 0x85EBCA77C2B2AE63ull;
constexpr std::uint64_t kP5 = 0x27D4EB2F165667C5ull;

constexpr std::uint64_t rotl(std::uint64_t x, int r) { return (x << r) | (x >> (64 - r)); }

inline std::uint64_t load64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::uint64_t hash64(std::string_view bytes, std::uint64_t seed) noexcept {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  std::size_t n = bytes.size();
  std::uint64_t h = seed + kP5 + static_cast<std::uint64_t>(n);
  while (n >= 8) {
    std::uint64_t k = load64(p) * kP2;
    k = rotl(k, 31) * kP1;
    h ^= k;
    h = rotl(h, 27) * kP1 + kP4;
    p += 8;
    n -= 8;
  }
  if (n >= 4) {
    std::uint64_t k = 0;
    for (int i = 0; i < 4; ++i) k |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    h ^= k * kP1;
    h = rotl(h, 23) * kP2 + kP3;
    p += 4;
    n -= 4;
  }
  while (n > 0) {
    h ^= (*p) * kP5;
    h = rotl(h, 11) * kP1;
    ++p;
    --n;
  }
  // murmur3 fmix64, mixed with the seed once more so that seeds which differ
  // only in high bits still decorrelate.
  h ^= splitmix64(seed);
  h ^= h >> 33;
  h *= 0xFF51AFD7ED558CCDull;
  h ^= h >> 33;
  h *= 0xC4CEB9FE1A85EC53ull;
  h ^= h >> 33;
  return h;
}

std::vector<std::uint64_t> derive_seeds(std::uint64_t master, std::size_t count) {
  std::vector<std::uint64_t> out(count);
  std::uint64_t s = master;
  for (auto& v : out) {
    s = splitmix64(s);
    v = s;
  }
  return out;
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw Error(Errc::kDomain, "Rng::below(0)");
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = uniform() * 2.0 - 1.0;
    v = uniform() * 2.0 - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * f;
  has_spare_ = true;
  return u * f;
}

}  // namespace driftline
