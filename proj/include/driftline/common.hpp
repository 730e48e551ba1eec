#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace driftline {

enum class Errc {
  kDomain,
  kIncompatible,
  kUnsupported,
  kSaturation,
  kEmptySummary,
  kConvergence,
  kNotFound,
  kConflict,
  kConfiguration,
  kNotReady,
  kPartialReplay,
  kData,
  kIo,
};

const char* errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Execution route for kernels that have both a serial reference and an
/// OpenMP implementation. Both routes must produce identical results.
enum class ExecPolicy { kSerial, kParallel };

using Bytes = std::vector<std::uint8_t>;

// ---------------------------------------------------------------------------
// Hashing

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Keyed 64-bit hash over a byte string. Single-lane xxh64-style mixing with
/// a murmur3 finalizer; every seed gives an independent-looking function.
std::uint64_t hash64(std::string_view bytes, std::uint64_t seed) noexcept;

/// Derives `count` seeds from a master seed.
std::vector<std::uint64_t> derive_seeds(std::uint64_t master, std::size_t count);

/// Little-endian byte view of an integer key, so integer streams hash the same
/// way everywhere.
inline std::string_view int_key(const std::uint64_t& v) noexcept {
  return {reinterpret_cast<const char*>(&v), sizeof(v)};
}
inline std::string_view int_key(const std::uint32_t& v) noexcept {
  return {reinterpret_cast<const char*>(&v), sizeof(v)};
}

// ---------------------------------------------------------------------------
// Deterministic RNG. The engine output is fixed by the standard; the
// distributions below are ours so results do not depend on the stdlib.

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// Little-endian binary encoding

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { put(v); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    put(bits);
  }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void raw(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  std::size_t size() const { return buf_.size(); }
  Bytes take() { return std::move(buf_); }

 private:
  template <typename T>
  void put(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  Bytes buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8() { return get<std::uint8_t>(); }
  std::uint16_t u16() { return get<std::uint16_t>(); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  double f64() {
    auto bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  std::string str() {
    auto n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::span<const std::uint8_t> raw(std::size_t n) {
    need(n);
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw Error(Errc::kData, "truncated binary record");
  }
  template <typename T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(data_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

/// Saturating add for non-negative counters.
constexpr std::uint64_t sat_add(std::uint64_t a, std::uint64_t b, bool& saturated) noexcept {
  if (a > std::numeric_limits<std::uint64_t>::max() - b) {
    saturated = true;
    return std::numeric_limits<std::uint64_t>::max();
  }
  return a + b;
}

}  // namespace driftline
