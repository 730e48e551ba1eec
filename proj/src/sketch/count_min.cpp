#include "driftline/sketch/count_min.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include "driftline/sketch/format.hpp"

namespace driftline::sketch {

CountMinSketch::CountMinSketch(std::uint32_t width, std::uint32_t depth, std::uint64_t seed)
    : width_(width), seeds_(derive_seeds(seed, depth)), grid_(static_cast<std::size_t>(width) * depth, 0) {
  if (width < 1 || depth < 1) throw Error(Errc::kDomain, "count-min width and depth must be >= 1");
}

CountMinSketch CountMinSketch::for_accuracy(double eps, double delta, std::uint64_t seed) {
  if (!(eps > 0.0 && eps < 1.0) || !(delta > 0.0 && delta < 1.0)) {
    throw Error(Errc::kDomain, "count-min eps and delta must be in (0, 1)");
  }
  const auto w = static_cast<std::uint32_t>(std::ceil(std::exp(1.0) / eps));
  const auto d = static_cast<std::uint32_t>(std::max(1.0, std::ceil(std::log(1.0 / delta))));
  return CountMinSketch(w, d, seed);
}

void CountMinSketch::add(std::string_view item, std::uint64_t count) {
  for (std::size_t r = 0; r < seeds_.size(); ++r) {
    auto& c = grid_[r * width_ + hash64(item, seeds_[r]) % width_];
    c = sat_add(c, count, saturated_);
  }
  total_ = sat_add(total_, count, saturated_);
}

std::uint64_t CountMinSketch::estimate(std::string_view item) const {
  std::uint64_t best = std::numeric_limits<std::uint64_t>::max();
  for (std::size_t r = 0; r < seeds_.size(); ++r) {
    best = std::min(best, grid_[r * width_ + hash64(item, seeds_[r]) % width_]);
  }
  return best;
}

bool CountMinSketch::compatible(const CountMinSketch& other) const {
  return width_ == other.width_ && seeds_ == other.seeds_;
}

std::uint64_t CountMinSketch::inner_product(const CountMinSketch& other) const {
  if (!compatible(other)) throw Error(Errc::kIncompatible, "count-min sketches differ in shape or seeds");
  constexpr auto kMax = std::numeric_limits<std::uint64_t>::max();
  std::uint64_t best = kMax;
  for (std::size_t r = 0; r < seeds_.size(); ++r) {
    unsigned __int128 dot = 0;
    for (std::size_t c = 0; c < width_; ++c) {
      dot += static_cast<unsigned __int128>(grid_[r * width_ + c]) * other.grid_[r * width_ + c];
    }
    best = std::min(best, dot > kMax ? kMax : static_cast<std::uint64_t>(dot));
  }
  return best;
}

void CountMinSketch::merge(const CountMinSketch& other) {
  if (!compatible(other)) throw Error(Errc::kIncompatible, "count-min sketches differ in shape or seeds");
  for (std::size_t i = 0; i < grid_.size(); ++i) grid_[i] = sat_add(grid_[i], other.grid_[i], saturated_);
  total_ = sat_add(total_, other.total_, saturated_);
  saturated_ = saturated_ || other.saturated_;
}

Bytes CountMinSketch::serialize() const {
  ByteWriter p;
  p.u32(width_);
  p.u32(depth());
  for (auto s : seeds_) p.u64(s);
  p.u64(total_);
  p.u8(saturated_ ? 1 : 0);
  ByteWriter body;
  for (auto c : grid_) body.u64(c);
  return seal(kSketchMagic, static_cast<std::uint16_t>(Kind::kCountMin), p.take(), body.take());
}

CountMinSketch CountMinSketch::deserialize(std::span<const std::uint8_t> data) {
  auto env = open_kind(Kind::kCountMin, data);
  ByteReader p(env.params);
  CountMinSketch s;
  s.width_ = p.u32();
  const auto d = p.u32();
  if (s.width_ < 1 || d < 1) throw Error(Errc::kData, "bad count-min shape");
  s.seeds_.resize(d);
  for (auto& v : s.seeds_) v = p.u64();
  s.total_ = p.u64();
  s.saturated_ = p.u8() != 0;
  const std::size_t cells = static_cast<std::size_t>(s.width_) * d;
  if (env.payload.size() != cells * 8) throw Error(Errc::kData, "count-min payload size mismatch");
  ByteReader body(env.payload);
  s.grid_.resize(cells);
  for (auto& c : s.grid_) c = body.u64();
  return s;
}

// ---------------------------------------------------------------------------

DyadicCountMin::DyadicCountMin(std::uint64_t universe, std::uint32_t width, std::uint32_t depth, std::uint64_t seed)
    : universe_(universe) {
  if (universe < 1) throw Error(Errc::kDomain, "dyadic universe must be >= 1");
  const std::size_t bits = universe <= 1 ? 0 : static_cast<std::size_t>(std::bit_width(universe - 1));
  levels_.reserve(bits + 1);
  // Each level gets its own seed family so collisions do not line up across
  // levels.
  const auto seeds = derive_seeds(seed, bits + 1);
  for (std::size_t j = 0; j <= bits; ++j) levels_.emplace_back(width, depth, seeds[j]);
}

void DyadicCountMin::add(std::uint64_t x, std::uint64_t count) {
  if (x >= universe_) throw Error(Errc::kDomain, "dyadic item outside universe");
  for (std::size_t j = 0; j < levels_.size(); ++j) {
    const std::uint64_t key = x >> j;
    levels_[j].add(int_key(key), count);
  }
}

std::uint64_t DyadicCountMin::point(std::uint64_t x) const {
  if (x >= universe_) throw Error(Errc::kDomain, "dyadic item outside universe");
  return levels_.front().estimate(int_key(x));
}

std::uint64_t DyadicCountMin::range(std::uint64_t lo, std::uint64_t hi) const {
  if (lo > hi) throw Error(Errc::kDomain, "range lo > hi");
  if (hi >= universe_) throw Error(Errc::kDomain, "range hi outside universe");
  bool sat = false;
  std::uint64_t sum = 0;
  std::uint64_t l = lo;
  std::uint64_t r = hi + 1;  // exclusive
  for (std::size_t j = 0; j < levels_.size() && l < r; ++j) {
    if (l & 1) {
      const std::uint64_t key = l;
      sum = sat_add(sum, levels_[j].estimate(int_key(key)), sat);
      ++l;
    }
    if (r & 1) {
      --r;
      const std::uint64_t key = r;
      sum = sat_add(sum, levels_[j].estimate(int_key(key)), sat);
    }
    l >>= 1;
    r >>= 1;
  }
  return sum;
}

void DyadicCountMin::merge(const DyadicCountMin& other) {
  if (universe_ != other.universe_ || levels_.size() != other.levels_.size()) {
    throw Error(Errc::kIncompatible, "dyadic arrays differ in universe");
  }
  for (std::size_t j = 0; j < levels_.size(); ++j) levels_[j].merge(other.levels_[j]);
}

Bytes DyadicCountMin::serialize() const {
  ByteWriter p;
  p.u64(universe_);
  p.u32(static_cast<std::uint32_t>(levels_.size()));
  ByteWriter body;
  for (const auto& lvl : levels_) {
    auto b = lvl.serialize();
    body.u32(static_cast<std::uint32_t>(b.size()));
    body.raw(b);
  }
  return seal(kSketchMagic, static_cast<std::uint16_t>(Kind::kDyadicCountMin), p.take(), body.take());
}

DyadicCountMin DyadicCountMin::deserialize(std::span<const std::uint8_t> data) {
  auto env = open_kind(Kind::kDyadicCountMin, data);
  ByteReader p(env.params);
  DyadicCountMin a;
  a.universe_ = p.u64();
  const auto n = p.u32();
  ByteReader body(env.payload);
  for (std::uint32_t j = 0; j < n; ++j) {
    const auto len = body.u32();
    a.levels_.push_back(CountMinSketch::deserialize(body.raw(len)));
  }
  if (a.levels_.empty()) throw Error(Errc::kData, "dyadic array without levels");
  return a;
}

}  // namespace driftline::sketch
