#include "driftline/sketch/space_saving.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "driftline/sketch/format.hpp"

namespace driftline::sketch {

SpaceSaving::SpaceSaving(std::uint32_t capacity) : capacity_(capacity) {
  if (capacity < 1) throw Error(Errc::kDomain, "space-saving capacity must be >= 1");
  heap_.reserve(capacity);
  pos_.reserve(capacity * 2);
}

bool SpaceSaving::less(std::size_t a, std::size_t b) const {
  if (heap_[a].count != heap_[b].count) return heap_[a].count < heap_[b].count;
  return heap_[a].item < heap_[b].item;
}

void SpaceSaving::swap_nodes(std::size_t a, std::size_t b) {
  std::swap(heap_[a], heap_[b]);
  pos_[heap_[a].item] = a;
  pos_[heap_[b].item] = b;
}

void SpaceSaving::sift_up(std::size_t i) {
  while (i > 0) {
    const std::size_t parent = (i - 1) / 2;
    if (!less(i, parent)) break;
    swap_nodes(i, parent);
    i = parent;
  }
}

void SpaceSaving::sift_down(std::size_t i) {
  const std::size_t n = heap_.size();
  for (;;) {
    std::size_t best = i;
    const std::size_t l = 2 * i + 1;
    const std::size_t r = l + 1;
    if (l < n && less(l, best)) best = l;
    if (r < n && less(r, best)) best = r;
    if (best == i) return;
    swap_nodes(i, best);
    i = best;
  }
}

void SpaceSaving::add(std::string_view item, std::uint64_t weight) {
  total_ = sat_add(total_, weight, saturated_);
  std::string key(item);
  if (auto it = pos_.find(key); it != pos_.end()) {
    const std::size_t i = it->second;
    heap_[i].count = sat_add(heap_[i].count, weight, saturated_);
    sift_down(i);
    return;
  }
  if (heap_.size() < capacity_) {
    heap_.push_back({key, weight, 0});
    pos_[key] = heap_.size() - 1;
    sift_up(heap_.size() - 1);
    return;
  }
  auto& root = heap_.front();
  pos_.erase(root.item);
  const std::uint64_t floor = root.count;
  root.item = key;
  root.error = floor;
  root.count = sat_add(floor, weight, saturated_);
  pos_[key] = 0;
  sift_down(0);
}

std::uint64_t SpaceSaving::estimate(std::string_view item) const {
  auto it = pos_.find(std::string(item));
  return it == pos_.end() ? 0 : heap_[it->second].count;
}

bool SpaceSaving::tracked(std::string_view item) const { return pos_.count(std::string(item)) > 0; }

std::vector<HeavyHitter> SpaceSaving::heavy_hitters(std::uint32_t k) const {
  if (k < 1 || k > capacity_) throw Error(Errc::kDomain, "heavy_hitters k must be in [1, capacity]");
  std::vector<Counter> sorted = heap_;
  std::sort(sorted.begin(), sorted.end(), [](const Counter& a, const Counter& b) {
    return a.count != b.count ? a.count > b.count : a.item < b.item;
  });
  const std::uint64_t next = sorted.size() > k ? sorted[k].count : 0;
  std::vector<HeavyHitter> out;
  for (std::size_t i = 0; i < sorted.size() && i < k; ++i) {
    const auto& c = sorted[i];
    out.push_back({c.item, c.count, c.error, c.count - c.error >= next});
  }
  return out;
}

void SpaceSaving::merge(const SpaceSaving& other) {
  if (capacity_ != other.capacity_) throw Error(Errc::kIncompatible, "space-saving capacities differ");
  const std::uint64_t min_a = min_count();
  const std::uint64_t min_b = other.min_count();
  std::map<std::string, Counter> merged;
  for (const auto& c : heap_) merged[c.item] = c;
  for (const auto& c : other.heap_) {
    auto [it, inserted] = merged.try_emplace(c.item, c);
    if (inserted) {
      it->second.count = sat_add(c.count, min_a, saturated_);
      it->second.error = sat_add(c.error, min_a, saturated_);
    } else {
      it->second.count = sat_add(it->second.count, c.count, saturated_);
      it->second.error = sat_add(it->second.error, c.error, saturated_);
    }
  }
  for (auto& [item, c] : merged) {
    if (other.pos_.count(item) == 0) {
      c.count = sat_add(c.count, min_b, saturated_);
      c.error = sat_add(c.error, min_b, saturated_);
    }
  }
  std::vector<Counter> all;
  all.reserve(merged.size());
  for (auto& [item, c] : merged) all.push_back(std::move(c));
  std::sort(all.begin(), all.end(), [](const Counter& a, const Counter& b) {
    return a.count != b.count ? a.count > b.count : a.item < b.item;
  });
  if (all.size() > capacity_) all.resize(capacity_);
  heap_ = std::move(all);
  std::make_heap(heap_.begin(), heap_.end(), [](const Counter& a, const Counter& b) {
    return a.count != b.count ? a.count > b.count : a.item > b.item;
  });
  total_ = sat_add(total_, other.total_, saturated_);
  rebuild_index();
}

void SpaceSaving::rebuild_index() {
  pos_.clear();
  for (std::size_t i = 0; i < heap_.size(); ++i) pos_[heap_[i].item] = i;
}

std::size_t SpaceSaving::memory_bytes() const {
  std::size_t n = 0;
  for (const auto& c : heap_) n += c.item.size() + 2 * sizeof(std::uint64_t);
  return n;
}

std::string SpaceSaving::to_csv() const {
  std::vector<Counter> sorted = heap_;
  std::sort(sorted.begin(), sorted.end(), [](const Counter& a, const Counter& b) {
    return a.count != b.count ? a.count > b.count : a.item < b.item;
  });
  std::ostringstream os;
  os << "item,count,error\n";
  for (const auto& c : sorted) {
    // Items are raw bytes; non-printable ones are hex-escaped.
    bool printable = std::all_of(c.item.begin(), c.item.end(),
                                 [](char ch) { return ch >= 0x20 && ch < 0x7F && ch != ',' && ch != '"'; });
    if (printable) {
      os << c.item;
    } else {
      os << "0x";
      static const char* hex = "0123456789abcdef";
      for (unsigned char ch : c.item) os << hex[ch >> 4] << hex[ch & 15];
    }
    os << ',' << c.count << ',' << c.error << '\n';
  }
  return os.str();
}

Bytes SpaceSaving::serialize() const {
  ByteWriter p;
  p.u32(capacity_);
  ByteWriter body;
  body.u64(total_);
  body.u32(static_cast<std::uint32_t>(heap_.size()));
  for (const auto& c : heap_) {
    body.str(c.item);
    body.u64(c.count);
    body.u64(c.error);
  }
  return seal(kSketchMagic, static_cast<std::uint16_t>(Kind::kSpaceSaving), p.take(), body.take());
}

SpaceSaving SpaceSaving::deserialize(std::span<const std::uint8_t> data) {
  auto env = open_kind(Kind::kSpaceSaving, data);
  ByteReader p(env.params);
  SpaceSaving s(p.u32());
  ByteReader body(env.payload);
  s.total_ = body.u64();
  const auto n = body.u32();
  if (n > s.capacity_) throw Error(Errc::kData, "space-saving counter count exceeds capacity");
  for (std::uint32_t i = 0; i < n; ++i) {
    Counter c;
    c.item = body.str();
    c.count = body.u64();
    c.error = body.u64();
    s.heap_.push_back(std::move(c));
  }
  s.rebuild_index();
  return s;
}

}  // namespace driftline::sketch
