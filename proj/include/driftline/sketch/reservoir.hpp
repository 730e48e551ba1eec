#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "driftline/common.hpp"

namespace driftline::sketch {

/// Adaptable damped reservoir: a fixed-size sample whose inclusion
/// probabilities decay exponentially with age.
///
/// Each observation adds `running_weight` to the total and enters a full
/// reservoir with probability capacity * running_weight / total, replacing a
/// uniformly chosen slot. Every `decay_period` observations the running
/// weight grows by 1/decay_factor, which is the same as multiplying all older
/// weights by decay_factor. With decay_factor = 1 this is Algorithm R and each
/// of n items is retained with probability capacity / n.
template <typename T>
class DampedReservoir {
 public:
  struct Slot {
    T item;
    double weight;  // running_weight at admission
    std::uint64_t seq;
  };

  static constexpr double kRenormalizeAbove = 1e12;

  DampedReservoir(std::size_t capacity, double decay_factor, std::uint64_t decay_period, std::uint64_t seed)
      : capacity_(capacity), decay_factor_(decay_factor), decay_period_(decay_period), rng_(seed) {
    if (capacity < 1) throw Error(Errc::kDomain, "reservoir capacity must be >= 1");
    if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw Error(Errc::kDomain, "decay_factor must be in (0, 1]");
    if (decay_period < 1) throw Error(Errc::kDomain, "decay_period must be >= 1");
    slots_.reserve(capacity);
  }

  /// Returns true if the item was admitted.
  bool step(T item) {
    ++seen_;
    total_weight_ += running_weight_;
    bool admitted = false;
    if (slots_.size() < capacity_) {
      slots_.push_back({std::move(item), running_weight_, seen_ - 1});
      admitted = true;
    } else {
      const double p = static_cast<double>(capacity_) * running_weight_ / total_weight_;
      if (rng_.uniform() < p) {
        slots_[rng_.below(slots_.size())] = {std::move(item), running_weight_, seen_ - 1};
        admitted = true;
      }
    }
    if (seen_ % decay_period_ == 0 && decay_factor_ < 1.0) {
      running_weight_ /= decay_factor_;
      if (running_weight_ > kRenormalizeAbove) renormalize();
    }
    return admitted;
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return slots_.size(); }
  std::uint64_t seen() const { return seen_; }
  double decay_factor() const { return decay_factor_; }
  std::uint64_t decay_period() const { return decay_period_; }
  double running_weight() const { return running_weight_; }
  double total_weight() const { return total_weight_; }
  const std::vector<Slot>& slots() const { return slots_; }

  std::vector<T> items() const {
    std::vector<T> out;
    out.reserve(slots_.size());
    for (const auto& s : slots_) out.push_back(s.item);
    return out;
  }

  /// Items ordered by arrival, for consumers that need temporal order.
  std::vector<T> items_by_arrival() const {
    std::vector<const Slot*> order;
    for (const auto& s : slots_) order.push_back(&s);
    std::sort(order.begin(), order.end(), [](const Slot* a, const Slot* b) { return a->seq < b->seq; });
    std::vector<T> out;
    for (const auto* s : order) out.push_back(s->item);
    return out;
  }

 private:
  void renormalize() {
    const double f = running_weight_;
    for (auto& s : slots_) s.weight /= f;
    total_weight_ /= f;
    running_weight_ = 1.0;
  }

  std::size_t capacity_;
  double decay_factor_;
  std::uint64_t decay_period_;
  Rng rng_;
  std::vector<Slot> slots_;
  double running_weight_ = 1.0;
  double total_weight_ = 0.0;
  std::uint64_t seen_ = 0;
};

}  // namespace driftline::sketch
