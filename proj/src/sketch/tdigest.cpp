#include "driftline/sketch/tdigest.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "driftline/sketch/format.hpp"

namespace driftline::sketch {

TDigest::TDigest(double compression) : compression_(compression) {
  if (!(compression >= 10.0)) throw Error(Errc::kDomain, "t-digest compression must be >= 10");
}

double TDigest::scale(double q) const {
  return compression_ / (2.0 * std::numbers::pi) * std::asin(2.0 * std::clamp(q, 0.0, 1.0) - 1.0);
}

void TDigest::add(double x, double weight) {
  if (!std::isfinite(x)) throw Error(Errc::kDomain, "t-digest value must be finite");
  if (!(weight > 0.0)) throw Error(Errc::kDomain, "t-digest weight must be positive");
  if (empty()) {
    min_ = max_ = x;
  } else {
    min_ = std::min(min_, x);
    max_ = std::max(max_, x);
  }
  buffer_.push_back({x, weight});
  total_weight_ += weight;
  if (buffer_.size() >= static_cast<std::size_t>(5 * compression_)) compress();
}

std::vector<TDigest::Centroid> TDigest::merge_sorted(std::vector<Centroid> all, double total, double compression) {
  std::stable_sort(all.begin(), all.end(), [](const Centroid& a, const Centroid& b) { return a.mean < b.mean; });
  std::vector<Centroid> out;
  if (all.empty()) return out;
  const auto k = [&](double q) {
    return compression / (2.0 * std::numbers::pi) * std::asin(2.0 * std::clamp(q, 0.0, 1.0) - 1.0);
  };
  double done = 0.0;  // weight of emitted centroids
  double k_left = k(0.0);
  Centroid cur = all.front();
  for (std::size_t i = 1; i < all.size(); ++i) {
    const auto& next = all[i];
    const double q_right = (done + cur.weight + next.weight) / total;
    if (k(q_right) - k_left <= 1.0) {
      const double w = cur.weight + next.weight;
      cur.mean += (next.mean - cur.mean) * next.weight / w;
      cur.weight = w;
    } else {
      done += cur.weight;
      k_left = k(done / total);
      out.push_back(cur);
      cur = next;
    }
  }
  out.push_back(cur);
  return out;
}

void TDigest::compress() {
  if (buffer_.empty()) return;
  std::vector<Centroid> all = centroids_;
  all.insert(all.end(), buffer_.begin(), buffer_.end());
  buffer_.clear();
  centroids_ = merge_sorted(std::move(all), total_weight_, compression_);
}

std::vector<TDigest::Centroid> TDigest::centroids() const {
  if (buffer_.empty()) return centroids_;
  TDigest copy = *this;
  copy.compress();
  return copy.centroids_;
}

double TDigest::quantile(double q) const {
  if (empty()) throw Error(Errc::kEmptySummary, "quantile of empty t-digest");
  if (!(q >= 0.0 && q <= 1.0)) throw Error(Errc::kDomain, "quantile q must be in [0, 1]");
  if (q == 0.0) return min_;
  if (q == 1.0) return max_;
  const auto cs = centroids();
  const double n = total_weight_;
  const double t = q * n;
  // Centroid i is centred at cumulative weight cum_i + w_i / 2.
  double cum = 0.0;
  double prev_center = 0.0;
  double prev_mean = min_;
  for (const auto& c : cs) {
    const double center = cum + c.weight / 2.0;
    if (t < center) {
      const double span = center - prev_center;
      const double f = span > 0.0 ? (t - prev_center) / span : 0.0;
      return prev_mean + f * (c.mean - prev_mean);
    }
    prev_center = center;
    prev_mean = c.mean;
    cum += c.weight;
  }
  const double span = n - prev_center;
  const double f = span > 0.0 ? (t - prev_center) / span : 1.0;
  return std::min(max_, prev_mean + f * (max_ - prev_mean));
}

double TDigest::cdf(double x) const {
  if (empty()) throw Error(Errc::kEmptySummary, "cdf of empty t-digest");
  if (x < min_) return 0.0;
  if (x >= max_) return 1.0;
  const auto cs = centroids();
  const double n = total_weight_;
  double cum = 0.0;
  double prev_center = 0.0;
  double prev_mean = min_;
  for (const auto& c : cs) {
    const double center = cum + c.weight / 2.0;
    if (x < c.mean) {
      const double span = c.mean - prev_mean;
      const double f = span > 0.0 ? (x - prev_mean) / span : 1.0;
      return (prev_center + f * (center - prev_center)) / n;
    }
    prev_center = center;
    prev_mean = c.mean;
    cum += c.weight;
  }
  const double span = max_ - prev_mean;
  const double f = span > 0.0 ? (x - prev_mean) / span : 1.0;
  return (prev_center + f * (n - prev_center)) / n;
}

void TDigest::merge(const TDigest& other) {
  if (other.compression_ != compression_) throw Error(Errc::kIncompatible, "t-digest compressions differ");
  if (other.empty()) return;
  if (empty()) {
    min_ = other.min_;
    max_ = other.max_;
  } else {
    min_ = std::min(min_, other.min_);
    max_ = std::max(max_, other.max_);
  }
  std::vector<Centroid> all = centroids_;
  all.insert(all.end(), buffer_.begin(), buffer_.end());
  all.insert(all.end(), other.centroids_.begin(), other.centroids_.end());
  all.insert(all.end(), other.buffer_.begin(), other.buffer_.end());
  buffer_.clear();
  total_weight_ += other.total_weight_;
  centroids_ = merge_sorted(std::move(all), total_weight_, compression_);
}

std::string TDigest::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "mean,weight\n";
  for (const auto& c : centroids()) os << c.mean << ',' << c.weight << '\n';
  return os.str();
}

Bytes TDigest::serialize() const {
  ByteWriter p;
  p.f64(compression_);
  ByteWriter body;
  const auto cs = centroids();
  body.f64(total_weight_);
  body.f64(min_);
  body.f64(max_);
  body.u32(static_cast<std::uint32_t>(cs.size()));
  for (const auto& c : cs) {
    body.f64(c.mean);
    body.f64(c.weight);
  }
  return seal(kSketchMagic, static_cast<std::uint16_t>(Kind::kTDigest), p.take(), body.take());
}

TDigest TDigest::deserialize(std::span<const std::uint8_t> data) {
  auto env = open_kind(Kind::kTDigest, data);
  ByteReader p(env.params);
  TDigest d(p.f64());
  ByteReader body(env.payload);
  d.total_weight_ = body.f64();
  d.min_ = body.f64();
  d.max_ = body.f64();
  const auto n = body.u32();
  d.centroids_.resize(n);
  for (auto& c : d.centroids_) {
    c.mean = body.f64();
    c.weight = body.f64();
  }
  return d;
}

}  // namespace driftline::sketch
