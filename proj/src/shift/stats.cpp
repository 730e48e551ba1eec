#include "driftline/shift/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <boost/math/special_functions/gamma.hpp>

#include "driftline/common.hpp"

namespace driftline::shift {

KsResult ks_statistic(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw Error(Errc::kDomain, "ks_statistic: empty sample");
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double n = static_cast<double>(x.size()), m = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
  }
  // Once one side is exhausted the remaining gap only shrinks.
  const double ne = std::sqrt(n * m / (n + m));
  return {d, kolmogorov_sf((ne + 0.12 + 0.11 / ne) * d)};
}

double kolmogorov_sf(double lambda) {
  if (lambda <= 0.0) return 1.0;
  if (lambda < 1.18) {
    // Theta-function form of the CDF converges fast for small lambda.
    const double pi2 = std::numbers::pi * std::numbers::pi;
    const double w = std::log(lambda);
    double cdf = 0.0;
    for (int k = 1; k <= 7; k += 2) cdf += std::exp(-k * k * pi2 / (8.0 * lambda * lambda));
    cdf *= std::exp(0.5 * std::log(2.0 * std::numbers::pi) - w);
    return std::clamp(1.0 - cdf, 0.0, 1.0);
  }
  double sum = 0.0, sign = 1.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += sign * term;
    if (term < 1e-16) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

double ks_critical(double alpha, std::size_t n, std::size_t m) {
  if (!(alpha > 0.0 && alpha < 1.0) || n == 0 || m == 0) throw Error(Errc::kDomain, "ks_critical: bad arguments");
  const double dn = static_cast<double>(n), dm = static_cast<double>(m);
  return std::sqrt(-0.5 * std::log(alpha / 2.0)) * std::sqrt((dn + dm) / (dn * dm));
}

Histogram::Histogram(std::vector<double> edges) : edges_(std::move(edges)) {
  if (edges_.size() < 2) throw Error(Errc::kDomain, "histogram needs at least two edges");
  for (std::size_t i = 1; i < edges_.size(); ++i) {
    if (!(edges_[i] > edges_[i - 1])) throw Error(Errc::kDomain, "histogram edges must be strictly increasing");
  }
  counts_.assign(edges_.size() - 1, 0);
}

namespace {
double sorted_quantile(const std::vector<double>& s, double q) {
  const double pos = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}
}  // namespace

Histogram Histogram::freedman_diaconis(std::span<const double> sample, std::size_t min_bins, std::size_t max_bins) {
  if (sample.empty()) throw Error(Errc::kDomain, "freedman_diaconis: empty sample");
  if (min_bins < 1 || max_bins < min_bins) throw Error(Errc::kDomain, "freedman_diaconis: bad bin bounds");
  std::vector<double> s(sample.begin(), sample.end());
  std::sort(s.begin(), s.end());
  double lo = s.front(), hi = s.back();
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double n = static_cast<double>(s.size());
  const double iqr = sorted_quantile(s, 0.75) - sorted_quantile(s, 0.25);
  std::size_t bins;
  if (iqr > 0.0) {
    const double h = 2.0 * iqr / std::cbrt(n);
    bins = static_cast<std::size_t>(std::ceil((hi - lo) / h));
  } else {
    bins = static_cast<std::size_t>(std::ceil(std::log2(n))) + 1;
  }
  bins = std::clamp(bins, min_bins, max_bins);
  std::vector<double> edges(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
  edges.back() = hi;
  return Histogram(std::move(edges));
}

void Histogram::add(double x, std::uint64_t weight) {
  total_ += weight;
  if (x < edges_.front()) {
    underflow_ += weight;
  } else if (x > edges_.back()) {
    overflow_ += weight;
  } else {
    auto it = std::upper_bound(edges_.begin(), edges_.end(), x);
    auto bin = static_cast<std::size_t>(it - edges_.begin());
    bin = bin == 0 ? 0 : bin - 1;
    counts_[std::min(bin, counts_.size() - 1)] += weight;
  }
}

std::vector<std::uint64_t> Histogram::cells() const {
  std::vector<std::uint64_t> out;
  out.reserve(counts_.size() + 2);
  out.push_back(underflow_);
  out.insert(out.end(), counts_.begin(), counts_.end());
  out.push_back(overflow_);
  return out;
}

Histogram Histogram::from_counts(std::vector<double> edges, std::vector<std::uint64_t> counts, std::uint64_t underflow,
                                 std::uint64_t overflow) {
  Histogram h(std::move(edges));
  if (counts.size() != h.counts_.size()) throw Error(Errc::kDomain, "histogram counts do not match edges");
  h.counts_ = std::move(counts);
  h.underflow_ = underflow;
  h.overflow_ = overflow;
  h.total_ = underflow + overflow;
  for (auto c : h.counts_) h.total_ += c;
  return h;
}

namespace {

void check_pair(const Histogram& a, const Histogram& b, const char* op) {
  if (a.edges() != b.edges()) throw Error(Errc::kIncompatible, std::string(op) + ": histogram edges differ");
  if (a.total() == 0 || b.total() == 0) throw Error(Errc::kDomain, std::string(op) + ": empty histogram");
}

std::vector<double> smoothed(const Histogram& h, double s) {
  const auto c = h.cells();
  const double denom = static_cast<double>(h.total()) + s * static_cast<double>(c.size());
  std::vector<double> p(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) p[i] = (static_cast<double>(c[i]) + s) / denom;
  return p;
}

}  // namespace

double psi(const Histogram& reference, const Histogram& test) {
  check_pair(reference, test, "psi");
  const auto p = smoothed(reference, 0.5), q = smoothed(test, 0.5);
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += (q[i] - p[i]) * std::log(q[i] / p[i]);
  return sum;
}

double hist_intersection(const Histogram& a, const Histogram& b) {
  check_pair(a, b, "hist_intersection");
  const auto p = smoothed(a, 0.0), q = smoothed(b, 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += std::min(p[i], q[i]);
  return sum;
}

double kl_divergence(const Histogram& p, const Histogram& q, double smoothing) {
  if (!(smoothing > 0.0)) throw Error(Errc::kDomain, "kl_divergence: smoothing must be > 0");
  check_pair(p, q, "kl_divergence");
  const auto a = smoothed(p, smoothing), b = smoothed(q, smoothing);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * std::log(a[i] / b[i]);
  return std::max(sum, 0.0);
}

double chi_square_sf(double x, int dof) {
  if (dof < 1) throw Error(Errc::kDomain, "chi_square_sf: dof must be >= 1");
  if (x <= 0.0) return 1.0;
  return boost::math::gamma_q(0.5 * dof, 0.5 * x);
}

ChiSquareResult chi_square_homogeneity(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
  if (a.size() != b.size()) throw Error(Errc::kIncompatible, "chi_square: category counts differ in length");
  double na = 0.0, nb = 0.0;
  for (auto c : a) na += static_cast<double>(c);
  for (auto c : b) nb += static_cast<double>(c);
  if (na == 0.0 || nb == 0.0) throw Error(Errc::kDomain, "chi_square: empty sample");
  const double n = na + nb;
  ChiSquareResult r;
  int categories = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double col = static_cast<double>(a[i] + b[i]);
    if (col == 0.0) continue;
    ++categories;
    const double ea = na * col / n, eb = nb * col / n;
    const double da = static_cast<double>(a[i]) - ea, db = static_cast<double>(b[i]) - eb;
    r.statistic += da * da / ea + db * db / eb;
  }
  r.dof = categories - 1;
  r.p = r.dof < 1 ? 1.0 : chi_square_sf(r.statistic, r.dof);
  return r;
}

}  // namespace driftline::shift
