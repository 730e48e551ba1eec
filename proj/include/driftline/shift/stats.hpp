#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace driftline::shift {

struct KsResult {
  double d = 0.0;  // max ECDF gap
  double p = 1.0;  // asymptotic two-sample p-value
};

/// Two-sample Kolmogorov-Smirnov. Ties are handled by advancing both ECDFs
/// past equal values before measuring the gap.
KsResult ks_statistic(std::span<const double> a, std::span<const double> b);

/// Survival function of the Kolmogorov distribution, P(K > lambda).
double kolmogorov_sf(double lambda);

/// Critical D at level alpha for sample sizes n and m (asymptotic).
double ks_critical(double alpha, std::size_t n, std::size_t m);

/// Fixed-edge histogram with underflow/overflow cells. A value equal to the
/// last edge falls in the last bin.
class Histogram {
 public:
  explicit Histogram(std::vector<double> edges);

  /// Freedman-Diaconis edges over `sample`, Sturges when the IQR is zero.
  /// Bin count is clamped to [min_bins, max_bins].
  static Histogram freedman_diaconis(std::span<const double> sample, std::size_t min_bins = 4,
                                     std::size_t max_bins = 64);

  /// Empty histogram with the same edges.
  Histogram empty_like() const { return Histogram(edges_); }

  void add(double x, std::uint64_t weight = 1);
  void add_all(std::span<const double> xs) {
    for (double x : xs) add(x);
  }

  const std::vector<double>& edges() const { return edges_; }
  const std::vector<std::uint64_t>& counts() const { return counts_; }
  std::uint64_t underflow() const { return underflow_; }
  std::uint64_t overflow() const { return overflow_; }
  std::uint64_t total() const { return total_; }

  /// [underflow, bins..., overflow]; the cells every divergence runs over.
  std::vector<std::uint64_t> cells() const;

  /// Build from explicit counts (tests, deserialization).
  static Histogram from_counts(std::vector<double> edges, std::vector<std::uint64_t> counts,
                               std::uint64_t underflow = 0, std::uint64_t overflow = 0);

 private:
  std::vector<double> edges_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t underflow_ = 0;
  std::uint64_t overflow_ = 0;
  std::uint64_t total_ = 0;
};

/// Population stability index over cells smoothed as (c + 0.5) / (N + 0.5 B).
double psi(const Histogram& reference, const Histogram& test);

/// Sum of min proportions. 1 for identical shapes, 0 for disjoint support.
double hist_intersection(const Histogram& a, const Histogram& b);

/// KL(p || q) with additive smoothing on every cell before normalizing.
double kl_divergence(const Histogram& p, const Histogram& q, double smoothing);

struct ChiSquareResult {
  double statistic = 0.0;
  int dof = 0;
  double p = 1.0;
};

/// Chi-square test of homogeneity for two category-count vectors of equal
/// length. Categories empty on both sides are dropped.
ChiSquareResult chi_square_homogeneity(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b);

/// Upper-tail probability of the chi-square distribution.
double chi_square_sf(double x, int dof);

}  // namespace driftline::shift
