#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "driftline/common.hpp"
#include "driftline/shift/window.hpp"

namespace driftline::shift {

/// r(x) = sum_l alpha_l exp(-|x - c_l|^2 / (2 sigma^2)), fitted so that the
/// reference-window mean of r is 1.
struct RatioModel {
  Matrix centers;
  std::vector<double> alphas;
  double sigma = 1.0;
  double normalizer = 1.0;  // reference mean of r after the fit
  double objective = 0.0;   // mean log r over the fitted test window
  int iterations = 0;
  std::vector<double> trace;  // objective after each accepted step

  double operator()(std::span<const double> x) const;
  std::vector<double> evaluate(const Matrix& xs, ExecPolicy policy = ExecPolicy::kParallel) const;
};

struct KliepOptions {
  int max_iterations = 500;
  double tolerance = 1e-6;  // relative objective change that counts as converged
  std::size_t folds = 5;
  std::uint64_t seed = 0;
  ExecPolicy policy = ExecPolicy::kParallel;
};

/// Median pairwise distance over (at most 200 of) the pooled rows.
double median_distance(const WindowPair& pair, std::uint64_t seed = 0);

/// Median heuristic times {0.25, 0.5, 1, 2, 4}.
std::vector<double> default_sigma_grid(const WindowPair& pair, std::uint64_t seed = 0);

/// Projected gradient ascent on mean_test log r subject to alpha >= 0 and
/// mean_ref r = 1. Sigma is picked from `sigma_grid` by held-out likelihood
/// over test folds. Centers are min(n_centers, |test|) test rows.
/// Throws kConvergence (message carries the last objective) after
/// max_iterations without converging.
RatioModel kliep_fit(const WindowPair& pair, std::size_t n_centers, const std::vector<double>& sigma_grid,
                     const KliepOptions& options = {});

/// Mean log r over `test`; r is floored at 1e-6.
double change_score(const RatioModel& model, const Matrix& test);

/// Change scores of `replicates` refits on random re-splits of the pooled
/// windows (the no-change null), each fitted at `sigma`.
std::vector<double> null_scores(const WindowPair& pair, std::size_t n_centers, double sigma, std::size_t replicates,
                                const KliepOptions& options = {});

/// Linear-interpolated quantile of an unsorted sample.
double percentile(std::vector<double> xs, double q);

}  // namespace driftline::shift
