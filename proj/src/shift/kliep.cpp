#include "driftline/shift/kliep.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace driftline::shift {

namespace {

constexpr double kFloor = 1e-6;

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

/// rows x centers kernel matrix, row-major.
std::vector<double> kernel_matrix(const Matrix& xs, const Matrix& centers, double sigma, ExecPolicy policy) {
  const std::size_t n = xs.rows(), b = centers.rows();
  const double inv = 1.0 / (2.0 * sigma * sigma);
  std::vector<double> k(n * b);
  auto fill_row = [&](std::size_t i) {
    for (std::size_t l = 0; l < b; ++l) k[i * b + l] = std::exp(-sq_dist(xs.row(i), centers.row(l)) * inv);
  };
  if (policy == ExecPolicy::kParallel) {
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < n; ++i) fill_row(i);
  } else {
    for (std::size_t i = 0; i < n; ++i) fill_row(i);
  }
  return k;
}

Matrix select_rows(const Matrix& m, const std::vector<std::size_t>& idx) {
  Matrix out(m.cols());
  for (auto i : idx) out.push_row(m.row(i));
  return out;
}

struct Problem {
  std::vector<double> a;  // test kernel, n x b
  std::vector<double> bvec;
  std::size_t n = 0, b = 0;
};

void mat_vec(const Problem& p, const std::vector<double>& alpha, std::vector<double>& out) {
  out.assign(p.n, 0.0);
  for (std::size_t i = 0; i < p.n; ++i) {
    double s = 0.0;
    for (std::size_t l = 0; l < p.b; ++l) s += p.a[i * p.b + l] * alpha[l];
    out[i] = s;
  }
}

double objective(const Problem& p, const std::vector<double>& alpha, std::vector<double>& r) {
  mat_vec(p, alpha, r);
  double s = 0.0;
  for (double v : r) s += std::log(std::max(v, kFloor));
  return s / static_cast<double>(p.n);
}

/// Projection onto {alpha >= 0, b.alpha = 1}: one feasibility correction,
/// clipping and rescaling.
void project(const Problem& p, std::vector<double>& alpha) {
  double ba = 0.0, bb = 0.0;
  for (std::size_t l = 0; l < p.b; ++l) {
    ba += p.bvec[l] * alpha[l];
    bb += p.bvec[l] * p.bvec[l];
  }
  for (std::size_t l = 0; l < p.b; ++l) alpha[l] = std::max(0.0, alpha[l] + (1.0 - ba) * p.bvec[l] / bb);
  ba = 0.0;
  for (std::size_t l = 0; l < p.b; ++l) ba += p.bvec[l] * alpha[l];
  if (ba > 0.0) {
    for (auto& x : alpha) x /= ba;
  }
}

struct Solution {
  std::vector<double> alpha;
  double objective = 0.0;
  int iterations = 0;
  std::vector<double> trace;
};

Solution ascend(const Problem& p, const KliepOptions& opt) {
  Solution s;
  s.alpha.assign(p.b, 1.0);
  project(p, s.alpha);
  std::vector<double> r, r_new, grad(p.b), cand(p.b);
  s.objective = objective(p, s.alpha, r);
  s.trace.push_back(s.objective);
  double step = 1.0;
  for (int it = 1; it <= opt.max_iterations; ++it) {
    s.iterations = it;
    for (std::size_t l = 0; l < p.b; ++l) {
      double g = 0.0;
      for (std::size_t i = 0; i < p.n; ++i) g += p.a[i * p.b + l] / std::max(r[i], kFloor);
      grad[l] = g / static_cast<double>(p.n);
    }
    for (std::size_t l = 0; l < p.b; ++l) cand[l] = s.alpha[l] + step * grad[l];
    project(p, cand);
    const double obj = objective(p, cand, r_new);
    if (obj >= s.objective) {
      const double gain = obj - s.objective;
      s.alpha.swap(cand);
      r.swap(r_new);
      s.objective = obj;
      s.trace.push_back(obj);
      if (gain <= opt.tolerance * std::max(1.0, std::abs(obj))) return s;
      step *= 1.5;
    } else {
      step *= 0.5;
      if (step < 1e-12) return s;  // no ascent direction left
    }
  }
  std::ostringstream msg;
  msg << "kliep did not converge in " << opt.max_iterations << " iterations; last objective " << s.objective;
  throw Error(Errc::kConvergence, msg.str());
}

Problem make_problem(const Matrix& ref, const Matrix& test, const Matrix& centers, double sigma, ExecPolicy policy) {
  Problem p;
  p.n = test.rows();
  p.b = centers.rows();
  p.a = kernel_matrix(test, centers, sigma, policy);
  const auto kr = kernel_matrix(ref, centers, sigma, policy);
  p.bvec.assign(p.b, 0.0);
  for (std::size_t j = 0; j < ref.rows(); ++j) {
    for (std::size_t l = 0; l < p.b; ++l) p.bvec[l] += kr[j * p.b + l];
  }
  for (auto& v : p.bvec) v /= static_cast<double>(ref.rows());
  return p;
}

RatioModel fit_fixed(const Matrix& ref, const Matrix& test, const Matrix& centers, double sigma,
                     const KliepOptions& opt) {
  const Problem p = make_problem(ref, test, centers, sigma, opt.policy);
  Solution s = ascend(p, opt);
  RatioModel m;
  m.centers = centers;
  m.alphas = std::move(s.alpha);
  m.sigma = sigma;
  m.objective = s.objective;
  m.iterations = s.iterations;
  m.trace = std::move(s.trace);
  double norm = 0.0;
  for (std::size_t l = 0; l < p.b; ++l) norm += p.bvec[l] * m.alphas[l];
  m.normalizer = norm;
  return m;
}

Matrix pick_centers(const Matrix& test, std::size_t n_centers, Rng& rng) {
  std::vector<std::size_t> idx(test.rows());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  rng.shuffle(idx);
  idx.resize(std::min(n_centers, idx.size()));
  std::sort(idx.begin(), idx.end());
  return select_rows(test, idx);
}

void check_pair(const WindowPair& pair, std::size_t centers) {
  if (pair.reference.empty() || pair.test.empty()) throw Error(Errc::kDomain, "kliep: empty window");
  if (pair.reference.cols() != pair.test.cols()) throw Error(Errc::kDomain, "kliep: dimensionality mismatch");
  if (centers == 0) throw Error(Errc::kDomain, "kliep: need at least one center");
  if (pair.reference.rows() < centers) throw Error(Errc::kDomain, "kliep: reference smaller than center count");
  for (double v : pair.reference.data()) {
    if (!std::isfinite(v)) throw Error(Errc::kDomain, "kliep: non-finite reference feature");
  }
  for (double v : pair.test.data()) {
    if (!std::isfinite(v)) throw Error(Errc::kDomain, "kliep: non-finite test feature");
  }
}

}  // namespace

double RatioModel::operator()(std::span<const double> x) const {
  const double inv = 1.0 / (2.0 * sigma * sigma);
  double r = 0.0;
  for (std::size_t l = 0; l < alphas.size(); ++l) r += alphas[l] * std::exp(-sq_dist(x, centers.row(l)) * inv);
  return r;
}

std::vector<double> RatioModel::evaluate(const Matrix& xs, ExecPolicy policy) const {
  std::vector<double> out(xs.rows());
  if (policy == ExecPolicy::kParallel) {
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*this)(xs.row(i));
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*this)(xs.row(i));
  }
  return out;
}

double median_distance(const WindowPair& pair, std::uint64_t seed) {
  Matrix pool(pair.reference.cols());
  for (std::size_t i = 0; i < pair.reference.rows(); ++i) pool.push_row(pair.reference.row(i));
  for (std::size_t i = 0; i < pair.test.rows(); ++i) pool.push_row(pair.test.row(i));
  Rng rng(seed ^ 0x6d656469616eull);
  Matrix sample = pick_centers(pool, 200, rng);
  std::vector<double> d;
  for (std::size_t i = 0; i < sample.rows(); ++i) {
    for (std::size_t j = i + 1; j < sample.rows(); ++j) d.push_back(std::sqrt(sq_dist(sample.row(i), sample.row(j))));
  }
  if (d.empty()) return 1.0;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
  const double med = d[d.size() / 2];
  return med > 0.0 ? med : 1.0;
}

std::vector<double> default_sigma_grid(const WindowPair& pair, std::uint64_t seed) {
  const double med = median_distance(pair, seed);
  return {0.25 * med, 0.5 * med, med, 2.0 * med, 4.0 * med};
}

RatioModel kliep_fit(const WindowPair& pair, std::size_t n_centers, const std::vector<double>& sigma_grid,
                     const KliepOptions& options) {
  const std::size_t b = std::min(n_centers, pair.test.rows());
  check_pair(pair, b);
  if (sigma_grid.empty()) throw Error(Errc::kDomain, "kliep: empty sigma grid");
  for (double s : sigma_grid) {
    if (!(s > 0.0)) throw Error(Errc::kDomain, "kliep: sigma must be > 0");
  }
  Rng rng(options.seed);
  const Matrix centers = pick_centers(pair.test, b, rng);

  double best_sigma = sigma_grid.front();
  if (sigma_grid.size() > 1) {
    const std::size_t folds = std::clamp<std::size_t>(options.folds, 2, pair.test.rows());
    std::vector<std::size_t> order(pair.test.rows());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    double best = -std::numeric_limits<double>::infinity();
    for (double sigma : sigma_grid) {
      double score = 0.0;
      bool ok = true;
      for (std::size_t f = 0; f < folds && ok; ++f) {
        std::vector<std::size_t> train, held;
        for (std::size_t i = 0; i < order.size(); ++i) (i % folds == f ? held : train).push_back(order[i]);
        try {
          const auto m = fit_fixed(pair.reference, select_rows(pair.test, train), centers, sigma, options);
          score += change_score(m, select_rows(pair.test, held));
        } catch (const Error& e) {
          if (e.code() != Errc::kConvergence) throw;
          ok = false;
        }
      }
      if (ok && score > best) {
        best = score;
        best_sigma = sigma;
      }
    }
  }
  return fit_fixed(pair.reference, pair.test, centers, best_sigma, options);
}

double change_score(const RatioModel& model, const Matrix& test) {
  if (test.empty()) throw Error(Errc::kDomain, "change_score: empty test window");
  double s = 0.0;
  for (std::size_t i = 0; i < test.rows(); ++i) s += std::log(std::max(model(test.row(i)), kFloor));
  return s / static_cast<double>(test.rows());
}

std::vector<double> null_scores(const WindowPair& pair, std::size_t n_centers, double sigma, std::size_t replicates,
                                const KliepOptions& options) {
  Matrix pool(pair.reference.cols());
  for (std::size_t i = 0; i < pair.reference.rows(); ++i) pool.push_row(pair.reference.row(i));
  for (std::size_t i = 0; i < pair.test.rows(); ++i) pool.push_row(pair.test.row(i));
  const auto seeds = derive_seeds(options.seed ^ 0x6e756c6cull, replicates);
  std::vector<double> out(replicates);
  KliepOptions inner = options;
  inner.policy = ExecPolicy::kSerial;
  auto one = [&](std::size_t r) {
    Rng rng(seeds[r]);
    std::vector<std::size_t> idx(pool.rows());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng.shuffle(idx);
    WindowPair split;
    split.reference = select_rows(pool, {idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(pair.reference.rows())});
    split.test = select_rows(pool, {idx.begin() + static_cast<std::ptrdiff_t>(pair.reference.rows()), idx.end()});
    inner.seed = seeds[r];
    try {
      const auto m = kliep_fit(split, n_centers, {sigma}, inner);
      out[r] = change_score(m, split.test);
    } catch (const Error&) {
      out[r] = std::numeric_limits<double>::quiet_NaN();
    }
  };
  if (options.policy == ExecPolicy::kParallel) {
#pragma omp parallel for schedule(dynamic)
    for (std::size_t r = 0; r < replicates; ++r) one(r);
  } else {
    for (std::size_t r = 0; r < replicates; ++r) one(r);
  }
  std::erase_if(out, [](double v) { return std::isnan(v); });
  return out;
}

double percentile(std::vector<double> xs, double q) {
  if (xs.empty()) throw Error(Errc::kDomain, "percentile: empty sample");
  std::sort(xs.begin(), xs.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

}  // namespace driftline::shift
