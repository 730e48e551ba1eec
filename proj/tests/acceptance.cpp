// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <boost/math/distributions/chi_squared.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "driftline/joiner.hpp"
#include "driftline/monitor.hpp"
#include "driftline/pipeline.hpp"
#include "driftline/shift/detector.hpp"
#include "driftline/shift/eddm.hpp"
#include "driftline/shift/kliep.hpp"
#include "driftline/shift/stats.hpp"
#include "driftline/sketch/combined.hpp"
#include "driftline/sketch/format.hpp"
#include "driftline/sketch/reservoir.hpp"
#include "driftline/sketch/summary.hpp"
#include "test_util.hpp"

using namespace driftline;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// --- 1, 2: Bloom ------------------------------------------------------------

Outcome bloom_fpr_measured() {
  const std::uint64_t n = 100'000;
  sketch::BloomFilter f(10 * n, 7, 42);
  for (std::uint64_t i = 0; i < n; ++i) f.add(int_key(i));
  for (std::uint64_t i = 0; i < n; ++i) {
    if (f.contains(int_key(i)) != sketch::Membership::kMaybePresent) return {false, "false negative"};
  }
  std::uint64_t fp = 0;
  const std::uint64_t probes = 200'000;
  for (std::uint64_t i = n; i < n + probes; ++i) fp += f.contains(int_key(i)) == sketch::Membership::kMaybePresent;
  const double rate = static_cast<double>(fp) / static_cast<double>(probes);
  return {rate >= 0.005 && rate <= 0.012, fmt("FPR %.5f over 2e5 probes (band [0.005, 0.012])", rate)};
}

Outcome bloom_plan_formula() {
  double worst = 0.0;
  bool k_ok = true;
  Rng rng(1);
  for (int t = 0; t < 2000; ++t) {
    const std::uint64_t n = 1 + rng.below(1'000'000);
    const std::uint64_t m = n + rng.below(40 * n);
    const double ratio = static_cast<double>(m) / static_cast<double>(n);
    const double k = std::min(64.0, std::max(1.0, std::round(ratio * std::log(2.0))));
    const double fpr = std::pow(1.0 - std::exp(-k * static_cast<double>(n) / static_cast<double>(m)), k);
    const auto plan = sketch::bloom_plan(n, m);
    k_ok = k_ok && plan.k == static_cast<std::uint32_t>(k);
    worst = std::max(worst, std::abs(plan.fpr_estimate - fpr));
  }
  const auto p = sketch::bloom_plan(100'000, 1'000'000);
  k_ok = k_ok && p.k == 7;
  return {k_ok && worst <= 1e-12,
          fmt("k matches on 2000 random (n, m); max |fpr diff| %.2e; m=10n gives k=7, fpr %.6f", worst,
              p.fpr_estimate)};
}

// --- 3..7: sketches ----------------------------------------------------------

Outcome hll_accuracy() {
  double err = 0.0;
  for (int t = 0; t < 30; ++t) {
    sketch::HyperLogLog h(13, 7000 + t);
    const std::uint64_t base = static_cast<std::uint64_t>(t) * 1'000'000;
    for (std::uint64_t i = 0; i < 100'000; ++i) h.add(int_key(base + i));
    err += std::abs(h.estimate() - 100'000.0) / 100'000.0;
  }
  err /= 30.0;
  return {err <= 0.035, fmt("mean relative error %.4f over 30 trials (limit 0.035; 1.04/sqrt(m) = %.4f)", err,
                            sketch::hll_standard_error(13))};
}

Outcome count_min_zipf() {
  sketch::CountMinSketch s(2000, 5, 11);
  testutil::Zipf zipf(100'000, 1.1);
  Rng rng(12);
  std::unordered_map<std::uint64_t, std::uint64_t> exact;
  const std::uint64_t n = 100'000;
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto v = zipf(rng);
    ++exact[v];
    s.add(int_key(v));
  }
  std::uint64_t under = 0, worst = 0;
  for (auto [v, c] : exact) {
    const auto est = s.estimate(int_key(v));
    if (est < c) ++under;
    else worst = std::max(worst, est - c);
  }
  const double bound = std::exp(1.0) / 2000.0 * static_cast<double>(n);
  return {under == 0 && static_cast<double>(worst) <= bound,
          fmt("%.0f underestimates, max error %.0f (bound %.1f)", static_cast<double>(under), static_cast<double>(worst),
              bound)};
}

Outcome space_saving_bound() {
  std::uint64_t checked = 0, violations = 0;
  for (int trial = 0; trial < 50; ++trial) {
    Rng rng(300 + trial);
    const std::uint32_t cap = 10 + static_cast<std::uint32_t>(rng.below(90));
    sketch::SpaceSaving s(cap);
    testutil::Zipf zipf(1000, 0.6 + rng.uniform());
    std::map<std::string, std::uint64_t> exact;
    const std::uint64_t n = 5000 + rng.below(20'000);
    for (std::uint64_t i = 0; i < n; ++i) {
      const auto k = testutil::key_of(zipf(rng));
      ++exact[k];
      s.add(k);
    }
    for (const auto& c : s.counters()) {
      ++checked;
      const double diff = std::abs(static_cast<double>(c.count) - static_cast<double>(exact[c.item]));
      violations += diff > static_cast<double>(n) / cap;
    }
  }
  return {violations == 0 && checked > 0,
          fmt("%.0f of %.0f tracked items within N/c", static_cast<double>(checked - violations),
              static_cast<double>(checked))};
}

Outcome tdigest_uniform() {
  sketch::TDigest d(100);
  Rng rng(31);
  std::vector<double> xs;
  for (int i = 0; i < 100'000; ++i) {
    xs.push_back(rng.uniform());
    d.add(xs.back());
  }
  std::sort(xs.begin(), xs.end());
  const double e50 = std::abs(d.quantile(0.5) - xs[49'999]);
  const double e99 = std::abs(d.quantile(0.99) - xs[98'999]);
  return {e50 < 0.01 && e99 < 0.005, fmt("|q50 err| %.2e (< 0.01), |q99 err| %.2e (< 0.005)", e50, e99)};
}

Outcome combined_size() {
  const auto preset = sketch::SketchPreset::four_percent(1'000'000);
  sketch::CombinedSketch s(preset);
  Rng rng(77);
  for (std::uint64_t i = 0; i < 10'000'000; ++i) {
    const auto v = static_cast<std::uint32_t>(rng.below(1'000'000));
    s.add(v * 2654435761u);
  }
  const auto bytes = s.serialize().size();
  return {bytes < 700'000, fmt("1e7 items, 1e6 distinct values: %.0f bytes (< 700000)", static_cast<double>(bytes))};
}

Outcome sampling_baseline() {
  // Relative standard error of the mean estimate from a uniform 1000-item
  // down-sample: 0.5 / sqrt(1000) / 0.5 = 3.16%.
  const int trials = 1000;
  std::vector<double> est;
  for (int t = 0; t < trials; ++t) {
    Rng rng(5000 + t);
    sketch::DampedReservoir<int> r(1000, 1.0, 1000, 9000 + t);
    for (int i = 0; i < 10'000; ++i) r.step(rng.bernoulli(0.5) ? 1 : 0);
    double s = 0.0;
    for (int v : r.items()) s += v;
    est.push_back(s / static_cast<double>(r.size()));
  }
  double var = 0.0;
  for (double e : est) var += (e - 0.5) * (e - 0.5);
  const double se = std::sqrt(var / trials) / 0.5;
  return {std::abs(se - 0.0316) <= 0.005, fmt("relative standard error %.4f (target 0.0316 +/- 0.005)", se)};
}

Outcome reservoir_uniform_and_decay() {
  const int n = 100, s = 10, trials = 10'000;
  std::vector<double> counts(n, 0.0);
  for (int t = 0; t < trials; ++t) {
    sketch::DampedReservoir<int> r(s, 1.0, 50, 1000 + t);
    for (int i = 0; i < n; ++i) r.step(i);
    for (int v : r.items()) counts[v] += 1.0;
  }
  const double p = static_cast<double>(s) / n, expect = trials * p;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expect) * (c - expect) / (expect * (1.0 - p));
  const double crit = boost::math::quantile(boost::math::chi_squared(n - 1), 0.999);

  const int periods = 5, period = 100;
  std::vector<double> per(periods, 0.0);
  for (int t = 0; t < trials; ++t) {
    sketch::DampedReservoir<int> r(50, 0.5, period, 77 + t);
    for (int i = 0; i < periods * period; ++i) r.step(i);
    for (int v : r.items()) per[v / period] += 1.0;
  }
  bool monotone = true;
  for (int i = 1; i < periods; ++i) monotone = monotone && per[i] > per[i - 1];
  return {chi2 < crit && monotone, fmt("chi2 %.1f < %.1f; period inclusion counts rise oldest->newest: ", chi2, crit) +
                                       (monotone ? "yes" : "no")};
}

// --- 10..13: detectors -------------------------------------------------------

shift::Matrix gaussian(Rng& rng, std::size_t n, std::size_t dims, double shift = 0.0, std::size_t dim = 0) {
  shift::Matrix m(dims);
  std::vector<double> row(dims);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dims; ++j) row[j] = rng.normal() + (j == dim ? shift : 0.0);
    m.push_row(row);
  }
  return m;
}

std::vector<double> props(const std::vector<std::uint64_t>& c, double s) {
  double total = 0.0;
  for (auto v : c) total += static_cast<double>(v);
  std::vector<double> p;
  for (auto v : c) p.push_back((static_cast<double>(v) + s) / (total + s * static_cast<double>(c.size())));
  return p;
}

Outcome detector_calibration() {
  Rng rng(59);
  int fired = 0;
  for (int t = 0; t < 200; ++t) {
    shift::WindowPair pair{gaussian(rng, 300, 5), gaussian(rng, 300, 5)};
    for (int i = 0; i < 300; ++i) pair.reference_labels.push_back(rng.bernoulli(0.4));
    for (int i = 0; i < 300; ++i) pair.test_labels.push_back(rng.bernoulli(0.4));
    shift::DetectorConfig cfg;
    cfg.alpha = 0.05;
    fired += shift::detect_shift(pair, cfg).report.has_value();
  }
  // Independent formulas over [underflow, bins..., overflow] cells.
  double worst = 0.0;
  Rng r2(11);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t bins = 1 + r2.below(12);
    std::vector<double> edges(bins + 1);
    for (std::size_t i = 0; i <= bins; ++i) edges[i] = static_cast<double>(i);
    std::vector<std::uint64_t> ca(bins), cb(bins);
    for (auto& c : ca) c = r2.below(50);
    for (auto& c : cb) c = r2.below(50);
    ca[0] += 1;
    cb[0] += 1;
    const auto ua = r2.below(5), oa = r2.below(5), ub = r2.below(5), ob = r2.below(5);
    const auto ha = shift::Histogram::from_counts(edges, ca, ua, oa), hb = shift::Histogram::from_counts(edges, cb, ub, ob);
    std::vector<std::uint64_t> fa{ua}, fb{ub};
    fa.insert(fa.end(), ca.begin(), ca.end());
    fb.insert(fb.end(), cb.begin(), cb.end());
    fa.push_back(oa);
    fb.push_back(ob);
    const double sm = 0.01 + r2.uniform();
    auto p = props(fa, 0.5), q = props(fb, 0.5);
    double psi = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) psi += (q[i] - p[i]) * std::log(q[i] / p[i]);
    p = props(fa, sm);
    q = props(fb, sm);
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) kl += p[i] * std::log(p[i] / q[i]);
    p = props(fa, 0.0);
    q = props(fb, 0.0);
    double inter = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) inter += std::min(p[i], q[i]);
    worst = std::max({worst, std::abs(shift::psi(ha, hb) - psi), std::abs(shift::kl_divergence(ha, hb, sm) - kl),
                      std::abs(shift::hist_intersection(ha, hb) - inter)});
  }
  const auto a = shift::Histogram::from_counts({0.0, 1.0, 2.0}, {2'000'000, 2'000'000});
  const auto b = shift::Histogram::from_counts({0.0, 1.0, 2.0}, {1'000'000, 3'000'000});
  const double psi_spot = shift::psi(a, b);
  const double kl_spot = shift::kl_divergence(shift::Histogram::from_counts({0.0, 1.0, 2.0}, {1, 1}),
                                              shift::Histogram::from_counts({0.0, 1.0, 2.0}, {1, 3}), 1e-9);
  const bool ok = fired <= 14 && worst <= 1e-9 && std::abs(psi_spot - 0.2747) <= 5e-5 && std::abs(kl_spot - 0.1438) <= 5e-5;
  return {ok, fmt("false alarms %.0f/200 (<= 14); max formula diff %.1e; PSI %.5f, KL %.5f", fired, worst, psi_spot,
                  kl_spot)};
}

Outcome detection_power() {
  int detected = 0, ranked = 0;
  const std::size_t dims = 5, shifted = 3;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(800 + seed);
    monitor::WindowConfig cfg;
    monitor::WindowedDetector w(cfg, "data");
    std::vector<double> row(dims);
    auto push = [&](double shift) {
      for (std::size_t j = 0; j < dims; ++j) row[j] = rng.normal() + (j == shifted ? shift : 0.0);
      return w.push(0, row, std::nullopt);
    };
    for (int i = 0; i < 2000; ++i) push(0.0);
    int advances = 0;
    for (int i = 0; i < 2000 && advances < 3; ++i) {
      auto a = push(2.0);
      if (!a) continue;
      ++advances;
      if (a->detection.report) {
        ++detected;
        ranked += a->detection.report->features.front().index == shifted;
        break;
      }
    }
  }
  return {detected >= 45 && ranked >= 40,
          fmt("detected within 3 advances in %.0f/50 (>= 45); shifted dim ranked first in %.0f/50 (>= 40)", detected,
              ranked)};
}

Outcome kliep_checks() {
  double dev = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(100 + seed);
    shift::WindowPair pair{gaussian(rng, 500, 2), gaussian(rng, 500, 2)};
    shift::KliepOptions opt;
    opt.seed = seed;
    const auto m = shift::kliep_fit(pair, 100, shift::default_sigma_grid(pair, seed), opt);
    double d = 0.0;
    for (double r : m.evaluate(pair.test)) d += std::abs(r - 1.0);
    dev += d / 500.0;
  }
  dev /= 5.0;
  int above = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(600 + seed);
    shift::WindowPair pair{gaussian(rng, 200, 2), gaussian(rng, 200, 2, 2.0, 0)};
    shift::KliepOptions opt;
    opt.seed = seed;
    const auto m = shift::kliep_fit(pair, 100, shift::default_sigma_grid(pair, seed), opt);
    const auto null = shift::null_scores(pair, 100, m.sigma, 100, opt);
    above += shift::change_score(m, pair.test) > shift::percentile(null, 0.99);
  }
  return {dev < 0.15 && above >= 18,
          fmt("identical windows: mean |r-1| %.4f (< 0.15); 2 sigma shift above null p99 in %.0f/20 (>= 18)", dev, above)};
}

Outcome eddm_checks() {
  bool gate = true;
  for (std::uint32_t mask = 0; mask < (1u << 14) && gate; ++mask) {
    shift::EddmState t;
    for (int e = 0; e < 29 && gate; ++e) {
      const int gap = e < 14 ? ((mask >> e) & 1 ? 400 : 1) : 1;
      for (int i = 0; i < gap - 1; ++i) t = shift::eddm_update(t, false);
      t = shift::eddm_update(t, true);
      gate = t.level == shift::DriftLevel::kNormal;
    }
  }
  Rng any(3);
  for (int t = 0; t < 2000 && gate; ++t) {
    shift::EddmState s;
    const double rate = any.uniform();
    while (s.error_count < 29) {
      s = shift::eddm_update(s, any.bernoulli(rate));
      gate = gate && s.level == shift::DriftLevel::kNormal;
    }
  }
  int flagged = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    shift::EddmState s;
    for (int i = 0; i < 10'000; ++i) {
      s = shift::eddm_update(s, rng.bernoulli(0.01));
      if (s.level == shift::DriftLevel::kDrift) s.reset();
    }
    for (int i = 0; i < 500; ++i) {
      s = shift::eddm_update(s, rng.bernoulli(0.20));
      if (s.level == shift::DriftLevel::kDrift) {
        ++flagged;
        break;
      }
    }
  }
  return {gate && flagged >= 18,
          std::string("no drift below 30 errors over 2^14 gap patterns and 2000 random streams: ") +
              (gate ? "yes" : "no") + fmt("; 1%%->20%% step flagged within 500 steps in %.0f/20 (>= 18)", flagged)};
}

// --- 14, 15: end to end ------------------------------------------------------

nlohmann::json scenario(std::uint64_t seed) {
  return {{"seed", seed},
          {"stream", {{"generator", {{"events", 62000}, {"dims", 2}, {"classes", 2}, {"separation", 1.5}}}}},
          {"injections", {{{"kind", "covariate_mean_shift"}, {"start", 50000}, {"magnitude", 2.0}, {"dims", {0}}}}}};
}

Outcome self_correction(const fs::path& scratch) {
  int ok = 0;
  std::ostringstream detail;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto r = pipeline::run(pipeline::ScenarioConfig::parse(scenario(seed)), scratch / ("s" + std::to_string(seed)));
    const auto& o = r.injections.at(0);
    const double drop = o.pre.accuracy() - o.drop.accuracy();
    const double gap = std::abs(o.pre.accuracy() - o.recovery.accuracy());
    const bool pass = drop >= 0.15 && o.retrained_at && gap <= 0.03;
    ok += pass;
    if (!pass) detail << " seed " << seed << " (drop " << drop << ", gap " << gap << ")";
  }
  return {ok >= 9, fmt("%.0f/10 seeds: drop >= 15 points, policy retrain, recovery within 3 points", ok) +
                       (detail.str().empty() ? "" : "; failing:" + detail.str())};
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    out[fs::relative(e.path(), root).string()] = std::string(std::istreambuf_iterator<char>(in), {});
  }
  return out;
}

Outcome determinism_and_provenance(const fs::path& scratch) {
  const auto cfg = pipeline::ScenarioConfig::parse(scenario(7));
  const auto a = pipeline::run(cfg, scratch / "a");
  pipeline::run(cfg, scratch / "b");
  pipeline::run(cfg, scratch / "c", {true, nullptr});
  const auto ta = tree_bytes(scratch / "a");
  const bool identical = ta == tree_bytes(scratch / "b") && ta == tree_bytes(scratch / "c");
  const auto rp = pipeline::replay(scratch / "a");
  bool same_actions = rp.actions.size() == a.actions.size();
  for (std::size_t i = 0; same_actions && i < rp.actions.size(); ++i)
    same_actions = policy::action_name(rp.actions[i].kind) == a.actions[i].action;
  const bool ok = identical && rp.mismatches == 0 && same_actions && rp.broken_chains.empty() &&
                  rp.chains_checked == a.actions.size();
  return {ok, std::string("stores identical across 2 runs + single-thread: ") + (identical ? "yes" : "no") +
                  fmt("; replay %.0f decisions, %.0f mismatches; %.0f action chains, %.0f broken",
                      static_cast<double>(rp.decisions), static_cast<double>(rp.mismatches),
                      static_cast<double>(rp.chains_checked), static_cast<double>(rp.broken_chains.size()))};
}

// --- 16: joiner --------------------------------------------------------------

Outcome joiner_properties() {
  int failures = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    Rng rng(20'000 + trial);
    const int n = 25;
    struct Op {
      bool primary;
      int idx;
      std::int64_t ts;
    };
    std::vector<Op> ops;
    for (int i = 0; i < n; ++i) {
      ops.push_back({true, i, 10 * i});
      if (rng.bernoulli(0.85)) ops.push_back({false, i, 10 * i + static_cast<std::int64_t>(rng.below(80))});
      if (rng.bernoulli(0.1)) ops.push_back({true, i, 10 * i + 5});  // duplicate primary
    }
    auto drive = [&](const std::vector<Op>& order, bool watermark) {
      joiner::StreamJoiner j({0, 1'000'000, 1000});
      std::vector<std::string> got;
      bool conserved = true;
      for (const auto& op : order) {
        const auto key = "k" + std::to_string(op.idx);
        auto r = op.primary ? j.offer_primary({key, op.ts, Features{{static_cast<double>(op.idx)}, {}}})
                            : j.offer_feedback({key, op.ts, static_cast<double>(op.idx), false});
        for (auto& ex : r.emitted) got.push_back(joiner::to_json(ex).dump());
        if (watermark) j.advance_watermark(op.ts);
        const auto& s = j.stats();
        conserved = conserved && s.offered_primary == s.joined + s.expired_primary + s.buffered_primary &&
                    s.offered_feedback == s.joined + s.expired_feedback + s.buffered_feedback;
      }
      std::sort(got.begin(), got.end());
      return std::make_pair(got, conserved);
    };
    const auto ref = drive(ops, false);
    // Any interleaving, except that duplicate primaries of a key keep their
    // relative order (FIFO pairing depends on it).
    auto perm = ops;
    rng.shuffle(perm);
    std::map<int, std::vector<std::size_t>> slots;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      if (perm[i].primary) slots[perm[i].idx].push_back(i);
    }
    for (auto& [idx, pos] : slots) {
      std::vector<Op> mine;
      for (const auto& op : ops) {
        if (op.primary && op.idx == idx) mine.push_back(op);
      }
      for (std::size_t k = 0; k < pos.size(); ++k) perm[pos[k]] = mine[k];
    }
    const auto shuffled = drive(perm, true);
    failures += !(ref.second && shuffled.second && ref.first == shuffled.first);
  }
  return {failures == 0, fmt("%.0f/1000 interleavings conserve counts and join the same multiset", 1000 - failures)};
}

}  // namespace

int main() {
  const auto scratch = testutil::scratch_dir("acceptance");
  struct Criterion {
    int id;
    const char* name;
    double limit_s;  // 0: none
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "bloom filter FPR at m=10n, k=7", 5, bloom_fpr_measured},
      {2, "bloom_plan against the closed form", 0, bloom_plan_formula},
      {3, "hyperloglog p=13 accuracy", 30, hll_accuracy},
      {4, "count-min on a zipf stream", 10, count_min_zipf},
      {5, "space-saving N/c bound", 0, space_saving_bound},
      {6, "t-digest quantiles", 0, tdigest_uniform},
      {7, "combined sketch size at 1e6 distinct", 120, combined_size},
      {8, "sampling baseline standard error", 0, sampling_baseline},
      {9, "reservoir uniformity and decay trend", 0, reservoir_uniform_and_decay},
      {10, "detector calibration and divergence formulas", 0, detector_calibration},
      {11, "covariate shift detection power", 0, detection_power},
      {12, "kliep ratio and change score", 60, kliep_checks},
      {13, "eddm gate and step detection", 0, eddm_checks},
      {14, "end-to-end self-correction", 180, [&] { return self_correction(scratch / "e2e"); }},
      {15, "determinism, replay and provenance", 0, [&] { return determinism_and_provenance(scratch / "det"); }},
      {16, "joiner conservation and order-insensitivity", 0, joiner_properties},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool pass = o.pass;
    std::string timing = fmt("%.1f s", secs);
    if (c.limit_s > 0) {
      timing += fmt(" (limit %.0f s)", c.limit_s);
      pass = pass && secs < c.limit_s;
    }
    failed += !pass;
    std::printf("%s  %02d %s: %s [%s]\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), timing.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  fs::remove_all(scratch);
  return failed == 0 ? 0 : 1;
}
