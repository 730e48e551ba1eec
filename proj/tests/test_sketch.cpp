#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>

#include "doctest.h"
#include "driftline/sketch/combined.hpp"
#include "driftline/sketch/format.hpp"
#include "driftline/sketch/projection.hpp"
#include "driftline/sketch/summary.hpp"
#include "test_util.hpp"

using namespace driftline;
using namespace driftline::sketch;

TEST_SUITE("bloom") {
  TEST_CASE("empty filter reports absent, inserted item maybe-present") {
    BloomFilter f(1024, 3, 1);
    CHECK(f.contains("a") == Membership::kDefinitelyAbsent);
    f.add("a");
    CHECK(f.contains("a") == Membership::kMaybePresent);
  }

  TEST_CASE("bloom_plan at m = 10n") {
    auto plan = bloom_plan(100'000, 1'000'000);
    CHECK(plan.k == 7);
    // (1 - e^{-0.7})^7 evaluated independently.
    CHECK(plan.fpr_estimate == doctest::Approx(0.008193722065862417).epsilon(1e-12));
    CHECK(plan.fpr_estimate < 0.01);
  }

  TEST_CASE("bloom_plan clamps and tiny filters have negligible FPR") {
    auto plan = bloom_plan(1, 64);
    CHECK(plan.k == 44);
    CHECK(plan.fpr_estimate < 1e-9);
    BloomFilter f(64, plan.k, 9);
    f.add("only");
    Rng rng(3);
    int fp = 0;
    for (int i = 0; i < 1'000'000; ++i) {
      const std::uint64_t probe = rng.next();
      if (f.contains(int_key(probe)) == Membership::kMaybePresent) ++fp;
    }
    CHECK(fp == 0);
  }

  TEST_CASE("bloom_plan domain errors") {
    CHECK_THROWS_AS(bloom_plan(10, 0), Error);
    CHECK_THROWS_AS(bloom_plan(0, 10), Error);
    CHECK_THROWS_AS(BloomFilter(0, 3, 1), Error);
    CHECK_THROWS_AS(BloomFilter(64, 65, 1), Error);
  }

  TEST_CASE("no false negatives and FPR near the analytic value") {
    const std::uint64_t n = 100'000;
    BloomFilter f(10 * n, 7, 42);
    for (std::uint64_t i = 0; i < n; ++i) f.add(int_key(i));
    for (std::uint64_t i = 0; i < n; ++i) REQUIRE(f.contains(int_key(i)) == Membership::kMaybePresent);
    std::uint64_t fp = 0;
    for (std::uint64_t i = n; i < 2 * n; ++i) fp += f.contains(int_key(i)) == Membership::kMaybePresent;
    const double rate = static_cast<double>(fp) / static_cast<double>(n);
    CHECK(rate >= 0.005);
    CHECK(rate <= 0.012);
  }

  TEST_CASE("merge is bitwise OR and serialization round-trips") {
    BloomFilter a(4096, 4, 5), b(4096, 4, 5), whole(4096, 4, 5);
    for (std::uint64_t i = 0; i < 300; ++i) {
      (i % 2 ? a : b).add(int_key(i));
      whole.add(int_key(i));
    }
    BloomFilter empty(4096, 4, 5);
    BloomFilter ident = a;
    ident.merge(empty);
    CHECK(ident.serialize() == a.serialize());
    a.merge(b);
    CHECK(a == whole);
    auto bytes = a.serialize();
    CHECK(BloomFilter::deserialize(bytes).serialize() == bytes);
    CHECK_THROWS_AS(a.merge(BloomFilter(4096, 4, 6)), Error);
  }
}

TEST_SUITE("count-min") {
  TEST_CASE("point queries never undercount") {
    CountMinSketch s(64, 3, 7);
    CHECK(s.estimate("never") == 0);
    for (int i = 0; i < 5; ++i) s.add("x");
    CHECK(s.estimate("x") >= 5);
  }

  TEST_CASE("zipf stream: overestimate-only and within e/w * N") {
    CountMinSketch s(2000, 5, 11);
    testutil::Zipf zipf(100'000, 1.1);
    Rng rng(12);
    std::unordered_map<std::uint64_t, std::uint64_t> exact;
    const std::uint64_t n = 100'000;
    for (std::uint64_t i = 0; i < n; ++i) {
      const std::uint64_t v = zipf(rng);
      ++exact[v];
      s.add(int_key(v));
    }
    const double bound = std::exp(1.0) / 2000.0 * static_cast<double>(n);
    std::uint64_t worst = 0;
    for (auto [v, c] : exact) {
      const auto est = s.estimate(int_key(v));
      REQUIRE(est >= c);
      worst = std::max(worst, est - c);
    }
    CHECK(static_cast<double>(worst) <= bound);
    for (std::uint32_t r = 0; r < s.depth(); ++r) {
      std::uint64_t row = 0;
      for (std::uint32_t c = 0; c < s.width(); ++c) row += s.counter(r, c);
      CHECK(row == s.total());
    }
  }

  TEST_CASE("inner product") {
    CountMinSketch a(4096, 5, 21), b(4096, 5, 21);
    CHECK(a.inner_product(b) == 0);
    a.add("x");
    CHECK(a.inner_product(b) == 0);
    b.add("x");
    CHECK(a.inner_product(b) >= 1);

    CountMinSketch za(4096, 5, 21), zb(4096, 5, 21);
    testutil::Zipf zipf(10'000, 1.1);
    Rng rng(4);
    std::map<std::uint64_t, std::uint64_t> fa, fb;
    for (int i = 0; i < 10'000; ++i) {
      const auto x = zipf(rng), y = zipf(rng);
      ++fa[x];
      ++fb[y];
      za.add(int_key(x));
      zb.add(int_key(y));
    }
    std::uint64_t exact = 0;
    for (auto [k, c] : fa) {
      if (auto it = fb.find(k); it != fb.end()) exact += c * it->second;
    }
    const auto est = za.inner_product(zb);
    CHECK(est >= exact);
    CHECK(static_cast<double>(est - exact) / static_cast<double>(exact) < 0.10);
    CHECK_THROWS_AS(za.inner_product(CountMinSketch(4096, 5, 22)), Error);
  }

  TEST_CASE("split-stream merge equals single-stream grid") {
    CountMinSketch whole(256, 4, 3), left(256, 4, 3), right(256, 4, 3), empty(256, 4, 3);
    Rng rng(8);
    for (int i = 0; i < 5000; ++i) {
      const std::uint64_t v = rng.below(700);
      whole.add(int_key(v));
      (rng.bernoulli(0.5) ? left : right).add(int_key(v));
    }
    CountMinSketch ident = whole;
    ident.merge(empty);
    CHECK(ident == whole);
    left.merge(right);
    CHECK(left == whole);
  }

  TEST_CASE("counters saturate instead of wrapping") {
    CountMinSketch s(8, 2, 1);
    s.add("x", std::numeric_limits<std::uint64_t>::max() - 1);
    CHECK_FALSE(s.saturated());
    s.add("x", 5);
    CHECK(s.saturated());
    CHECK(s.estimate("x") == std::numeric_limits<std::uint64_t>::max());
    Summary sum = CountMinSketch(8, 2, 1);
    ingest(sum, WeightedBytes{"y", std::numeric_limits<std::uint64_t>::max()});
    CHECK_THROWS_AS(ingest(sum, WeightedBytes{"y", 2}), Error);
  }

  TEST_CASE("for_accuracy sizing") {
    auto s = CountMinSketch::for_accuracy(0.001, 0.01, 1);
    CHECK(s.width() == 2719);
    CHECK(s.depth() == 5);
  }
}

TEST_SUITE("dyadic") {
  TEST_CASE("basic ranges") {
    DyadicCountMin d(1024, 256, 4, 5);
    CHECK(d.levels() == 11);
    CHECK(d.range(0, 1023) == 0);
    d.add(3);
    d.add(3);
    d.add(5);
    CHECK(d.range(3, 5) >= 3);
    CHECK(d.range(0, 1023) == 3);
    CHECK_THROWS_AS(d.range(5, 3), Error);
    CHECK_THROWS_AS(d.range(0, 1024), Error);
    CHECK_THROWS_AS(d.add(1024), Error);
  }

  TEST_CASE("default universe covers 32-bit keys") {
    DyadicCountMin d(std::uint64_t{1} << 32, 64, 2, 1);
    CHECK(d.levels() == 33);
    d.add(0xFFFFFFFFull);
    CHECK(d.range(0, 0xFFFFFFFFull) == 1);
  }

  TEST_CASE("uniform stream: overestimate-only with small relative error") {
    DyadicCountMin d(1024, 1000, 5, 99);
    std::vector<std::uint64_t> exact(1024, 0);
    Rng rng(17);
    for (int i = 0; i < 10'000; ++i) {
      const auto v = rng.below(1024);
      ++exact[v];
      d.add(v);
    }
    double rel = 0.0;
    for (int q = 0; q < 100; ++q) {
      auto lo = rng.below(1024), hi = rng.below(1024);
      if (lo > hi) std::swap(lo, hi);
      std::uint64_t truth = 0;
      for (auto i = lo; i <= hi; ++i) truth += exact[i];
      const auto est = d.range(lo, hi);
      REQUIRE(est >= truth);
      rel += truth == 0 ? 0.0 : static_cast<double>(est - truth) / static_cast<double>(truth);
    }
    CHECK(rel / 100.0 < 0.05);
  }

  TEST_CASE("merge and serialization") {
    DyadicCountMin a(256, 32, 3, 1), b(256, 32, 3, 1), whole(256, 32, 3, 1);
    for (std::uint64_t i = 0; i < 200; ++i) {
      (i % 3 ? a : b).add(i);
      whole.add(i);
    }
    a.merge(b);
    CHECK(a == whole);
    auto bytes = a.serialize();
    CHECK(DyadicCountMin::deserialize(bytes) == a);
  }
}

TEST_SUITE("hyperloglog") {
  TEST_CASE("empty and single-item estimates") {
    HyperLogLog h(13);
    CHECK(h.estimate() == 0.0);
    h.add("a");
    h.add("a");
    h.add("a");
    // m ln(m / (m - 1)) at one occupied register.
    CHECK(h.estimate() == doctest::Approx(1.0000610401237584).epsilon(1e-12));
    CHECK(h.cardinality() == 1);
  }

  TEST_CASE("precision planning from a target error") {
    CHECK(hll_precision_for(0.011) == 13);
    // (1.04 / 0.011)^2 registers at 5 bits each.
    CHECK(hll_memory_bytes(0.011, 5.0) == doctest::Approx(5586.776859504134));
    CHECK(std::round(hll_memory_bytes(0.011, 5.0) / 100.0) / 10.0 == doctest::Approx(5.6));
    CHECK(hll_standard_error(13) == doctest::Approx(0.011490485194281396));
  }

  TEST_CASE("registers never decrease") {
    HyperLogLog h(8, 3);
    auto prev = h.registers();
    for (std::uint64_t i = 0; i < 5000; ++i) {
      h.add(int_key(i));
      const auto& cur = h.registers();
      for (std::size_t r = 0; r < cur.size(); ++r) REQUIRE(cur[r] >= prev[r]);
      prev = cur;
    }
  }

  TEST_CASE("accuracy over a few trials") {
    double err = 0.0;
    for (int t = 0; t < 5; ++t) {
      HyperLogLog h(13, 1000 + t);
      for (std::uint64_t i = 0; i < 100'000; ++i) h.add(int_key(i));
      err += std::abs(h.estimate() - 100'000.0) / 100'000.0;
    }
    CHECK(err / 5 <= 3.0 * hll_standard_error(13));
  }

  TEST_CASE("merge equals union exactly and is commutative") {
    HyperLogLog a(12, 5), b(12, 5), u(12, 5);
    for (std::uint64_t i = 0; i < 20'000; ++i) {
      if (i % 3 != 0) a.add(int_key(i));
      if (i % 2 == 0) b.add(int_key(i));
      if (i % 3 != 0 || i % 2 == 0) u.add(int_key(i));
    }
    HyperLogLog ab = a, ba = b;
    ab.merge(b);
    ba.merge(a);
    CHECK(ab == u);
    CHECK(ba == u);
    CHECK(ab.estimate() == u.estimate());
    auto bytes = ab.serialize();
    CHECK(HyperLogLog::deserialize(bytes) == ab);
    CHECK_THROWS_AS(a.merge(HyperLogLog(11, 5)), Error);
    CHECK_THROWS_AS(HyperLogLog(19), Error);
  }
}

TEST_SUITE("space-saving") {
  TEST_CASE("tiny stream heavy hitter is guaranteed") {
    SpaceSaving s(2);
    CHECK(s.heavy_hitters(1).empty());
    for (int i = 0; i < 9; ++i) s.add("a");
    s.add("b");
    auto top = s.heavy_hitters(1);
    REQUIRE(top.size() == 1);
    CHECK(top[0].item == "a");
    CHECK(top[0].count == 9);
    CHECK(top[0].guaranteed);
    CHECK_THROWS_AS(s.heavy_hitters(3), Error);
    CHECK_THROWS_AS(s.heavy_hitters(0), Error);
  }

  TEST_CASE("deterministic N/c bound over random streams") {
    for (int trial = 0; trial < 20; ++trial) {
      Rng rng(100 + trial);
      const std::uint32_t cap = 10 + static_cast<std::uint32_t>(rng.below(40));
      SpaceSaving s(cap);
      testutil::Zipf zipf(500, 0.8 + rng.uniform());
      std::map<std::string, std::uint64_t> exact;
      const int n = 5000;
      for (int i = 0; i < n; ++i) {
        const auto k = testutil::key_of(zipf(rng));
        ++exact[k];
        s.add(k);
      }
      std::uint64_t sum = 0;
      for (const auto& c : s.counters()) {
        sum += c.count;
        CHECK(c.count >= exact[c.item]);
        CHECK(static_cast<double>(c.count - exact[c.item]) <= static_cast<double>(n) / cap);
        CHECK(c.error <= c.count);
      }
      CHECK(sum == s.total());
      CHECK(s.size() <= cap);
    }
  }

  TEST_CASE("guaranteed flags agree with the exact ranking") {
    Rng rng(5);
    SpaceSaving s(20);
    std::map<std::string, std::uint64_t> exact;
    testutil::Zipf zipf(200, 1.3);
    for (int i = 0; i < 20'000; ++i) {
      const auto k = testutil::key_of(zipf(rng));
      ++exact[k];
      s.add(k);
    }
    std::vector<std::pair<std::uint64_t, std::string>> ranked;
    for (auto& [k, c] : exact) ranked.emplace_back(c, k);
    std::sort(ranked.rbegin(), ranked.rend());
    std::set<std::string> top5;
    for (int i = 0; i < 5; ++i) top5.insert(ranked[i].second);
    for (const auto& h : s.heavy_hitters(5)) {
      if (h.guaranteed) CHECK(top5.count(h.item) == 1);
    }
  }

  TEST_CASE("merge keeps the bound and round-trips") {
    Rng rng(9);
    SpaceSaving a(30), b(30);
    std::map<std::string, std::uint64_t> exact;
    testutil::Zipf zipf(300, 1.0);
    const int n = 8000;
    for (int i = 0; i < n; ++i) {
      const auto k = testutil::key_of(zipf(rng));
      ++exact[k];
      (rng.bernoulli(0.4) ? a : b).add(k);
    }
    a.merge(b);
    CHECK(a.total() == static_cast<std::uint64_t>(n));
    CHECK(a.size() <= 30);
    for (const auto& c : a.counters()) {
      CHECK(c.count >= exact[c.item]);
      CHECK(static_cast<double>(c.count - exact[c.item]) <= static_cast<double>(n) / 30.0);
    }
    auto bytes = a.serialize();
    auto back = SpaceSaving::deserialize(bytes);
    CHECK(back == a);
    CHECK(back.serialize() == bytes);
    CHECK(a.to_csv().rfind("item,count,error\n", 0) == 0);
  }
}

TEST_SUITE("tdigest") {
  TEST_CASE("single value digest") {
    TDigest d;
    CHECK_THROWS_AS((void)d.quantile(0.5), Error);
    d.add(7.0);
    for (double q : {0.0, 0.1, 0.5, 0.9, 1.0}) CHECK(d.quantile(q) == 7.0);
    TDigest e;
    e.add(42.0);
    CHECK(e.quantile(0.5) == 42.0);
    CHECK_THROWS_AS((void)e.quantile(1.5), Error);
  }

  TEST_CASE("uniform median and tail against a sorted-array oracle") {
    TDigest d(100);
    Rng rng(31);
    std::vector<double> xs;
    for (int i = 0; i < 100'000; ++i) {
      xs.push_back(rng.uniform());
      d.add(xs.back());
    }
    std::sort(xs.begin(), xs.end());
    CHECK(std::abs(d.quantile(0.5) - xs[50'000]) < 0.01);
    CHECK(std::abs(d.quantile(0.99) - xs[99'000]) < 0.005);
    CHECK(d.quantile(0.0) == xs.front());
    CHECK(d.quantile(1.0) == xs.back());
    double prev = -1.0;
    for (int i = 0; i <= 1000; ++i) {
      const double v = d.quantile(i / 1000.0);
      REQUIRE(v >= prev);
      prev = v;
    }
    auto cs = d.centroids();
    for (std::size_t i = 1; i < cs.size(); ++i) CHECK(cs[i].mean >= cs[i - 1].mean);
    CHECK(cs.size() < 200);
  }

  TEST_CASE("merge conserves weight and keeps accuracy") {
    TDigest a(100), b(100);
    Rng rng(2);
    std::vector<double> xs;
    for (int i = 0; i < 20'000; ++i) {
      const double x = rng.normal();
      xs.push_back(x);
      (i % 2 ? a : b).add(x);
    }
    a.merge(b);
    CHECK(a.total_weight() == doctest::Approx(20'000.0));
    double w = 0.0;
    for (auto& c : a.centroids()) w += c.weight;
    CHECK(w == doctest::Approx(20'000.0));
    std::sort(xs.begin(), xs.end());
    CHECK(std::abs(a.quantile(0.5) - xs[10'000]) < 0.05);
    CHECK(a.quantile(0.0) == xs.front());
    CHECK(a.quantile(1.0) == xs.back());
    auto bytes = a.serialize();
    CHECK(TDigest::deserialize(bytes).serialize() == bytes);
    CHECK(a.to_csv().rfind("mean,weight\n", 0) == 0);
  }

  TEST_CASE("cdf inverts quantile") {
    TDigest d;
    Rng rng(4);
    for (int i = 0; i < 10'000; ++i) d.add(rng.uniform(0, 10));
    for (double q : {0.1, 0.25, 0.5, 0.75, 0.9}) CHECK(d.cdf(d.quantile(q)) == doctest::Approx(q).epsilon(0.01));
  }
}

TEST_SUITE("projection") {
  TEST_CASE("zero vector, linearity, determinism") {
    RandomProjection p(200, 20, 77);
    std::vector<double> zero(200, 0.0);
    for (double v : p.project(zero)) CHECK(v == 0.0);
    Rng rng(1);
    std::vector<double> x(200), y(200), xy(200);
    for (int i = 0; i < 200; ++i) {
      x[i] = rng.normal();
      y[i] = rng.normal();
      xy[i] = 2.0 * x[i] - 3.0 * y[i];
    }
    auto px = p.project(x), py = p.project(y), pxy = p.project(xy);
    for (int j = 0; j < 20; ++j) CHECK(pxy[j] == doctest::Approx(2.0 * px[j] - 3.0 * py[j]).epsilon(1e-9));
    RandomProjection again(200, 20, 77);
    CHECK(again.serialize() == p.serialize());
    CHECK(again.project(x) == px);
    CHECK(p.project(x, ExecPolicy::kParallel) == px);
    CHECK_THROWS_AS(p.project(std::vector<double>(199)), Error);
    CHECK_THROWS_AS(RandomProjection(10, 10, 1), Error);
  }

  TEST_CASE("entry frequencies follow 1/6, 2/3, 1/6") {
    RandomProjection p(1000, 100, 5);
    int plus = 0, minus = 0;
    for (std::uint32_t j = 0; j < 100; ++j) {
      for (std::uint32_t i = 0; i < 1000; ++i) {
        const int e = p.entry(j, i);
        plus += e > 0;
        minus += e < 0;
      }
    }
    CHECK(plus / 1e5 == doctest::Approx(1.0 / 6).epsilon(0.02));
    CHECK(minus / 1e5 == doctest::Approx(1.0 / 6).epsilon(0.02));
  }

  TEST_CASE("squared distances are preserved on average") {
    RandomProjection p(1000, 100, 123);
    Rng rng(6);
    double ratio = 0.0;
    for (int t = 0; t < 500; ++t) {
      std::vector<double> x(1000), y(1000), d(1000);
      for (int i = 0; i < 1000; ++i) {
        x[i] = rng.normal();
        y[i] = rng.normal();
        d[i] = x[i] - y[i];
      }
      auto px = p.project(x, ExecPolicy::kParallel), py = p.project(y, ExecPolicy::kParallel);
      double num = 0.0, den = 0.0;
      for (int j = 0; j < 100; ++j) num += (px[j] - py[j]) * (px[j] - py[j]);
      for (double v : d) den += v * v;
      ratio += num / den;
    }
    CHECK(std::abs(ratio / 500.0 - 1.0) < 0.10);
  }
}

TEST_SUITE("reservoir") {
  TEST_CASE("under capacity keeps everything") {
    DampedReservoir<int> r(10, 1.0, 100, 1);
    for (int i = 0; i < 5; ++i) r.step(i);
    CHECK(r.size() == 5);
    CHECK(r.items() == std::vector<int>{0, 1, 2, 3, 4});
  }

  TEST_CASE("no decay matches uniform inclusion (chi-square at 0.001)") {
    const int n = 100, s = 10, trials = 10'000;
    std::vector<double> counts(n, 0.0);
    for (int t = 0; t < trials; ++t) {
      DampedReservoir<int> r(s, 1.0, 50, 1000 + t);
      for (int i = 0; i < n; ++i) r.step(i);
      for (int v : r.items()) counts[v] += 1.0;
    }
    const double p = static_cast<double>(s) / n;
    const double expect = trials * p;
    double chi2 = 0.0;
    for (double c : counts) chi2 += (c - expect) * (c - expect) / (expect * (1.0 - p));
    boost::math::chi_squared dist(n - 1);
    CHECK(chi2 < boost::math::quantile(dist, 0.999));
    // Per-item 3 sigma band.
    const double sigma = std::sqrt(trials * p * (1 - p));
    for (double c : counts) CHECK(std::abs(c - expect) < 4.5 * sigma);
  }

  TEST_CASE("decay favours recent periods by 1/decay_factor") {
    const int periods = 5, period = 100, s = 50, trials = 10'000;
    std::vector<double> per_period(periods, 0.0);
    for (int t = 0; t < trials; ++t) {
      DampedReservoir<int> r(s, 0.5, period, 77 + t);
      for (int i = 0; i < periods * period; ++i) r.step(i);
      for (int v : r.items()) per_period[v / period] += 1.0;
    }
    for (int p = 1; p < periods; ++p) CHECK(per_period[p] > per_period[p - 1]);
    const double latest = per_period[periods - 1] / (trials * period);
    const double older = per_period[periods - 2] / (trials * period);
    const double ratio = latest / older;
    // Expected ratio is exactly 1 / 0.5; allow 3 sigma of Monte Carlo noise.
    const double se = ratio * std::sqrt(1.0 / per_period[periods - 1] + 1.0 / per_period[periods - 2]);
    CHECK(ratio >= 2.0 - 3.0 * se);
    CHECK(ratio <= 2.0 + 3.0 * se);
  }

  TEST_CASE("renormalization keeps weights finite") {
    DampedReservoir<int> r(5, 0.5, 1, 3);
    for (int i = 0; i < 200; ++i) r.step(i);
    CHECK(std::isfinite(r.total_weight()));
    CHECK(r.running_weight() <= DampedReservoir<int>::kRenormalizeAbove);
    CHECK(r.size() == 5);
  }
}

TEST_SUITE("summary facade") {
  TEST_CASE("type mismatches and merge rules") {
    Summary bloom = BloomFilter(128, 3, 1);
    CHECK_THROWS_AS(ingest(bloom, 3.0), Error);
    ingest(bloom, std::string_view("a"));
    CHECK(std::get<BloomFilter>(bloom).contains("a") == Membership::kMaybePresent);

    Summary digest = TDigest();
    ingest(digest, 7.0);
    CHECK(std::get<TDigest>(digest).quantile(0.3) == 7.0);
    CHECK_THROWS_AS(ingest(digest, std::string_view("x")), Error);

    try {
      (void)merge(bloom, digest);
      FAIL("expected incompatible");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::kIncompatible);
    }
    Summary res = RecordReservoir(4, 1.0, 10, 1);
    ingest(res, RecordItem{"r1"});
    try {
      (void)merge(res, res);
      FAIL("expected unsupported");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::kUnsupported);
    }
    auto back = deserialize(serialize(bloom));
    CHECK(std::get<BloomFilter>(back) == std::get<BloomFilter>(bloom));
  }

  TEST_CASE("random-split merges are associative and commutative") {
    Rng rng(10);
    for (int trial = 0; trial < 10; ++trial) {
      Summary parts[3] = {HyperLogLog(10, 9), HyperLogLog(10, 9), HyperLogLog(10, 9)};
      Summary cms[3] = {CountMinSketch(64, 3, 2), CountMinSketch(64, 3, 2), CountMinSketch(64, 3, 2)};
      Summary bl[3] = {BloomFilter(512, 3, 2), BloomFilter(512, 3, 2), BloomFilter(512, 3, 2)};
      for (int i = 0; i < 2000; ++i) {
        const auto k = testutil::key_of(rng.below(900));
        const auto p = rng.below(3);
        ingest(parts[p], std::string_view(k));
        ingest(cms[p], std::string_view(k));
        ingest(bl[p], std::string_view(k));
      }
      for (auto* s : {parts, cms, bl}) {
        auto left = merge(merge(s[0], s[1]), s[2]);
        auto right = merge(s[0], merge(s[2], s[1]));
        CHECK(serialize(left) == serialize(right));
      }
    }
  }

  TEST_CASE("header layout") {
    auto bytes = HyperLogLog(4, 1).serialize();
    CHECK(bytes[0] == 'D');
    CHECK(bytes[1] == 'L');
    CHECK(bytes[2] == 'S');
    CHECK(bytes[3] == 'K');
    CHECK(bytes[4] == static_cast<std::uint8_t>(Kind::kHyperLogLog));
    CHECK(bytes.size() == kHeaderSize + 12 + 12);
    bytes[0] = 'X';
    CHECK_THROWS_AS(HyperLogLog::deserialize(bytes), Error);
  }
}

TEST_SUITE("combined") {
  TEST_CASE("parallel partitioned ingest equals the serial reference") {
    std::vector<std::uint32_t> items;
    Rng rng(55);
    for (int i = 0; i < 200'000; ++i) items.push_back(static_cast<std::uint32_t>(rng.below(50'000)));
    auto preset = SketchPreset::four_percent(50'000);
    auto serial = ingest_partitioned(items, preset, 1, ExecPolicy::kSerial);
    auto split = ingest_partitioned(items, preset, 4, ExecPolicy::kSerial);
    auto par = ingest_partitioned(items, preset, 4, ExecPolicy::kParallel);
    CHECK(serial.bloom() == par.bloom());
    CHECK(serial.count_min() == par.count_min());
    CHECK(serial.hll() == par.hll());
    CHECK(split.serialize() == par.serialize());
    CHECK(par.space_saving().total() == items.size());
  }

  TEST_CASE("serialized preset size at one million distinct") {
    auto preset = SketchPreset::four_percent(1'000'000);
    CombinedSketch s(preset);
    for (std::uint32_t i = 0; i < 1'000'000; ++i) s.add(i * 2654435761u);
    auto bytes = s.serialize();
    CHECK(bytes.size() < 700'000);
    auto back = CombinedSketch::deserialize(bytes);
    CHECK(back.serialize() == bytes);
    CHECK(std::abs(static_cast<double>(back.hll().cardinality()) - 1e6) / 1e6 < 0.12);
  }
}
