#include <algorithm>
#include <map>

#include "doctest.h"
#include "driftline/joiner.hpp"
#include "test_util.hpp"

using namespace driftline;
using namespace driftline::joiner;

namespace {

PrimaryEvent primary(const std::string& key, std::int64_t ts, double x = 0.0) {
  return {key, ts, Features{{x}, {}}};
}
FeedbackEvent feedback(const std::string& key, std::int64_t ts, double label = 1.0) { return {key, ts, label, false}; }

std::string fingerprint(const JoinedExample& ex) { return to_json(ex).dump(); }

void check_conservation(const StreamJoiner& j) {
  const auto& s = j.stats();
  REQUIRE(s.offered_primary == s.joined + s.expired_primary + s.buffered_primary);
  REQUIRE(s.offered_feedback == s.joined + s.expired_feedback + s.buffered_feedback);
}

}  // namespace

TEST_CASE("feedback buffered first then primary joins") {
  StreamJoiner j({0, 1000, 100});
  auto r1 = j.offer_feedback(feedback("1", 50));
  CHECK(r1.emitted.empty());
  auto r2 = j.offer_primary(primary("1", 10, 3.5));
  REQUIRE(r2.emitted.size() == 1);
  CHECK(r2.emitted[0].key == "1");
  CHECK(r2.emitted[0].features.values == std::vector<double>{3.5});
  CHECK(r2.emitted[0].join_latency() == 40);
  check_conservation(j);
}

TEST_CASE("primary buffered then feedback yields latency") {
  StreamJoiner j({0, 1000, 100});
  CHECK(j.offer_primary(primary("7", 100)).emitted.empty());
  CHECK(j.stats().buffered_primary == 1);
  auto r = j.offer_feedback(feedback("7", 350));
  REQUIRE(r.emitted.size() == 1);
  CHECK(r.emitted[0].join_latency() == 250);
  CHECK(j.stats().buffered_primary == 0);
  CHECK(j.offer_feedback(feedback("9", 400)).emitted.empty());
  CHECK(j.stats().buffered_feedback == 1);
}

TEST_CASE("duplicate primaries join FIFO") {
  StreamJoiner j({0, 10'000, 100});
  j.offer_primary(primary("k", 10, 1.0));
  j.offer_primary(primary("k", 20, 2.0));
  auto first = j.offer_feedback(feedback("k", 30, 0.0));
  REQUIRE(first.emitted.size() == 1);
  CHECK(first.emitted[0].features.values[0] == 1.0);
  auto second = j.offer_feedback(feedback("k", 40, 1.0));
  REQUIRE(second.emitted.size() == 1);
  CHECK(second.emitted[0].features.values[0] == 2.0);

  // Small-scenario oracle: for every interleaving of two primaries and two
  // feedbacks on one key, the i-th primary pairs with the i-th feedback.
  std::vector<int> order{0, 0, 1, 1};  // 0 = primary, 1 = feedback
  do {
    StreamJoiner jj({0, 10'000, 100});
    int np = 0, nf = 0;
    std::vector<JoinedExample> out;
    for (int side : order) {
      auto r = side == 0 ? jj.offer_primary(primary("k", 10 * np, np)) : jj.offer_feedback(feedback("k", 100 + nf, nf));
      (side == 0 ? np : nf)++;
      out.insert(out.end(), r.emitted.begin(), r.emitted.end());
    }
    REQUIRE(out.size() == 2);
    for (const auto& ex : out) CHECK(ex.features.values[0] == std::get<double>(ex.label));
  } while (std::next_permutation(order.begin(), order.end()));
}

TEST_CASE("watermark expiry") {
  StreamJoiner j({0, 1000, 100});
  CHECK(j.advance_watermark(5000).empty());
  StreamJoiner k({0, 1000, 100});
  k.offer_primary(primary("a", 0));
  CHECK(k.advance_watermark(1000).empty());
  auto ex = k.advance_watermark(1001);
  REQUIRE(ex.size() == 1);
  CHECK(ex[0].key == "a");
  CHECK(ex[0].side == Side::kPrimary);
  CHECK(ex[0].age == 1001);
  CHECK(k.stats().expired_primary == 1);
  check_conservation(k);
}

TEST_CASE("watermark lag and monotonicity") {
  StreamJoiner j({200, 1000, 100});
  j.advance_watermark(1000);
  CHECK(j.watermark() == 800);
  j.advance_watermark(500);
  CHECK(j.watermark() == 800);
  j.advance_watermark(1300);
  CHECK(j.watermark() == 1100);
}

TEST_CASE("backpressure when the buffer is full") {
  StreamJoiner j({0, 1000, 2});
  j.offer_primary(primary("a", 1));
  j.offer_primary(primary("b", 2));
  auto r = j.offer_primary(primary("c", 3));
  CHECK(r.status == OfferStatus::kBackpressure);
  CHECK(j.stats().offered_primary == 2);
  // A matching event is still accepted.
  auto m = j.offer_feedback(feedback("a", 4));
  CHECK(m.status == OfferStatus::kAccepted);
  CHECK(m.emitted.size() == 1);
  check_conservation(j);
}

TEST_CASE("config validation and event checks") {
  CHECK_THROWS_AS(StreamJoiner({-1, 10, 10}), Error);
  CHECK_THROWS_AS(StreamJoiner({100, 10, 10}), Error);
  StreamJoiner j({0, 10, 10});
  CHECK_THROWS_AS(j.offer_primary(primary("", 1)), Error);
  CHECK_THROWS_AS(j.offer_primary(primary("x", -1)), Error);
}

TEST_CASE("randomized interleavings: conservation and order-insensitivity") {
  // Keys are deliberately close to each other to catch mismatched pairing.
  for (int trial = 0; trial < 200; ++trial) {
    Rng rng(9000 + trial);
    const int n = 30;
    std::vector<std::string> keys;
    for (int i = 0; i < n; ++i) keys.push_back(i % 2 ? "k" + std::to_string(i) : "k" + std::to_string(i) + " ");
    struct Op {
      bool primary;
      int idx;
      std::int64_t ts;
    };
    std::vector<Op> ops;
    for (int i = 0; i < n; ++i) {
      ops.push_back({true, i, 10 * i});
      if (rng.bernoulli(0.9)) ops.push_back({false, i, 10 * i + static_cast<std::int64_t>(rng.below(50))});
    }
    std::vector<std::string> reference;
    {
      StreamJoiner j({0, 1'000'000, 1000});
      for (const auto& op : ops) {
        auto r = op.primary ? j.offer_primary(primary(keys[op.idx], op.ts, op.idx))
                            : j.offer_feedback(feedback(keys[op.idx], op.ts, op.idx));
        for (auto& ex : r.emitted) reference.push_back(fingerprint(ex));
      }
      std::sort(reference.begin(), reference.end());
    }
    for (int shuffle = 0; shuffle < 5; ++shuffle) {
      auto perm = ops;
      rng.shuffle(perm);
      StreamJoiner j({0, 1'000'000, 1000});
      std::vector<std::string> got;
      for (const auto& op : perm) {
        auto r = op.primary ? j.offer_primary(primary(keys[op.idx], op.ts, op.idx))
                            : j.offer_feedback(feedback(keys[op.idx], op.ts, op.idx));
        for (auto& ex : r.emitted) {
          REQUIRE(ex.features.values[0] == std::get<double>(ex.label));
          got.push_back(fingerprint(ex));
        }
        j.advance_watermark(op.ts);
        check_conservation(j);
      }
      std::sort(got.begin(), got.end());
      CHECK(got == reference);
    }
  }
}

TEST_CASE("late-arrival trace accounting with expiry") {
  Rng rng(77);
  StreamJoiner j({100, 500, 100'000});
  std::int64_t prev_wm = j.watermark();
  std::uint64_t emitted = 0, expired = 0;
  for (int i = 0; i < 5000; ++i) {
    const std::int64_t ts = i * 10;
    emitted += j.offer_primary(primary("p" + std::to_string(i), ts)).emitted.size();
    if (rng.bernoulli(0.7)) {
      const int back = static_cast<int>(rng.below(std::min(i + 1, 80)));
      emitted += j.offer_feedback(feedback("p" + std::to_string(i - back), ts + 5)).emitted.size();
    }
    expired += j.advance_watermark(ts).size();
    CHECK(j.watermark() >= prev_wm);
    prev_wm = j.watermark();
    check_conservation(j);
  }
  const auto& s = j.stats();
  CHECK(emitted == s.joined);
  CHECK(expired == s.expired_primary + s.expired_feedback);
  CHECK(s.label_coverage() > 0.0);
  CHECK(s.label_coverage() <= 1.0);
}

TEST_CASE("JSONL event parsing") {
  auto e = parse_event(R"({"key":"a","ts":5,"features":[1,2.5]})");
  CHECK(e.key == "a");
  CHECK(e.ts == 5);
  REQUIRE(e.features);
  CHECK(e.features->values == std::vector<double>{1.0, 2.5});
  auto f = parse_event(R"({"key":"a","ts":9,"label":"spam","weak":true})");
  CHECK(std::get<std::string>(*f.label) == "spam");
  CHECK(f.weak);
  auto o = parse_event(R"({"key":3,"ts":1,"features":{"b":2,"a":1}})");
  CHECK(o.key == "3");
  CHECK(o.features->names == std::vector<std::string>{"a", "b"});
  CHECK(o.features->values == std::vector<double>{1.0, 2.0});
  CHECK(parse_event(to_json(o).dump()) == o);
  CHECK_THROWS_AS(parse_event(R"({"ts":1,"label":1})"), Error);
  CHECK_THROWS_AS(parse_event(R"({"key":"a","label":1})"), Error);
  CHECK_THROWS_AS(parse_event(R"({"key":"a","ts":1})"), Error);
  CHECK_THROWS_AS(parse_event("not json"), Error);

  JoinedExample ex{"z", Features{{1.0, 2.0}, {}}, 1.0, false, 10, 30};
  auto j = to_json(ex);
  CHECK(j["join_latency"] == 20);
  CHECK(joined_from_json(j) == ex);
}
