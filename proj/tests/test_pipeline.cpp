#include <fstream>
#include <map>

#include "doctest.h"
#include "driftline/pipeline.hpp"
#include "test_util.hpp"

using namespace driftline;
using namespace driftline::pipeline;
using nlohmann::json;

namespace {

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    out[fs::relative(e.path(), root).string()] = std::string(std::istreambuf_iterator<char>(in), {});
  }
  return out;
}

std::vector<Event> stream(std::uint64_t n, std::uint64_t seed, const std::vector<Injection>& inj = {}) {
  GeneratorSpec spec;
  Generator gen(spec, seed);
  Injector injector(inj, std::vector<double>(spec.dims, spec.noise), spec.classes, seed);
  std::vector<Event> out;
  for (std::uint64_t i = 0; i < n; ++i) out.push_back(injector.apply(i, gen.next()));
  return out;
}

bool same(const Event& a, const Event& b) {
  return a.key == b.key && a.ts == b.ts && a.label == b.label && a.features->values == b.features->values;
}

Injection make(InjectionKind kind, std::uint64_t start, std::uint64_t duration, double magnitude) {
  Injection i;
  i.kind = kind;
  i.start = start;
  i.duration = duration;
  i.magnitude = magnitude;
  if (kind == InjectionKind::kPriorRebalance) i.proportions = {0.9, 0.1};
  return i;
}

json scenario(std::uint64_t seed, bool shift) {
  json j{{"seed", seed}, {"stream", {{"generator", {{"events", 62000}}}}}};
  j["injections"] = json::array();
  if (shift)
    j["injections"].push_back(
        {{"kind", "covariate_mean_shift"}, {"start", 50000}, {"magnitude", 2.0}, {"dims", {0}}});
  return j;
}

std::string config_error_of(const json& j) {
  try {
    ScenarioConfig::parse(j);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::kConfiguration);
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("injection of magnitude 0 leaves the stream unchanged") {
  const auto base = stream(3000, 11);
  for (auto kind : {InjectionKind::kCovariateMeanShift, InjectionKind::kPriorRebalance, InjectionKind::kAbruptChangepoint,
                    InjectionKind::kGradualLinear, InjectionKind::kAnomalyBurst}) {
    const std::uint64_t duration =
        kind == InjectionKind::kGradualLinear || kind == InjectionKind::kAnomalyBurst ? 500 : 0;
    const auto out = stream(3000, 11, {make(kind, 1000, duration, 0.0)});
    bool all = true;
    for (std::size_t i = 0; i < base.size(); ++i) all = all && same(base[i], out[i]);
    CHECK_MESSAGE(all, injection_name(kind));
  }
}

TEST_CASE("prior rebalance to (0.9, 0.1) keeps p(x|y)") {
  const auto out = stream(11000, 5, {make(InjectionKind::kPriorRebalance, 1000, 0, 1.0)});
  std::size_t zeros = 0, ones = 0;
  double sum1 = 0.0;
  for (std::size_t i = 1000; i < out.size(); ++i) {
    if (*class_of(*out[i].label) == 0) {
      ++zeros;
    } else {
      ++ones;
      sum1 += out[i].features->values[0];
    }
  }
  const double p0 = static_cast<double>(zeros) / 10000.0;
  CHECK(std::abs(p0 - 0.9) <= 0.02);
  // class 1 sits at +separation on dim 0
  CHECK(std::abs(sum1 / static_cast<double>(ones) - 1.5) < 0.1);
}

TEST_CASE("covariate, gradual and burst injections move the features as specified") {
  const auto base = stream(4000, 3);
  const auto cov = stream(4000, 3, {make(InjectionKind::kCovariateMeanShift, 1000, 0, 2.0)});
  const auto grad = stream(4000, 3, {make(InjectionKind::kGradualLinear, 1000, 2000, 2.0)});
  auto burst_inj = make(InjectionKind::kAnomalyBurst, 1000, 100, 8.0);
  const auto burst = stream(4000, 3, {burst_inj});
  for (std::size_t i = 0; i < base.size(); ++i) {
    const double b = base[i].features->values[0];
    CHECK(cov[i].features->values[0] - b == doctest::Approx(i >= 1000 ? 2.0 : 0.0));
    const double ramp = i < 1000 ? 0.0 : std::min(1.0, (static_cast<double>(i) - 1000.0) / 2000.0);
    CHECK(grad[i].features->values[0] - b == doctest::Approx(2.0 * ramp));
    CHECK(std::abs(burst[i].features->values[0] - b) == doctest::Approx(i >= 1000 && i < 1100 ? 8.0 : 0.0));
    CHECK(cov[i].features->values[1] == base[i].features->values[1]);
  }
}

TEST_CASE("abrupt then gradual compose deterministically by index") {
  std::vector<Injection> inj{make(InjectionKind::kAbruptChangepoint, 1000, 0, 0.5),
                             make(InjectionKind::kGradualLinear, 2000, 1000, 1.0)};
  const auto a = stream(4000, 9, inj);
  const auto b = stream(4000, 9, inj);
  bool all = true;
  for (std::size_t i = 0; i < a.size(); ++i) all = all && same(a[i], b[i]);
  CHECK(all);
  const auto base = stream(4000, 9);
  std::size_t flipped = 0;
  for (std::size_t i = 1000; i < 4000; ++i) flipped += *a[i].label != *base[i].label;
  CHECK(flipped == doctest::Approx(1500).epsilon(0.1));
  for (std::size_t i = 0; i < 1000; ++i) CHECK(same(a[i], base[i]));
}

TEST_CASE("inject rewrites a JSONL stream") {
  const auto dir = testutil::scratch_dir("inject");
  {
    std::ofstream o(dir / "in.jsonl");
    for (const auto& e : stream(2000, 4)) o << to_json(e).dump() << "\n";
  }
  auto inj = parse_injections(json::parse(R"([{"kind":"covariate_mean_shift","start":1000,"magnitude":3}])"), "spec", 0);
  inject_file(dir / "in.jsonl", dir / "out.jsonl", inj, 1);
  std::ifstream a(dir / "in.jsonl"), b(dir / "out.jsonl");
  std::string la, lb;
  std::size_t n = 0;
  double before = 0.0, after = 0.0;
  while (std::getline(a, la) && std::getline(b, lb)) {
    const auto ea = parse_event(la), eb = parse_event(lb);
    const double d = eb.features->values[0] - ea.features->values[0];
    (n < 1000 ? before : after) += std::abs(d);
    ++n;
  }
  CHECK(n == 2000);
  CHECK(before == 0.0);
  CHECK(after / 1000.0 > 2.5);  // 3 sigma, sigma estimated from the first 1000 events
  CHECK_THROWS_AS(parse_injections(json::parse(R"([{"kind":"wobble","start":0}])"), "spec", 0), Error);
}

TEST_CASE("config errors name the field path") {
  CHECK(config_error_of(json{{"stream", json::object()}}).find("seed") != std::string::npos);
  auto j = scenario(1, false);
  j["monitor"] = {{"data", {{"refrence_size", 10}}}};
  CHECK(config_error_of(j).find("monitor.data.refrence_size") != std::string::npos);
  j = scenario(1, true);
  j["injections"][0]["start"] = 70000;
  CHECK(config_error_of(j).find("injections[0].start") != std::string::npos);
  j = scenario(1, false);
  j["injections"] = json::parse(R"([{"kind":"gradual_linear","start":10,"duration":0,"magnitude":1}])");
  CHECK(config_error_of(j).find("injections[0].duration") != std::string::npos);
  j["injections"] = json::parse(R"([{"kind":"abrupt_changepoint","start":10,"duration":5,"magnitude":1}])");
  CHECK(config_error_of(j).find("injections[0].duration") != std::string::npos);
  j["injections"] = json::parse(R"([{"kind":"sideways","start":10}])");
  CHECK(config_error_of(j).find("injections[0].kind") != std::string::npos);
  j = scenario(1, false);
  j["policy"] = {{"rules", json::parse(R"([{"id":"r","when":{"field":"nope","op":">","value":1},"action":"retrain"}])")}};
  CHECK(config_error_of(j).find("policy.rules") != std::string::npos);
  j = scenario(1, false);
  j["model"] = {{"hyperparams", {{"learning_rate", -1.0}}}};
  CHECK(config_error_of(j).find("model.hyperparams") != std::string::npos);
  j = scenario(1, false);
  j["reservoir"] = {{"capacity", "big"}};
  CHECK(config_error_of(j).find("reservoir.capacity") != std::string::npos);
}

TEST_CASE("normalized config round-trips") {
  auto c = ScenarioConfig::parse(scenario(3, true));
  const auto j = c.json();
  CHECK(ScenarioConfig::parse(j).json() == j);
  CHECK(j["policy"]["rules"].size() == 3);
}

TEST_CASE("stationary run: no retrain beyond the initial model, no injection detections") {
  const auto dir = testutil::scratch_dir("stationary");
  const auto r = run(ScenarioConfig::parse(scenario(21, false)), dir / "run");
  CHECK(r.policy_retrains() == 0);
  REQUIRE(r.activations.size() == 1);
  CHECK(r.activations[0].cause == "initial");
  CHECK(r.injections.empty());
  CHECK(r.text().find("detections: 0 of 0 injections") != std::string::npos);
  CHECK(r.accuracy() > 0.9);
}

TEST_CASE("covariate shift run: detection, policy retrain, recovery; deterministic and replayable") {
  const auto dir = testutil::scratch_dir("shift");
  const auto cfg = ScenarioConfig::parse(scenario(8, true));
  FlowRecorder flow;
  const auto live = run(cfg, dir / "a", {false, &flow});
  REQUIRE(live.injections.size() == 1);
  const auto& o = live.injections[0];
  REQUIRE(o.detected_at.has_value());
  CHECK(*o.detected_at - o.start <= 300);
  REQUIRE(o.retrained_at.has_value());
  CHECK(o.pre.accuracy() - o.drop.accuracy() >= 0.15);
  CHECK(std::abs(o.pre.accuracy() - o.recovery.accuracy()) <= 0.03);
  CHECK(live.policy_retrains() >= 1);

  SUBCASE("report reads the stores alone and matches the live report") {
    const auto before = tree_bytes(dir / "a");
    const auto r1 = report(dir / "a");
    const auto r2 = report(dir / "a");
    CHECK(r1 == live);
    CHECK(r1.json() == r2.json());
    CHECK(tree_bytes(dir / "a") == before);
  }
  SUBCASE("same seed, single-threaded: identical stores") {
    const auto again = run(cfg, dir / "b", {true, nullptr});
    CHECK(tree_bytes(dir / "a") == tree_bytes(dir / "b"));
    CHECK(again.json()["monitor_reports"] == live.json()["monitor_reports"]);
  }
  SUBCASE("replay reproduces every decision and resolves every chain") {
    const auto rp = replay(dir / "a");
    CHECK(rp.decisions == rp.snapshots);
    CHECK(rp.mismatches == 0);
    CHECK(rp.broken_chains.empty());
    CHECK(rp.chains_checked == live.actions.size());
    REQUIRE(rp.actions.size() == live.actions.size());
    for (std::size_t i = 0; i < rp.actions.size(); ++i) CHECK(policy::action_name(rp.actions[i].kind) == live.actions[i].action);
  }
  SUBCASE("modules talk only along the architecture's edges") {
    for (const auto& e : flow.edges()) CHECK_MESSAGE(allowed_edges().count(e), e.first << " -> " << e.second);
    for (const auto& e : std::vector<std::pair<std::string, std::string>>{{"sketcher", "joiner"},
                                                                          {"joiner", "reservoir"},
                                                                          {"state_db", "policy"},
                                                                          {"policy", "trainer"},
                                                                          {"trainer", "model_db"},
                                                                          {"model_db", "predictor"}})
      CHECK(flow.edges().count(e));
  }
  SUBCASE("a reused output directory is refused") {
    CHECK_THROWS_AS(run(cfg, dir / "a"), Error);
  }
}

TEST_CASE("report on missing stores names the path") {
  const auto dir = testutil::scratch_dir("missing");
  try {
    report(dir / "nothing");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::kNotFound);
    CHECK(std::string(e.what()).find((dir / "nothing").string()) != std::string::npos);
  }
  fs::create_directories(dir / "partial" / "diag");
  try {
    report(dir / "partial");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::kNotFound);
    CHECK(std::string(e.what()).find("partial") != std::string::npos);
  }
}
