#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "driftline/event.hpp"
#include "driftline/joiner.hpp"
#include "driftline/modelkit.hpp"
#include "driftline/monitor.hpp"
#include "driftline/policy.hpp"
#include "driftline/store.hpp"
#include "json.hpp"

namespace driftline::pipeline {

namespace fs = std::filesystem;

enum class InjectionKind { kCovariateMeanShift, kPriorRebalance, kAbruptChangepoint, kGradualLinear, kAnomalyBurst };
const char* injection_name(InjectionKind k);
InjectionKind injection_from(const std::string& name, const std::string& path);

/// One drift injection over stream positions [start, start + duration).
///  covariate_mean_shift: x[d] += magnitude * sigma[d] on `dims`; duration 0
///    means until the end of the stream.
///  prior_rebalance: each event is redrawn with probability `magnitude` to a
///    class drawn from `proportions`, taking features from that class's
///    recent events (p(x|y) is kept); duration 0 means until the end.
///  abrupt_changepoint: from `start` on, each label moves to the next class
///    with probability `magnitude` (a concept change); duration must be 0.
///  gradual_linear: the covariate shift ramps from 0 to magnitude * sigma
///    over the span, then stays; duration must be positive.
///  anomaly_burst: every event in the span moves magnitude * sigma away on
///    `dims` (random sign), then the stream reverts.
struct Injection {
  InjectionKind kind = InjectionKind::kCovariateMeanShift;
  std::uint64_t start = 0;
  std::uint64_t duration = 0;
  double magnitude = 0.0;
  std::vector<std::size_t> dims{0};
  std::vector<double> proportions;

  nlohmann::json json() const;
};

/// Validates and parses a list of injections; `events` bounds the indices
/// (0 skips that check).
std::vector<Injection> parse_injections(const nlohmann::json& j, const std::string& path, std::uint64_t events);

/// Gaussian class-conditional mixture: class c has mean
/// separation * (2c/(classes-1) - 1) on dim 0 and 0 elsewhere, noise sd on
/// every dim.
struct GeneratorSpec {
  std::uint64_t events = 62'000;
  std::size_t dims = 2;
  std::size_t classes = 2;
  double separation = 1.5;
  double noise = 1.0;
  std::int64_t interval_ms = 10;
  std::vector<double> class_weights;  // empty: uniform
};

struct FeedbackSpec {
  std::int64_t delay_ms = 500;
  std::int64_t jitter_ms = 500;
  double drop_rate = 0.05;
};

struct ModelSpec {
  modelkit::Family family = modelkit::Family::kSgdLinear;
  modelkit::Hyperparams hyperparams;  // empty: family defaults
  std::uint64_t initial_after = 2000;  // events before the first model
  std::size_t min_examples = 500;
  std::size_t search_budget = 1;
  double job_timeout = 60.0;  // s a queued retrain waits for post-shift data
};

struct ReservoirSpec {
  std::size_t capacity = 2000;
  double decay_factor = 0.5;
  std::uint64_t decay_period = 500;
};

struct PolicySpec {
  std::vector<policy::Rule> rules;
  nlohmann::json rules_json;  // as loaded, for provenance and replay
  policy::CostModel cost;
  std::uint64_t evaluate_every = 100;
  std::size_t max_in_flight = 1;
  double shift_ttl = 30.0;  // s
  double prediction_value = 1.0;
};

struct ScenarioConfig {
  std::uint64_t seed = 0;
  GeneratorSpec generator;
  std::optional<fs::path> input;  // JSONL stream instead of the generator
  FeedbackSpec feedback;
  std::vector<Injection> injections;
  std::uint64_t sketch_expected_distinct = 100'000;
  joiner::JoinerConfig joiner;
  ReservoirSpec reservoir;
  monitor::DataMonitorConfig data;
  monitor::PredictionMonitorConfig prediction;
  ModelSpec model;
  PolicySpec policy;
  store::Stores::Options store;
  std::uint64_t accuracy_block = 100;

  /// Every key is optional except `seed`; unknown keys and invalid values are
  /// kConfiguration errors naming the field path.
  static ScenarioConfig parse(const nlohmann::json& j);
  static ScenarioConfig load(const fs::path& path);
  /// Normalized document with every default filled in.
  nlohmann::json json() const;
};

/// Applies injections to a stream in order. Pure in (seed, event sequence).
class Injector {
 public:
  Injector(std::vector<Injection> injections, std::vector<double> sigma, std::size_t classes, std::uint64_t seed);

  /// `index` is the stream position of `e` (0-based, increasing).
  Event apply(std::uint64_t index, Event e);

 private:
  std::vector<Injection> injections_;
  std::vector<double> sigma_;
  std::size_t classes_;
  Rng rng_;
  std::map<int, std::deque<std::vector<double>>> pool_;  // recent features per class
};

/// Base generator; events carry features and a class label.
class Generator {
 public:
  Generator(GeneratorSpec spec, std::uint64_t seed);
  Event next();
  std::uint64_t index() const { return index_; }

 private:
  GeneratorSpec spec_;
  Rng rng_;
  std::vector<double> cumulative_;
  std::uint64_t index_ = 0;
};

/// Rewrites a JSONL stream. Sigma per dim is estimated from the events
/// before the earliest injection start (1 when there are none).
void inject_file(const fs::path& in, const fs::path& out, const std::vector<Injection>& injections,
                 std::uint64_t seed, std::size_t classes = 0);

/// Module-to-module hand-offs seen during a run.
class FlowRecorder {
 public:
  void record(const char* from, const char* to) { edges_.emplace(from, to); }
  const std::set<std::pair<std::string, std::string>>& edges() const { return edges_; }

 private:
  std::set<std::pair<std::string, std::string>> edges_;
};

/// The architecture's data-flow edges.
const std::set<std::pair<std::string, std::string>>& allowed_edges();

struct PhaseAccuracy {
  std::uint64_t begin = 0;
  std::uint64_t end = 0;
  std::uint64_t predicted = 0;
  std::uint64_t correct = 0;
  double accuracy() const { return predicted ? static_cast<double>(correct) / static_cast<double>(predicted) : 0.0; }
  friend bool operator==(const PhaseAccuracy&, const PhaseAccuracy&) = default;
};

struct InjectionOutcome {
  std::string kind;
  std::uint64_t start = 0;
  std::optional<std::uint64_t> detected_at;  // event index of the first matching report
  std::optional<std::string> first_report;
  std::optional<std::uint64_t> retrained_at;  // event index of the first activation after start
  PhaseAccuracy pre, drop, recovery;
  friend bool operator==(const InjectionOutcome&, const InjectionOutcome&) = default;
};

struct ActionEntry {
  std::uint64_t event = 0;
  std::int64_t ts = 0;
  std::string decision_id;
  std::string action;
  std::string rule_id;
  std::string outcome;
  friend bool operator==(const ActionEntry&, const ActionEntry&) = default;
};

struct Detection {
  std::uint64_t event = 0;
  std::string id;
  std::string type;
  double magnitude = 0.0;
  friend bool operator==(const Detection&, const Detection&) = default;
};

struct Activation {
  std::uint64_t event = 0;
  std::uint64_t version = 0;
  std::string cause;  // decision id, or "initial"
  friend bool operator==(const Activation&, const Activation&) = default;
};

struct RunReport {
  std::uint64_t seed = 0;
  std::uint64_t events = 0;
  std::uint64_t predicted = 0;
  std::uint64_t correct = 0;
  std::vector<Detection> detections;  // every monitor report, in order
  std::vector<ActionEntry> actions;  // every decision other than keep_existing
  std::vector<Activation> activations;
  std::vector<InjectionOutcome> injections;
  std::uint64_t sketch_bytes = 0;
  std::uint64_t store_bytes = 0;
  std::map<std::string, std::string> store_paths;

  /// Retrains triggered by the policy (activations other than the initial
  /// model and rollbacks).
  std::size_t policy_retrains() const;
  double accuracy() const { return predicted ? static_cast<double>(correct) / static_cast<double>(predicted) : 0.0; }
  nlohmann::json json() const;
  std::string text() const;
  friend bool operator==(const RunReport&, const RunReport&) = default;
};

struct RunOptions {
  bool single_thread = false;
  FlowRecorder* flow = nullptr;
};

/// Runs the scenario into `out` (created; must not hold a previous run).
RunReport run(const ScenarioConfig& config, const fs::path& out, const RunOptions& options = {});

/// Rebuilds the report from the stores in `run_dir` alone.
RunReport report(const fs::path& run_dir);

struct ReplayResult {
  std::size_t snapshots = 0;
  std::size_t decisions = 0;
  std::size_t mismatches = 0;
  std::vector<policy::PolicyAction> actions;  // re-evaluated, non-keep only
  std::size_t chains_checked = 0;
  std::vector<std::string> broken_chains;
};

/// Re-evaluates every recorded state snapshot with the recorded rules and
/// compares with the logged decisions; also walks each action's provenance
/// chain (decision -> snapshot -> rule -> reports -> windows).
ReplayResult replay(const fs::path& run_dir);

/// Sets the process log level from DRIFTLINE_LOG (trace, debug, info, warn,
/// error, off; default warn).
void configure_logging();

}  // namespace driftline::pipeline
