#include "driftline/pipeline.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <queue>
#include <sstream>
#include <unordered_map>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "driftline/sketch/combined.hpp"
#include "driftline/sketch/reservoir.hpp"

namespace driftline::pipeline {

using nlohmann::json;
using store::StoreKind;

namespace {

spdlog::level::level_enum level_from_env(bool* bad) {
  const char* env = std::getenv("DRIFTLINE_LOG");
  const std::string level = env ? env : "warn";
  const auto parsed = spdlog::level::from_str(level);
  *bad = parsed == spdlog::level::off && level != "off";
  return *bad ? spdlog::level::warn : parsed;
}

spdlog::logger& dlog() {
  static const std::shared_ptr<spdlog::logger> logger = [] {
    auto l = spdlog::stderr_color_mt("driftline");
    bool bad = false;
    l->set_level(level_from_env(&bad));
    return l;
  }();
  return *logger;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config reading

namespace {

Error config_error(const std::string& path, const std::string& what) {
  return Error(Errc::kConfiguration, path + ": " + what);
}

/// Object reader that tracks the field path and rejects unknown keys.
class Doc {
 public:
  Doc(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw config_error(path_, "must be an object");
  }
  ~Doc() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [k, v] : j_.items()) {
      if (!used_.count(k)) throw config_error(at(k), "unknown key");
    }
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) {
    used_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }
  const json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  double number(const std::string& key, double def, double lo, double hi) {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_number()) throw config_error(at(key), "must be a number");
    const double x = v.get<double>();
    if (!(x >= lo && x <= hi)) throw config_error(at(key), "must be in [" + fmt(lo) + ", " + fmt(hi) + "]");
    return x;
  }
  std::uint64_t integer(const std::string& key, std::uint64_t def, std::uint64_t lo, std::uint64_t hi) {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
      throw config_error(at(key), "must be a non-negative integer");
    const auto x = v.get<std::uint64_t>();
    if (x < lo || x > hi) throw config_error(at(key), "must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return x;
  }
  bool boolean(const std::string& key, bool def) {
    if (!has(key)) return def;
    if (!j_.at(key).is_boolean()) throw config_error(at(key), "must be true or false");
    return j_.at(key).get<bool>();
  }
  std::string string(const std::string& key, const std::string& def) {
    if (!has(key)) return def;
    if (!j_.at(key).is_string()) throw config_error(at(key), "must be a string");
    return j_.at(key).get<std::string>();
  }

 private:
  static std::string fmt(double x) {
    std::ostringstream os;
    os << x;
    return os.str();
  }
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

constexpr std::uint64_t kMaxU = std::numeric_limits<std::uint32_t>::max();
const json kEmpty = json::object();

}  // namespace

const char* injection_name(InjectionKind k) {
  switch (k) {
    case InjectionKind::kCovariateMeanShift: return "covariate_mean_shift";
    case InjectionKind::kPriorRebalance: return "prior_rebalance";
    case InjectionKind::kAbruptChangepoint: return "abrupt_changepoint";
    case InjectionKind::kGradualLinear: return "gradual_linear";
    case InjectionKind::kAnomalyBurst: return "anomaly_burst";
  }
  return "covariate_mean_shift";
}

InjectionKind injection_from(const std::string& name, const std::string& path) {
  for (auto k : {InjectionKind::kCovariateMeanShift, InjectionKind::kPriorRebalance, InjectionKind::kAbruptChangepoint,
                 InjectionKind::kGradualLinear, InjectionKind::kAnomalyBurst}) {
    if (name == injection_name(k)) return k;
  }
  throw config_error(path, "unknown injection kind '" + name + "'");
}

json Injection::json() const {
  nlohmann::json j{{"kind", injection_name(kind)}, {"start", start},    {"duration", duration},
                   {"magnitude", magnitude},       {"dims", dims}};
  if (!proportions.empty()) j["proportions"] = proportions;
  return j;
}

std::vector<Injection> parse_injections(const json& j, const std::string& path, std::uint64_t events) {
  if (!j.is_array()) throw config_error(path, "must be an array");
  std::vector<Injection> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto p = path + "[" + std::to_string(i) + "]";
    Injection inj;
    {
      Doc d(j[i], p);
      if (!d.has("kind")) throw config_error(d.at("kind"), "missing");
      inj.kind = injection_from(d.string("kind", ""), d.at("kind"));
      inj.start = d.integer("start", 0, 0, std::numeric_limits<std::uint64_t>::max());
      inj.duration = d.integer("duration", 0, 0, std::numeric_limits<std::uint64_t>::max());
      const bool unit = inj.kind == InjectionKind::kPriorRebalance || inj.kind == InjectionKind::kAbruptChangepoint;
      inj.magnitude = d.number("magnitude", 0.0, 0.0, unit ? 1.0 : 1e6);
      if (d.has("dims")) {
        const auto& arr = d.raw("dims");
        if (!arr.is_array() || arr.empty()) throw config_error(d.at("dims"), "must be a non-empty array");
        inj.dims.clear();
        for (const auto& x : arr) {
          if (!x.is_number_integer() || x.get<std::int64_t>() < 0) throw config_error(d.at("dims"), "entries must be non-negative integers");
          inj.dims.push_back(x.get<std::size_t>());
        }
      }
      if (d.has("proportions")) {
        const auto& arr = d.raw("proportions");
        if (!arr.is_array() || arr.size() < 2) throw config_error(d.at("proportions"), "needs one entry per class");
        double sum = 0.0;
        for (const auto& x : arr) {
          if (!x.is_number() || x.get<double>() < 0.0)
            throw config_error(d.at("proportions"), "entries must be non-negative numbers");
          inj.proportions.push_back(x.get<double>());
          sum += x.get<double>();
        }
        if (std::abs(sum - 1.0) > 1e-9) throw config_error(d.at("proportions"), "must sum to 1");
      }
      if (inj.kind == InjectionKind::kPriorRebalance && inj.proportions.empty())
        throw config_error(d.at("proportions"), "required for prior_rebalance");
      if (inj.kind == InjectionKind::kAbruptChangepoint && inj.duration != 0)
        throw config_error(d.at("duration"), "abrupt_changepoint takes duration 0");
      if ((inj.kind == InjectionKind::kGradualLinear || inj.kind == InjectionKind::kAnomalyBurst) && inj.duration == 0)
        throw config_error(d.at("duration"), std::string(injection_name(inj.kind)) + " needs a positive duration");
      if (events != 0) {
        if (inj.start >= events)
          throw config_error(d.at("start"), "beyond the stream length " + std::to_string(events));
        if (inj.start + inj.duration > events)
          throw config_error(d.at("duration"), "runs past the stream length " + std::to_string(events));
      }
    }
    out.push_back(std::move(inj));
  }
  return out;
}

ScenarioConfig ScenarioConfig::parse(const nlohmann::json& j) {
  ScenarioConfig c;
  Doc root(j, "");
  if (!root.has("seed")) throw config_error("seed", "missing (runs must be seeded)");
  c.seed = root.integer("seed", 0, 0, std::numeric_limits<std::uint64_t>::max());

  if (root.has("stream")) {
    Doc s(root.raw("stream"), "stream");
    if (s.has("input")) c.input = fs::path(s.string("input", ""));
    if (s.has("generator")) {
      Doc g(s.raw("generator"), "stream.generator");
      auto& gen = c.generator;
      gen.events = g.integer("events", gen.events, 1, 100'000'000);
      gen.dims = g.integer("dims", gen.dims, 1, 1024);
      gen.classes = g.integer("classes", gen.classes, 2, 64);
      gen.separation = g.number("separation", gen.separation, 0.0, 1e6);
      gen.noise = g.number("noise", gen.noise, 1e-9, 1e6);
      gen.interval_ms = static_cast<std::int64_t>(g.integer("interval_ms", gen.interval_ms, 1, 86'400'000));
      if (g.has("class_weights")) {
        const auto& w = g.raw("class_weights");
        if (!w.is_array() || w.size() != gen.classes)
          throw config_error("stream.generator.class_weights", "needs one weight per class");
        for (const auto& x : w) {
          if (!x.is_number() || x.get<double>() < 0.0)
            throw config_error("stream.generator.class_weights", "weights must be non-negative");
          gen.class_weights.push_back(x.get<double>());
        }
      }
    }
  }
  if (root.has("feedback")) {
    Doc f(root.raw("feedback"), "feedback");
    c.feedback.delay_ms = static_cast<std::int64_t>(f.integer("delay_ms", c.feedback.delay_ms, 0, 86'400'000));
    c.feedback.jitter_ms = static_cast<std::int64_t>(f.integer("jitter_ms", c.feedback.jitter_ms, 0, 86'400'000));
    c.feedback.drop_rate = f.number("drop_rate", c.feedback.drop_rate, 0.0, 1.0);
  }
  if (root.has("injections")) {
    c.injections = parse_injections(root.raw("injections"), "injections", c.input ? 0 : c.generator.events);
    for (std::size_t i = 0; i < c.injections.size(); ++i) {
      for (auto d : c.injections[i].dims) {
        if (!c.input && d >= c.generator.dims)
          throw config_error("injections[" + std::to_string(i) + "].dims", "dimension out of range");
      }
      if (!c.input && !c.injections[i].proportions.empty() &&
          c.injections[i].proportions.size() != c.generator.classes)
        throw config_error("injections[" + std::to_string(i) + "].proportions", "needs one entry per class");
    }
  }
  if (root.has("sketch")) {
    Doc s(root.raw("sketch"), "sketch");
    c.sketch_expected_distinct = s.integer("expected_distinct", c.sketch_expected_distinct, 1, 1ull << 40);
  }
  if (root.has("joiner")) {
    Doc s(root.raw("joiner"), "joiner");
    c.joiner.watermark_lag = static_cast<std::int64_t>(s.integer("watermark_lag_ms", c.joiner.watermark_lag, 0, 1ull << 40));
    c.joiner.timeout = static_cast<std::int64_t>(s.integer("timeout_ms", c.joiner.timeout, 0, 1ull << 40));
    c.joiner.max_buffer = s.integer("max_buffer", c.joiner.max_buffer, 1, 1ull << 32);
    try {
      c.joiner.validate();
    } catch (const Error& e) {
      throw config_error("joiner", e.what());
    }
  }
  if (root.has("reservoir")) {
    Doc s(root.raw("reservoir"), "reservoir");
    c.reservoir.capacity = s.integer("capacity", c.reservoir.capacity, 1, kMaxU);
    c.reservoir.decay_factor = s.number("decay_factor", c.reservoir.decay_factor, 1e-6, 1.0);
    c.reservoir.decay_period = s.integer("decay_period", c.reservoir.decay_period, 1, kMaxU);
  }
  auto window = [](Doc& d, monitor::WindowConfig& w) {
    w.reference_size = d.integer("reference_size", w.reference_size, 2, kMaxU);
    w.test_size = d.integer("test_size", w.test_size, 2, kMaxU);
    w.step = d.integer("step", w.step, 1, kMaxU);
    w.confirm = d.integer("confirm", w.confirm, 1, 1000);
    w.detector.alpha = d.number("alpha", w.detector.alpha, 1e-12, 0.5);
    w.detector.top_k = d.integer("top_k", w.detector.top_k, 1, 1024);
    w.detector.max_bins = d.integer("max_bins", w.detector.max_bins, 4, 4096);
  };
  if (root.has("monitor")) {
    Doc m(root.raw("monitor"), "monitor");
    if (m.has("data")) {
      Doc d(m.raw("data"), "monitor.data");
      window(d, c.data.window);
      c.data.anomaly_low = d.number("anomaly_low", c.data.anomaly_low, 0.0, 1.0);
      c.data.anomaly_high = d.number("anomaly_high", c.data.anomaly_high, 0.0, 1.0);
      if (!(c.data.anomaly_low < c.data.anomaly_high))
        throw config_error("monitor.data.anomaly_high", "must exceed anomaly_low");
      c.data.anomaly_alpha = d.number("anomaly_alpha", c.data.anomaly_alpha, 0.0, 1.0);
      c.data.kliep = d.boolean("kliep", c.data.kliep);
      c.data.kliep_centers = d.integer("kliep_centers", c.data.kliep_centers, 1, 100'000);
      c.data.kliep_rows = d.integer("kliep_rows", c.data.kliep_rows, 10, 100'000);
      c.data.kliep_null = d.integer("kliep_null", c.data.kliep_null, 2, 100'000);
    }
    if (m.has("prediction")) {
      Doc d(m.raw("prediction"), "monitor.prediction");
      window(d, c.prediction.window);
      c.prediction.accuracy_window = d.integer("accuracy_window", c.prediction.accuracy_window, 1, kMaxU);
      c.prediction.eddm.warning_ratio = d.number("eddm_warning", c.prediction.eddm.warning_ratio, 0.0, 1.0);
      c.prediction.eddm.drift_ratio = d.number("eddm_drift", c.prediction.eddm.drift_ratio, 0.0, 1.0);
      c.prediction.eddm.min_errors = d.integer("eddm_min_errors", c.prediction.eddm.min_errors, 1, kMaxU);
      if (!(c.prediction.eddm.drift_ratio < c.prediction.eddm.warning_ratio))
        throw config_error("monitor.prediction.eddm_drift", "must be below eddm_warning");
      c.prediction.bootstrap = d.integer("bootstrap", c.prediction.bootstrap, 10, 100'000);
    }
  }
  if (root.has("model")) {
    Doc m(root.raw("model"), "model");
    try {
      c.model.family = modelkit::family_from(m.string("family", modelkit::family_name(c.model.family)));
    } catch (const Error&) {
      throw config_error("model.family", "must be sgd_linear_classifier or gaussian_naive_bayes");
    }
    if (m.has("hyperparams")) {
      const auto& hp = m.raw("hyperparams");
      if (!hp.is_object()) throw config_error("model.hyperparams", "must be an object");
      for (const auto& [k, v] : hp.items()) {
        if (!v.is_number()) throw config_error("model.hyperparams." + k, "must be a number");
        c.model.hyperparams[k] = v.get<double>();
      }
      try {
        modelkit::validate(c.model.hyperparams, modelkit::default_space(c.model.family));
      } catch (const Error& e) {
        throw config_error("model.hyperparams", e.what());
      }
    }
    c.model.initial_after = m.integer("initial_after", c.model.initial_after, 1, 1ull << 40);
    c.model.min_examples = m.integer("min_examples", c.model.min_examples, 2, kMaxU);
    c.model.search_budget = m.integer("search_budget", c.model.search_budget, 1, 1000);
    c.model.job_timeout = m.number("job_timeout_s", c.model.job_timeout, 0.0, 1e9);
  }
  c.policy.rules = policy::default_rules();
  if (root.has("policy")) {
    Doc p(root.raw("policy"), "policy");
    if (p.has("rules")) {
      c.policy.rules = policy::load_rules(p.raw("rules"), "policy.rules");
    }
    if (p.has("cost")) c.policy.cost = policy::CostModel::parse(p.raw("cost"), "policy.cost");
    c.policy.evaluate_every = p.integer("evaluate_every", c.policy.evaluate_every, 1, kMaxU);
    c.policy.max_in_flight = p.integer("max_in_flight", c.policy.max_in_flight, 1, 1000);
    c.policy.shift_ttl = p.number("shift_ttl_s", c.policy.shift_ttl, 0.0, 1e9);
    c.policy.prediction_value = p.number("prediction_value", c.policy.prediction_value, 0.0, 1e12);
  }
  c.policy.rules_json = json::array();
  for (const auto& r : c.policy.rules) c.policy.rules_json.push_back(r.serialize());
  if (root.has("store")) {
    Doc s(root.raw("store"), "store");
    c.store.log.segment_bytes = s.integer("segment_bytes", c.store.log.segment_bytes, 64, 1ull << 40);
    c.store.budget_bytes = s.integer("budget_bytes", c.store.budget_bytes, 1, 1ull << 50);
    c.store.log.fsync = s.boolean("fsync", c.store.log.fsync);
  }
  if (root.has("report")) {
    Doc r(root.raw("report"), "report");
    c.accuracy_block = r.integer("accuracy_block", c.accuracy_block, 1, kMaxU);
  }
  return c;
}

ScenarioConfig ScenarioConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kNotFound, "config file " + path.string() + " cannot be opened");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::kConfiguration, path.string() + ": not valid JSON (" + e.what() + ")");
  }
  return parse(j);
}

json ScenarioConfig::json() const {
  nlohmann::json stream = nlohmann::json::object();
  nlohmann::json gen{{"events", generator.events},       {"dims", generator.dims},
                     {"classes", generator.classes},     {"separation", generator.separation},
                     {"noise", generator.noise},         {"interval_ms", generator.interval_ms}};
  if (!generator.class_weights.empty()) gen["class_weights"] = generator.class_weights;
  stream["generator"] = gen;
  if (input) stream["input"] = input->string();
  nlohmann::json inj = nlohmann::json::array();
  for (const auto& i : injections) inj.push_back(i.json());
  auto window = [](const monitor::WindowConfig& w) {
    return nlohmann::json{{"reference_size", w.reference_size}, {"test_size", w.test_size},
                          {"step", w.step},                     {"confirm", w.confirm},
                          {"alpha", w.detector.alpha},          {"top_k", w.detector.top_k},
                          {"max_bins", w.detector.max_bins}};
  };
  auto data_j = window(data.window);
  data_j.update({{"anomaly_low", data.anomaly_low},
                 {"anomaly_high", data.anomaly_high},
                 {"anomaly_alpha", data.anomaly_alpha},
                 {"kliep", data.kliep},
                 {"kliep_centers", data.kliep_centers},
                 {"kliep_rows", data.kliep_rows},
                 {"kliep_null", data.kliep_null}});
  auto pred_j = window(prediction.window);
  pred_j.update({{"accuracy_window", prediction.accuracy_window},
                 {"eddm_warning", prediction.eddm.warning_ratio},
                 {"eddm_drift", prediction.eddm.drift_ratio},
                 {"eddm_min_errors", prediction.eddm.min_errors},
                 {"bootstrap", prediction.bootstrap}});
  nlohmann::json hp = nlohmann::json::object();
  for (const auto& [k, v] : model.hyperparams) hp[k] = v;
  return {{"seed", seed},
          {"stream", stream},
          {"feedback",
           {{"delay_ms", feedback.delay_ms}, {"jitter_ms", feedback.jitter_ms}, {"drop_rate", feedback.drop_rate}}},
          {"injections", inj},
          {"sketch", {{"expected_distinct", sketch_expected_distinct}}},
          {"joiner",
           {{"watermark_lag_ms", joiner.watermark_lag}, {"timeout_ms", joiner.timeout}, {"max_buffer", joiner.max_buffer}}},
          {"reservoir",
           {{"capacity", reservoir.capacity},
            {"decay_factor", reservoir.decay_factor},
            {"decay_period", reservoir.decay_period}}},
          {"monitor", {{"data", data_j}, {"prediction", pred_j}}},
          {"model",
           {{"family", modelkit::family_name(model.family)},
            {"hyperparams", hp},
            {"initial_after", model.initial_after},
            {"min_examples", model.min_examples},
            {"search_budget", model.search_budget},
            {"job_timeout_s", model.job_timeout}}},
          {"policy",
           {{"rules", policy.rules_json},
            {"cost",
             {{"retrain_cost", policy.cost.retrain_cost},
              {"horizon_events", policy.cost.horizon_events},
              {"min_cadence", policy.cost.min_cadence},
              {"emergency_p", policy.cost.emergency_p}}},
            {"evaluate_every", policy.evaluate_every},
            {"max_in_flight", policy.max_in_flight},
            {"shift_ttl_s", policy.shift_ttl},
            {"prediction_value", policy.prediction_value}}},
          {"store",
           {{"segment_bytes", store.log.segment_bytes},
            {"budget_bytes", store.budget_bytes},
            {"fsync", store.log.fsync}}},
          {"report", {{"accuracy_block", accuracy_block}}}};
}

// ---------------------------------------------------------------------------
// Streams

Injector::Injector(std::vector<Injection> injections, std::vector<double> sigma, std::size_t classes,
                   std::uint64_t seed)
    : injections_(std::move(injections)), sigma_(std::move(sigma)), classes_(classes), rng_(splitmix64(seed ^ 0x1A7EC7)) {}

Event Injector::apply(std::uint64_t index, Event e) {
  constexpr std::size_t kPool = 64;
  std::optional<int> y = e.label ? class_of(*e.label) : std::nullopt;
  if (y && e.features) {
    auto& pool = pool_[*y];
    pool.push_back(e.features->values);
    if (pool.size() > kPool) pool.pop_front();
  }
  auto sigma = [&](std::size_t d) { return d < sigma_.size() ? sigma_[d] : 1.0; };
  auto shift_dims = [&](const Injection& inj, double scale) {
    if (!e.features) return;
    for (auto d : inj.dims) {
      if (d < e.features->values.size()) e.features->values[d] += scale * inj.magnitude * sigma(d);
    }
  };
  for (const auto& inj : injections_) {
    if (index < inj.start) continue;
    const bool open_ended = inj.duration == 0;
    const bool in_span = open_ended ? true : index < inj.start + inj.duration;
    switch (inj.kind) {
      case InjectionKind::kCovariateMeanShift:
        if (in_span) shift_dims(inj, 1.0);
        break;
      case InjectionKind::kGradualLinear: {
        const double f = std::min(1.0, static_cast<double>(index - inj.start) / static_cast<double>(inj.duration));
        shift_dims(inj, f);
        break;
      }
      case InjectionKind::kAnomalyBurst:
        if (in_span) shift_dims(inj, rng_.bernoulli(0.5) ? 1.0 : -1.0);
        break;
      case InjectionKind::kPriorRebalance: {
        if (!in_span || !y) break;
        if (!rng_.bernoulli(inj.magnitude)) break;
        double u = rng_.uniform(), acc = 0.0;
        int target = static_cast<int>(inj.proportions.size()) - 1;
        for (std::size_t c = 0; c < inj.proportions.size(); ++c) {
          acc += inj.proportions[c];
          if (u < acc) {
            target = static_cast<int>(c);
            break;
          }
        }
        if (target == *y) break;
        auto it = pool_.find(target);
        if (it == pool_.end() || it->second.empty()) break;  // nothing to draw from yet
        if (e.features) e.features->values = it->second[rng_.below(it->second.size())];
        e.label = static_cast<double>(target);
        y = target;
        break;
      }
      case InjectionKind::kAbruptChangepoint:
        if (!y || classes_ < 2) break;
        if (rng_.bernoulli(inj.magnitude)) {
          y = (*y + 1) % static_cast<int>(classes_);
          e.label = static_cast<double>(*y);
        }
        break;
    }
  }
  return e;
}

Generator::Generator(GeneratorSpec spec, std::uint64_t seed) : spec_(std::move(spec)), rng_(splitmix64(seed ^ 0x6E6E)) {
  std::vector<double> w = spec_.class_weights;
  if (w.empty()) w.assign(spec_.classes, 1.0);
  double total = 0.0;
  for (double x : w) total += x;
  if (!(total > 0.0)) throw Error(Errc::kConfiguration, "stream.generator.class_weights: must not all be zero");
  double acc = 0.0;
  for (double x : w) cumulative_.push_back(acc += x / total);
}

Event Generator::next() {
  const double u = rng_.uniform();
  int y = static_cast<int>(cumulative_.size()) - 1;
  for (std::size_t c = 0; c < cumulative_.size(); ++c) {
    if (u < cumulative_[c]) {
      y = static_cast<int>(c);
      break;
    }
  }
  Features f;
  f.values.resize(spec_.dims);
  for (std::size_t d = 0; d < spec_.dims; ++d) f.values[d] = spec_.noise * rng_.normal();
  const double pos = spec_.classes > 1 ? 2.0 * y / static_cast<double>(spec_.classes - 1) - 1.0 : 0.0;
  f.values[0] += spec_.separation * pos;
  Event e;
  e.key = "e" + std::to_string(index_);
  e.ts = static_cast<std::int64_t>(index_) * spec_.interval_ms;
  e.features = std::move(f);
  e.label = static_cast<double>(y);
  ++index_;
  return e;
}

namespace {

std::vector<Event> read_stream(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kNotFound, "stream file " + path.string() + " cannot be opened");
  std::vector<Event> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(parse_event(line));
    } catch (const Error& e) {
      throw Error(Errc::kData, path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

// Per-dim sd of the events before `until` (1 where undefined).
std::vector<double> estimate_sigma(const std::vector<Event>& events, std::uint64_t until) {
  std::vector<double> mean, m2;
  std::vector<std::uint64_t> n;
  for (std::uint64_t i = 0; i < std::min<std::uint64_t>(until, events.size()); ++i) {
    if (!events[i].features) continue;
    const auto& x = events[i].features->values;
    if (mean.size() < x.size()) {
      mean.resize(x.size());
      m2.resize(x.size());
      n.resize(x.size());
    }
    for (std::size_t d = 0; d < x.size(); ++d) {
      ++n[d];
      const double delta = x[d] - mean[d];
      mean[d] += delta / static_cast<double>(n[d]);
      m2[d] += delta * (x[d] - mean[d]);
    }
  }
  std::vector<double> sd(mean.size(), 1.0);
  for (std::size_t d = 0; d < sd.size(); ++d) {
    if (n[d] > 1 && m2[d] > 0.0) sd[d] = std::sqrt(m2[d] / static_cast<double>(n[d] - 1));
  }
  return sd;
}

std::size_t max_class(const std::vector<Event>& events) {
  int hi = 1;
  for (const auto& e : events) {
    if (e.label) {
      if (auto c = class_of(*e.label)) hi = std::max(hi, *c);
    }
  }
  return static_cast<std::size_t>(hi) + 1;
}

std::uint64_t earliest_start(const std::vector<Injection>& inj) {
  std::uint64_t s = std::numeric_limits<std::uint64_t>::max();
  for (const auto& i : inj) s = std::min(s, i.start);
  return s;
}

}  // namespace

void inject_file(const fs::path& in, const fs::path& out, const std::vector<Injection>& injections, std::uint64_t seed,
                 std::size_t classes) {
  auto events = read_stream(in);
  for (std::size_t i = 0; i < injections.size(); ++i) {
    if (injections[i].start >= events.size() && !events.empty())
      throw config_error("injections[" + std::to_string(i) + "].start",
                         "beyond the stream length " + std::to_string(events.size()));
  }
  Injector injector(injections, estimate_sigma(events, earliest_start(injections)),
                    classes ? classes : max_class(events), seed);
  const fs::path tmp = out.string() + ".tmp";
  {
    std::ofstream o(tmp, std::ios::trunc);
    if (!o) throw Error(Errc::kIo, "cannot write " + tmp.string());
    for (std::uint64_t i = 0; i < events.size(); ++i) o << to_json(injector.apply(i, std::move(events[i]))).dump() << '\n';
    if (!o) throw Error(Errc::kIo, "short write to " + tmp.string());
  }
  fs::rename(tmp, out);
}

// ---------------------------------------------------------------------------
// Data flow

const std::set<std::pair<std::string, std::string>>& allowed_edges() {
  static const std::set<std::pair<std::string, std::string>> edges{
      {"source", "sketcher"},
      {"sketcher", "joiner"},
      {"sketcher", "data_monitor"},
      {"sketcher", "predictor"},
      {"joiner", "reservoir"},
      {"joiner", "prediction_monitor"},
      {"predictor", "prediction_monitor"},
      {"data_monitor", "state_db"},
      {"prediction_monitor", "state_db"},
      {"state_db", "policy"},
      {"policy", "trainer"},
      {"policy", "predictor"},
      {"reservoir", "trainer"},
      {"trainer", "model_db"},
      {"trainer", "training_db"},
      {"training_db", "trainer"},
      {"model_db", "predictor"},
      // logging sinks every module may write to
      {"joiner", "diag"},
      {"data_monitor", "diag"},
      {"data_monitor", "health"},
      {"prediction_monitor", "diag"},
      {"prediction_monitor", "health"},
      {"policy", "diag"},
      {"policy", "health"},
      {"trainer", "diag"},
      {"trainer", "health"},
      {"predictor", "diag"},
      {"predictor", "health"},
      {"joiner", "health"},
  };
  return edges;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

PhaseAccuracy phase(const std::vector<PhaseAccuracy>& blocks, std::uint64_t lo, std::uint64_t hi) {
  PhaseAccuracy p{lo, hi, 0, 0};
  for (const auto& b : blocks) {
    if (b.begin >= lo && b.end <= hi) {
      p.predicted += b.predicted;
      p.correct += b.correct;
    }
  }
  return p;
}

bool is_policy_retrain(const Activation& a) { return a.cause.rfind("d-", 0) == 0; }

RunReport finalize(std::uint64_t seed, std::uint64_t events, const std::vector<PhaseAccuracy>& blocks,
                   const std::vector<Injection>& injections, std::vector<Detection> detections,
                   std::vector<ActionEntry> actions, std::vector<Activation> activations) {
  RunReport r;
  r.seed = seed;
  r.events = events;
  for (const auto& b : blocks) {
    r.predicted += b.predicted;
    r.correct += b.correct;
  }
  for (const auto& inj : injections) {
    InjectionOutcome o;
    o.kind = injection_name(inj.kind);
    o.start = inj.start;
    const bool want_anomaly = inj.kind == InjectionKind::kAnomalyBurst;
    for (const auto& d : detections) {
      if (d.event < inj.start) continue;
      if ((d.type == "anomaly") != want_anomaly) continue;
      o.detected_at = d.event;
      o.first_report = d.id;
      break;
    }
    for (const auto& a : activations) {
      if (a.event >= inj.start && is_policy_retrain(a)) {
        o.retrained_at = a.event;
        break;
      }
    }
    const std::uint64_t horizon = std::min<std::uint64_t>(inj.start + 10'000, events);
    o.pre = phase(blocks, inj.start >= 10'000 ? inj.start - 10'000 : 0, inj.start);
    o.drop = phase(blocks, inj.start, o.retrained_at ? *o.retrained_at : horizon);
    o.recovery = phase(blocks, horizon >= 1000 ? horizon - 1000 : 0, horizon);
    r.injections.push_back(o);
  }
  r.detections = std::move(detections);
  r.actions = std::move(actions);
  r.activations = std::move(activations);
  return r;
}

json phase_json(const PhaseAccuracy& p) {
  return {{"begin", p.begin}, {"end", p.end}, {"predicted", p.predicted}, {"correct", p.correct},
          {"accuracy", p.accuracy()}};
}

std::map<std::string, std::string> store_paths(const fs::path& root) {
  std::map<std::string, std::string> m;
  m["models"] = (root / "models").string();
  for (auto k : {StoreKind::kTraining, StoreKind::kState, StoreKind::kHealth, StoreKind::kDiagnostic})
    m[store::store_kind_name(k)] = (root / store::store_kind_name(k)).string();
  return m;
}

}  // namespace

std::size_t RunReport::policy_retrains() const {
  return static_cast<std::size_t>(std::count_if(activations.begin(), activations.end(), is_policy_retrain));
}

json RunReport::json() const {
  nlohmann::json det = nlohmann::json::array(), act = nlohmann::json::array(), actv = nlohmann::json::array(),
                 inj = nlohmann::json::array();
  for (const auto& d : detections)
    det.push_back({{"event", d.event}, {"id", d.id}, {"type", d.type}, {"magnitude", d.magnitude}});
  for (const auto& a : actions)
    act.push_back({{"event", a.event},
                   {"ts", a.ts},
                   {"decision_id", a.decision_id},
                   {"action", a.action},
                   {"rule_id", a.rule_id},
                   {"outcome", a.outcome}});
  for (const auto& a : activations) actv.push_back({{"event", a.event}, {"version", a.version}, {"cause", a.cause}});
  for (const auto& o : injections) {
    nlohmann::json j{{"kind", o.kind},
                     {"start", o.start},
                     {"pre", phase_json(o.pre)},
                     {"drop", phase_json(o.drop)},
                     {"recovery", phase_json(o.recovery)}};
    j["detected_at"] = o.detected_at ? nlohmann::json(*o.detected_at) : nlohmann::json(nullptr);
    j["latency_events"] = o.detected_at ? nlohmann::json(*o.detected_at - o.start) : nlohmann::json(nullptr);
    j["first_report"] = o.first_report ? nlohmann::json(*o.first_report) : nlohmann::json(nullptr);
    j["retrained_at"] = o.retrained_at ? nlohmann::json(*o.retrained_at) : nlohmann::json(nullptr);
    inj.push_back(j);
  }
  return {{"seed", seed},
          {"events", events},
          {"predicted", predicted},
          {"correct", correct},
          {"accuracy", predicted ? static_cast<double>(correct) / static_cast<double>(predicted) : 0.0},
          {"monitor_reports", det},
          {"actions", act},
          {"activations", actv},
          {"policy_retrains", policy_retrains()},
          {"injections", inj},
          {"sketch_bytes", sketch_bytes},
          {"store_bytes", store_bytes},
          {"store_paths", store_paths}};
}

std::string RunReport::text() const {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << "seed " << seed << ", " << events << " events, " << predicted << " predictions, accuracy "
     << (predicted ? static_cast<double>(correct) / static_cast<double>(predicted) : 0.0) << "\n";
  std::size_t detected = 0;
  for (const auto& o : injections) detected += o.detected_at.has_value();
  os << "detections: " << detected << " of " << injections.size() << " injections\n";
  os << "monitor reports: " << detections.size() << "\n";
  for (const auto& d : detections)
    os << "  event " << d.event << "  " << d.type << "  magnitude " << d.magnitude << "  " << d.id << "\n";
  os << "actions: " << actions.size() << "\n";
  for (const auto& a : actions)
    os << "  event " << a.event << "  " << a.action << " (" << a.outcome << ")  rule " << a.rule_id << "  "
       << a.decision_id << "\n";
  os << "activations: " << activations.size() << " (policy retrains " << policy_retrains() << ")\n";
  for (const auto& a : activations) os << "  event " << a.event << "  v" << a.version << "  " << a.cause << "\n";
  for (const auto& o : injections) {
    os << "injection " << o.kind << " at " << o.start << "\n";
    os << "  detection latency: ";
    if (o.detected_at)
      os << (*o.detected_at - o.start) << " events (" << *o.first_report << ")\n";
    else
      os << "not detected\n";
    os << "  retrained at: " << (o.retrained_at ? std::to_string(*o.retrained_at) : std::string("never")) << "\n";
    os << "  accuracy pre " << o.pre.accuracy() << "  drop " << o.drop.accuracy() << "  recovery "
       << o.recovery.accuracy() << "\n";
  }
  os << "sketch memory: " << sketch_bytes << " bytes\n";
  os << "store bytes: " << store_bytes << "\n";
  for (const auto& [k, v] : store_paths) os << "  " << k << ": " << v << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Run

namespace {

struct ThreadGuard {
  explicit ThreadGuard(bool single) : saved(omp_get_max_threads()), active(single) {
    if (active) omp_set_num_threads(1);
  }
  ~ThreadGuard() {
    if (active) omp_set_num_threads(saved);
  }
  int saved;
  bool active;
};

struct Feedback {
  std::int64_t ts;
  std::uint64_t seq;
  std::string key;
  Label label;
  bool operator>(const Feedback& o) const { return ts != o.ts ? ts > o.ts : seq > o.seq; }
};

class Runner {
 public:
  Runner(const ScenarioConfig& cfg, const fs::path& out, const RunOptions& opt)
      : cfg_(cfg),
        out_(out),
        exec_(opt.single_thread ? ExecPolicy::kSerial : ExecPolicy::kParallel),
        flow_(opt.flow ? *opt.flow : local_flow_),
        stores_(out, cfg.store),
        sketch_(sketch::SketchPreset::four_percent(cfg.sketch_expected_distinct)),
        joiner_(cfg.joiner),
        reservoir_(cfg.reservoir.capacity, cfg.reservoir.decay_factor, cfg.reservoir.decay_period,
                   splitmix64(cfg.seed ^ 0x5245)),
        data_(data_config()),
        pm_(prediction_config()),
        world_(&stores_),
        registry_(&stores_.models()),
        executor_(registry_, predictor_,
                  {[this](const monitor::HealthEvent& e) {
                     flow_.record("policy", "health");
                     health(e);
                   },
                   [this](const json& j) { on_decision_logged(j); },
                   [this](std::uint64_t v) { on_rollback(v); }},
                  cfg.policy.max_in_flight),
        feedback_rng_(splitmix64(cfg.seed ^ 0xFEED)) {
    world_.set_shift_ttl(static_cast<std::int64_t>(cfg.policy.shift_ttl * 1000.0));
    model_stream_.subscribe([this](std::shared_ptr<const modelkit::ModelArtifact> m) { predictor_.activate(m); });
  }

  RunReport go() {
    std::vector<Event> file_events;
    std::optional<Generator> gen;
    std::vector<double> sigma;
    std::size_t classes = cfg_.generator.classes;
    std::uint64_t n = cfg_.generator.events;
    if (cfg_.input) {
      file_events = read_stream(*cfg_.input);
      n = file_events.size();
      for (std::size_t i = 0; i < cfg_.injections.size(); ++i) {
        if (cfg_.injections[i].start >= n)
          throw config_error("injections[" + std::to_string(i) + "].start",
                             "beyond the stream length " + std::to_string(n));
      }
      sigma = estimate_sigma(file_events, earliest_start(cfg_.injections));
      classes = max_class(file_events);
    } else {
      gen.emplace(cfg_.generator, cfg_.seed);
      sigma.assign(cfg_.generator.dims, cfg_.generator.noise);
    }
    classes_ = classes;
    Injector injector(cfg_.injections, sigma, classes, cfg_.seed);
    diag({{"type", "run"}, {"seed", cfg_.seed}, {"events", n}, {"config", cfg_.json()}});
    dlog().info("run: seed {} with {} events into {}", cfg_.seed, n, out_.string());

    for (std::uint64_t i = 0; i < n; ++i) {
      event_ = i;
      Event e = gen ? gen->next() : std::move(file_events[i]);
      e = injector.apply(i, std::move(e));
      step(e);
      now_ = e.ts;
      if ((i + 1) % cfg_.policy.evaluate_every == 0) tick();
      if ((i + 1) % cfg_.accuracy_block == 0) flush_block(i + 1);
    }
    flush_block(n);
    const std::uint64_t sketch_bytes = sketch_.serialize().size() + data_.sketch_bytes();
    diag({{"type", "end"}, {"events", n}, {"sketch_bytes", sketch_bytes}});
    stores_.seal_all();

    auto rep = finalize(cfg_.seed, n, blocks_, cfg_.injections, detections_, actions_, activations_);
    rep.sketch_bytes = sketch_bytes;
    rep.store_bytes = stores_.bytes();
    rep.store_paths = store_paths(out_);
    dlog().info("run: done, {} detections, {} actions, {} policy retrains", rep.detections.size(),
                 rep.actions.size(), rep.policy_retrains());
    return rep;
  }

 private:
  monitor::DataMonitorConfig data_config() const {
    auto c = cfg_.data;
    c.seed = splitmix64(cfg_.seed ^ 0xDA7A);
    c.policy = exec_;
    c.window.detector.policy = exec_;
    if (!cfg_.input) {
      c.dims = cfg_.generator.dims;
      c.window.detector.feature_names.clear();
      for (std::size_t d = 0; d < cfg_.generator.dims; ++d) c.window.detector.feature_names.push_back("x" + std::to_string(d));
    }
    return c;
  }
  monitor::PredictionMonitorConfig prediction_config() const {
    auto c = cfg_.prediction;
    c.seed = splitmix64(cfg_.seed ^ 0x9ED);
    c.window.detector.policy = exec_;
    c.window.detector.feature_names = {"confidence"};
    return c;
  }

  void diag(const json& j) { stores_.append(StoreKind::kDiagnostic, j); }
  void health(const monitor::HealthEvent& e) { stores_.append(StoreKind::kHealth, monitor::to_json(e)); }

  void step(const Event& e) {
    flow_.record("source", "sketcher");
    sketch_.add(e.key);
    deliver_feedback(e.ts);

    // Feedback for this event; both draws always happen so the stream of
    // random numbers does not depend on the outcome.
    const bool drop = feedback_rng_.bernoulli(cfg_.feedback.drop_rate);
    const auto jitter = static_cast<std::int64_t>(feedback_rng_.uniform() * static_cast<double>(cfg_.feedback.jitter_ms));
    if (e.label && !drop) feedback_.push({e.ts + cfg_.feedback.delay_ms + jitter, feedback_seq_++, e.key, *e.label});

    if (e.features) {
      flow_.record("sketcher", "joiner");
      auto r = joiner_.offer_primary({e.key, e.ts, *e.features});
      if (r.status == joiner::OfferStatus::kBackpressure) {
        flow_.record("joiner", "diag");
        diag({{"type", "backpressure"}, {"event", event_}, {"key", e.key}});
      }
      joined(r.emitted);
    }
    for (const auto& x : joiner_.advance_watermark(e.ts)) {
      flow_.record("joiner", "diag");
      flow_.record("joiner", "health");
      diag({{"type", "expiry"}, {"event", event_}, {"key", x.key}, {"side", joiner::side_name(x.side)},
            {"ts", x.ts}, {"age", x.age}});
      health({e.ts, monitor::HealthKind::kExpiry, "joiner",
              {{"key", x.key}, {"side", joiner::side_name(x.side)}, {"age", x.age}}});
      if (x.side == joiner::Side::kPrimary) {
        auto it = pending_.find(x.key);
        if (it != pending_.end()) {
          it->second.pop_front();
          if (it->second.empty()) pending_.erase(it);
        }
      }
    }

    flow_.record("sketcher", "data_monitor");
    monitored(data_.step(e), "data_monitor");

    if (predictor_.active_version() && e.features) {
      flow_.record("sketcher", "predictor");
      std::optional<modelkit::Prediction> pred;
      try {
        pred = predictor_.predict(e.features->values, e.ts);
      } catch (const Error& err) {
        flow_.record("predictor", "diag");
        diag({{"type", "predict_failed"}, {"event", event_}, {"error", err.what()}});
      }
      if (pred) {
        if (e.label) {
          if (auto truth = class_of(*e.label)) {
            ++block_.predicted;
            block_.correct += pred->value == *truth;
          }
        }
        pending_[e.key].push_back(*pred);
        flow_.record("predictor", "prediction_monitor");
        monitored(pm_.step(*pred, std::nullopt), "prediction_monitor");
      }
    }
  }

  void deliver_feedback(std::int64_t now) {
    while (!feedback_.empty() && feedback_.top().ts <= now) {
      const auto f = feedback_.top();
      feedback_.pop();
      auto r = joiner_.offer_feedback({f.key, f.ts, f.label, false});
      joined(r.emitted);
    }
  }

  void joined(const std::vector<joiner::JoinedExample>& emitted) {
    for (const auto& ex : emitted) {
      flow_.record("joiner", "reservoir");
      reservoir_.step(ex);
      auto it = pending_.find(ex.key);
      if (it == pending_.end()) continue;
      const auto pred = it->second.front();
      it->second.pop_front();
      if (it->second.empty()) pending_.erase(it);
      const auto truth = class_of(ex.label);
      if (!truth || pred.model_version != predictor_.active_version().value_or(0)) continue;
      flow_.record("joiner", "prediction_monitor");
      monitored(pm_.step(pred, truth), "prediction_monitor");
    }
  }

  void monitored(const monitor::StepResult& r, const char* source) {
    for (const auto& h : r.events) {
      flow_.record(source, "health");
      health(h);
    }
    for (const auto& rep : r.reports) {
      flow_.record(source, "state_db");
      world_.note_report(rep);
      flow_.record(source, "diag");
      diag({{"type", "report"}, {"event", event_}, {"source", source}, {"report", shift::to_json(rep)}});
      const auto key = std::make_tuple(std::string(source), rep.ref_window, rep.test_window);
      if (windows_seen_.insert(key).second) {
        diag({{"type", "window"},
              {"source", source},
              {"reference_id", rep.ref_window},
              {"test_id", rep.test_window},
              {"event", event_}});
      }
      detections_.push_back({event_, rep.id, shift::shift_type_name(rep.type), rep.magnitude});
      dlog().debug("event {}: {} report {} magnitude {:.3f}", event_, shift::shift_type_name(rep.type), rep.id,
                    rep.magnitude);
    }
  }

  void tick() {
    if (!predictor_.active_version() && event_ + 1 >= cfg_.model.initial_after) {
      flow_.record("reservoir", "trainer");
      train_and_activate(reservoir_.items_by_arrival(), "initial", world_.last_snapshot_id());
    }
    try_train();

    auto& live = world_.live();
    flow_.record("prediction_monitor", "state_db");
    live.label_coverage = joiner_.stats().label_coverage();
    live.model_health = pm_.model_health();
    live.health_samples = pm_.health_samples();
    live.eddm_level = shift::level_name(pm_.eddm().level);
    live.active_model_version = predictor_.active_version().value_or(0);
    live.retrain_cost = cfg_.policy.cost.retrain_cost;
    live.prediction_value = cfg_.policy.prediction_value;
    live.horizon_events = cfg_.policy.cost.horizon_events;
    live.retrain_in_flight = executor_.in_flight() > 0;
    const auto snap = world_.world_state(now_);

    flow_.record("state_db", "policy");
    const auto [action, prov] = policy::evaluate(snap, cfg_.policy.rules, cfg_.policy.cost);
    if (!prov.rule_id.empty()) world_.live().rule_last_fired[prov.rule_id] = now_;
    current_decision_ = prov.decision_id;
    try {
      if (action.kind == policy::ActionKind::kRetrain) flow_.record("policy", "trainer");
      if (action.kind == policy::ActionKind::kRollback) flow_.record("policy", "predictor");
      executor_.apply(action, prov);
    } catch (const Error& err) {
      if (err.code() != Errc::kUnsupported) throw;
      flow_.record("policy", "diag");
      flow_.record("policy", "health");
      json j{{"decision", policy::to_json(prov)}, {"outcome", "unsupported"}, {"message", err.what()}};
      on_decision_logged(j);
      health({now_, monitor::HealthKind::kWarning, "policy", {{"decision_id", prov.decision_id}, {"failed", err.what()}}});
    }
    if (action.kind == policy::ActionKind::kRetrain) try_train();
  }

  void on_decision_logged(json j) {
    flow_.record("policy", "diag");
    j["type"] = "decision";
    j["event"] = event_;
    const auto& d = j.at("decision");
    const auto action = d.at("action").at("kind").get<std::string>();
    if (action != "keep_existing") {
      actions_.push_back({event_, d.at("ts").get<std::int64_t>(), d.at("decision_id").get<std::string>(), action,
                          d.at("rule_id").get<std::string>(), j.at("outcome").get<std::string>()});
      dlog().info("event {}: {} ({}) by rule {}", event_, action, j.at("outcome").get<std::string>(),
                   d.at("rule_id").get<std::string>());
    }
    diag(j);
  }

  void try_train() {
    const auto job = executor_.pending();
    if (!job) return;
    const auto items = reservoir_.items_by_arrival();
    std::vector<joiner::JoinedExample> data;
    for (const auto& it : items) {
      if (it.primary_ts >= job->window_start) data.push_back(it);
    }
    if (data.size() < cfg_.model.min_examples) {
      const bool timed_out = static_cast<double>(now_ - job->enqueued_at) >= cfg_.model.job_timeout * 1000.0;
      if (!timed_out || items.size() < cfg_.model.min_examples) return;  // stays queued
      data.assign(items.end() - static_cast<std::ptrdiff_t>(cfg_.model.min_examples), items.end());
    }
    flow_.record("reservoir", "trainer");
    if (train_and_activate(data, job->decision_id, job->snapshot_id)) executor_.complete(job->decision_id);
  }

  bool train_and_activate(const std::vector<joiner::JoinedExample>& data, const std::string& cause,
                          std::uint64_t snapshot) {
    modelkit::TrainOptions opt;
    opt.family = cfg_.model.family;
    opt.min_examples = cfg_.model.min_examples;
    opt.classes = static_cast<std::uint32_t>(classes_);
    opt.created_at = now_;
    opt.window.snapshot_id = snapshot;
    if (!data.empty()) {
      opt.window.start_ts = data.front().primary_ts;
      opt.window.end_ts = data.back().primary_ts;
    }
    const std::uint64_t seed = splitmix64(cfg_.seed ^ (registry_.latest_version() + 1));
    modelkit::TrainResult res;
    try {
      auto hp = cfg_.model.hyperparams.empty() ? modelkit::default_hyperparams(opt.family) : cfg_.model.hyperparams;
      if (cfg_.model.search_budget > 1) {
        flow_.record("training_db", "trainer");
        hp = modelkit::warm_start_search(history_, modelkit::default_space(opt.family), cfg_.model.search_budget, seed,
                                         data, opt)
                 .best;
      }
      res = modelkit::train(data, hp, seed, opt);
    } catch (const Error& err) {
      if (err.code() != Errc::kNotReady && err.code() != Errc::kData) throw;
      if (cause != "initial") {
        flow_.record("trainer", "diag");
        diag({{"type", "training_failed"}, {"event", event_}, {"cause", cause}, {"error", err.what()}});
      }
      return false;
    }
    flow_.record("trainer", "model_db");
    const auto v = registry_.publish(res.artifact);
    auto rec = res.record;
    rec.version = v;
    flow_.record("trainer", "training_db");
    auto rj = modelkit::to_json(rec);
    rj["cause"] = cause;
    rj["event"] = event_;
    stores_.append(StoreKind::kTraining, rj);
    history_.push_back(rec);

    auto& live = world_.live();
    const auto prev = predictor_.active_version().value_or(0);
    flow_.record("model_db", "predictor");
    model_stream_.publish(registry_.get(v));
    live.previous_model_version = prev;
    live.active_model_version = v;
    live.model_baseline = res.artifact.metrics.accuracy;
    pm_.reset();
    world_.note_retrain(now_);
    activated(v, cause, prev);
    return true;
  }

  void on_rollback(std::uint64_t target) {
    auto& live = world_.live();
    const auto prev = live.active_model_version;
    live.active_model_version = target;
    live.previous_model_version = target > 1 && registry_.contains(target - 1) ? target - 1 : 0;
    live.model_baseline = registry_.get(target)->metrics.accuracy;
    pm_.reset();
    activated(target, "rollback:" + current_decision_, prev);
  }

  void activated(std::uint64_t v, const std::string& cause, std::uint64_t prev) {
    flow_.record("trainer", "diag");
    flow_.record("trainer", "health");
    diag({{"type", "activation"}, {"event", event_}, {"ts", now_}, {"version", v}, {"previous", prev}, {"cause", cause}});
    health({now_, monitor::HealthKind::kMetric, "trainer", {{"activated", v}, {"cause", cause}}});
    activations_.push_back({event_, v, cause});
    dlog().info("event {}: activated model v{} ({})", event_, v, cause);
  }

  void flush_block(std::uint64_t end) {
    if (end <= block_begin_) return;
    block_.begin = block_begin_;
    block_.end = end;
    diag({{"type", "block"}, {"begin", block_.begin}, {"end", block_.end}, {"predicted", block_.predicted},
          {"correct", block_.correct}});
    blocks_.push_back(block_);
    block_ = {};
    block_begin_ = end;
  }

  const ScenarioConfig& cfg_;
  fs::path out_;
  ExecPolicy exec_;
  FlowRecorder local_flow_;
  FlowRecorder& flow_;
  store::Stores stores_;
  sketch::CombinedSketch sketch_;
  joiner::StreamJoiner joiner_;
  sketch::DampedReservoir<joiner::JoinedExample> reservoir_;
  monitor::DataMonitor data_;
  monitor::PredictionMonitor pm_;
  monitor::WorldState world_;
  modelkit::ModelRegistry registry_;
  modelkit::Predictor predictor_;
  modelkit::ModelStream model_stream_;
  policy::LifecycleExecutor executor_;
  Rng feedback_rng_;
  std::priority_queue<Feedback, std::vector<Feedback>, std::greater<>> feedback_;
  std::uint64_t feedback_seq_ = 0;
  std::unordered_map<std::string, std::deque<modelkit::Prediction>> pending_;
  std::set<std::tuple<std::string, std::uint64_t, std::uint64_t>> windows_seen_;
  std::vector<modelkit::TrainingRecord> history_;
  std::size_t classes_ = 2;

  std::uint64_t event_ = 0;
  std::int64_t now_ = 0;
  std::string current_decision_;
  PhaseAccuracy block_;
  std::uint64_t block_begin_ = 0;
  std::vector<PhaseAccuracy> blocks_;
  std::vector<Detection> detections_;
  std::vector<ActionEntry> actions_;
  std::vector<Activation> activations_;
};

store::Stores open_read_only(const fs::path& run_dir) {
  if (!fs::is_directory(run_dir))
    throw Error(Errc::kNotFound, "run directory " + run_dir.string() + " does not exist");
  store::Stores::Options opt;
  opt.log.read_only = true;
  return store::Stores(run_dir, opt);
}

std::vector<json> records(const store::Stores& s, StoreKind k) {
  std::vector<json> out;
  for (const auto& r : s.log(k).replay_all()) out.push_back(r.json());
  return out;
}

}  // namespace

RunReport run(const ScenarioConfig& config, const fs::path& out, const RunOptions& options) {
  if (fs::exists(out) && !fs::is_empty(out))
    throw Error(Errc::kConfiguration, "--out " + out.string() + " is not empty; choose a fresh run directory");
  fs::create_directories(out);
  ThreadGuard threads(options.single_thread);
  Runner runner(config, out, options);
  return runner.go();
}

RunReport report(const fs::path& run_dir) {
  auto stores = open_read_only(run_dir);
  const auto diag = records(stores, StoreKind::kDiagnostic);
  if (diag.empty() || diag.front().value("type", "") != "run")
    throw Error(Errc::kData, "diagnostic log in " + (run_dir / "diag").string() + " has no run header");
  const auto& header = diag.front();
  const auto& cfg = header.at("config");
  const auto injections = parse_injections(cfg.at("injections"), "injections", 0);
  std::vector<PhaseAccuracy> blocks;
  std::vector<Detection> detections;
  std::vector<ActionEntry> actions;
  std::vector<Activation> activations;
  std::optional<std::uint64_t> events;
  std::uint64_t sketch_bytes = 0;
  for (const auto& j : diag) {
    const auto type = j.value("type", "");
    if (type == "block") {
      blocks.push_back({j.at("begin").get<std::uint64_t>(), j.at("end").get<std::uint64_t>(),
                        j.at("predicted").get<std::uint64_t>(), j.at("correct").get<std::uint64_t>()});
    } else if (type == "report") {
      const auto& r = j.at("report");
      detections.push_back({j.at("event").get<std::uint64_t>(), r.at("id").get<std::string>(),
                            r.at("type").get<std::string>(), r.at("magnitude").get<double>()});
    } else if (type == "decision") {
      const auto& d = j.at("decision");
      const auto action = d.at("action").at("kind").get<std::string>();
      if (action == "keep_existing") continue;
      actions.push_back({j.at("event").get<std::uint64_t>(), d.at("ts").get<std::int64_t>(),
                         d.at("decision_id").get<std::string>(), action, d.at("rule_id").get<std::string>(),
                         j.at("outcome").get<std::string>()});
    } else if (type == "activation") {
      activations.push_back({j.at("event").get<std::uint64_t>(), j.at("version").get<std::uint64_t>(),
                             j.at("cause").get<std::string>()});
    } else if (type == "end") {
      events = j.at("events").get<std::uint64_t>();
      sketch_bytes = j.at("sketch_bytes").get<std::uint64_t>();
    }
  }
  if (!events) throw Error(Errc::kData, "run in " + run_dir.string() + " did not complete (no end record)");
  auto rep = finalize(header.at("seed").get<std::uint64_t>(), *events, blocks, injections, std::move(detections),
                      std::move(actions), std::move(activations));
  rep.sketch_bytes = sketch_bytes;
  rep.store_bytes = stores.bytes();
  rep.store_paths = store_paths(run_dir);
  return rep;
}

ReplayResult replay(const fs::path& run_dir) {
  auto stores = open_read_only(run_dir);
  const auto diag = records(stores, StoreKind::kDiagnostic);
  if (diag.empty() || diag.front().value("type", "") != "run")
    throw Error(Errc::kData, "diagnostic log in " + (run_dir / "diag").string() + " has no run header");
  const auto& pcfg = diag.front().at("config").at("policy");
  const auto rules = policy::load_rules(pcfg.at("rules"), "policy.rules");
  const auto cost = policy::CostModel::parse(pcfg.at("cost"), "policy.cost");
  std::set<std::string> rule_ids;
  for (const auto& r : rules) rule_ids.insert(r.id);

  std::map<std::uint64_t, monitor::SystemState> snapshots;
  for (const auto& j : records(stores, StoreKind::kState)) {
    auto s = monitor::system_state_from_json(j);
    snapshots[s.snapshot_id] = std::move(s);
  }
  std::map<std::string, json> reports;
  std::set<std::tuple<std::string, std::uint64_t, std::uint64_t>> windows;
  std::vector<policy::ProvenanceRecord> decisions;
  for (const auto& j : diag) {
    const auto type = j.value("type", "");
    if (type == "report") {
      reports[j.at("report").at("id").get<std::string>()] = j;
    } else if (type == "window") {
      windows.emplace(j.at("source").get<std::string>(), j.at("reference_id").get<std::uint64_t>(),
                      j.at("test_id").get<std::uint64_t>());
    } else if (type == "decision") {
      decisions.push_back(policy::provenance_from_json(j.at("decision")));
    }
  }

  ReplayResult out;
  out.snapshots = snapshots.size();
  out.decisions = decisions.size();
  for (const auto& recorded : decisions) {
    const auto it = snapshots.find(recorded.snapshot_id);
    if (it == snapshots.end()) {
      ++out.mismatches;
      out.broken_chains.push_back(recorded.decision_id + ": snapshot " + std::to_string(recorded.snapshot_id) +
                                  " missing");
      continue;
    }
    const auto [action, prov] = policy::evaluate(it->second, rules, cost);
    if (!(prov == recorded)) ++out.mismatches;
    if (action.kind == policy::ActionKind::kKeepExisting) continue;
    out.actions.push_back(action);

    ++out.chains_checked;
    if (!rule_ids.count(recorded.rule_id)) {
      out.broken_chains.push_back(recorded.decision_id + ": rule '" + recorded.rule_id + "' not in the rule set");
    }
    for (const auto& id : recorded.report_ids) {
      const auto r = reports.find(id);
      if (r == reports.end()) {
        out.broken_chains.push_back(recorded.decision_id + ": report " + id + " missing");
        continue;
      }
      const auto& rep = r->second.at("report");
      const auto w = std::make_tuple(r->second.at("source").get<std::string>(), rep.at("ref_window").get<std::uint64_t>(),
                                     rep.at("test_window").get<std::uint64_t>());
      if (!windows.count(w)) out.broken_chains.push_back(recorded.decision_id + ": window of " + id + " missing");
    }
  }
  return out;
}

void configure_logging() {
  bool bad = false;
  dlog().set_level(level_from_env(&bad));
  if (bad) dlog().warn("DRIFTLINE_LOG='{}' is not a level (trace, debug, info, warn, error, off); using warn",
                      std::getenv("DRIFTLINE_LOG"));
}

}  // namespace driftline::pipeline
