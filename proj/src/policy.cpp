#include "driftline/policy.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace driftline::policy {

using nlohmann::json;
using monitor::HealthEvent;
using monitor::HealthKind;
using monitor::SystemState;

const char* action_name(ActionKind k) {
  switch (k) {
    case ActionKind::kRetrain: return "retrain";
    case ActionKind::kKeepExisting: return "keep_existing";
    case ActionKind::kRollback: return "rollback";
    case ActionKind::kRaiseAlert: return "raise_alert";
    case ActionKind::kTransferLearning: return "transfer_learning";
  }
  return "keep_existing";
}

ActionKind action_from(const std::string& name) {
  for (auto k : {ActionKind::kRetrain, ActionKind::kKeepExisting, ActionKind::kRollback, ActionKind::kRaiseAlert,
                 ActionKind::kTransferLearning}) {
    if (name == action_name(k)) return k;
  }
  throw Error(Errc::kConfiguration, "unknown action '" + name + "'");
}

json to_json(const PolicyAction& a) { return {{"kind", action_name(a.kind)}, {"parameters", a.parameters}}; }

namespace {

enum class FieldType { kNumber, kString, kBool };

const std::map<std::string, FieldType>& field_types() {
  static const std::map<std::string, FieldType> m{
      {"time_since_retrain", FieldType::kNumber},
      {"wall_clock", FieldType::kNumber},
      {"retrain_cost", FieldType::kNumber},
      {"prediction_value", FieldType::kNumber},
      {"horizon_events", FieldType::kNumber},
      {"label_coverage", FieldType::kNumber},
      {"model_health", FieldType::kNumber},
      {"model_baseline", FieldType::kNumber},
      {"health_drop", FieldType::kNumber},
      {"health_samples", FieldType::kNumber},
      {"active_model_version", FieldType::kNumber},
      {"previous_model_version", FieldType::kNumber},
      {"eddm_level", FieldType::kString},
      {"retrain_in_flight", FieldType::kBool},
      {"latest_shift.type", FieldType::kString},
      {"latest_shift.magnitude", FieldType::kNumber},
      {"latest_shift.statistic", FieldType::kNumber},
      {"latest_shift.p_value", FieldType::kNumber},
      {"latest_shift.detector", FieldType::kString},
  };
  return m;
}

const std::set<std::string> kOps{"<", "<=", ">", ">=", "==", "!="};

// Absent optionals give nullopt.
std::optional<json> field_value(const SystemState& s, const std::string& f) {
  if (f == "time_since_retrain") return s.time_since_retrain;
  if (f == "wall_clock") return s.wall_clock;
  if (f == "retrain_cost") return s.retrain_cost;
  if (f == "prediction_value") return s.prediction_value;
  if (f == "horizon_events") return s.horizon_events;
  if (f == "label_coverage") return s.label_coverage;
  if (f == "model_health") return s.model_health ? std::optional<json>(*s.model_health) : std::nullopt;
  if (f == "model_baseline") return s.model_baseline;
  if (f == "health_drop")
    return s.model_health ? std::optional<json>(s.model_baseline - *s.model_health) : std::nullopt;
  if (f == "health_samples") return s.health_samples;
  if (f == "active_model_version") return s.active_model_version;
  if (f == "previous_model_version") return s.previous_model_version;
  if (f == "eddm_level") return s.eddm_level;
  if (f == "retrain_in_flight") return s.retrain_in_flight;
  if (!s.latest_shift) return std::nullopt;
  const auto& r = *s.latest_shift;
  if (f == "latest_shift.type") return std::string(shift::shift_type_name(r.type));
  if (f == "latest_shift.magnitude") return r.magnitude;
  if (f == "latest_shift.statistic") return r.statistic;
  if (f == "latest_shift.p_value") return r.p_value ? std::optional<json>(*r.p_value) : std::nullopt;
  if (f == "latest_shift.detector") return r.detector;
  return std::nullopt;
}

template <typename T>
bool compare(const T& a, const std::string& op, const T& b) {
  if (op == "<") return a < b;
  if (op == "<=") return a <= b;
  if (op == ">") return a > b;
  if (op == ">=") return a >= b;
  if (op == "==") return a == b;
  return a != b;
}

bool is_retrain(const Rule& r) { return r.action.kind == ActionKind::kRetrain; }

}  // namespace

const std::vector<std::string>& state_fields() {
  static const std::vector<std::string> v = [] {
    std::vector<std::string> out;
    for (const auto& [k, t] : field_types()) out.push_back(k);
    return out;
  }();
  return v;
}

Condition Condition::parse(const json& j, const std::string& path) {
  if (!j.is_object()) throw Error(Errc::kConfiguration, path + ": condition must be an object");
  Condition c;
  auto list = [&](const char* key, Kind kind) {
    const auto& arr = j.at(key);
    if (!arr.is_array() || arr.empty())
      throw Error(Errc::kConfiguration, path + "." + key + ": must be a non-empty array");
    c.kind = kind;
    for (std::size_t i = 0; i < arr.size(); ++i)
      c.children.push_back(parse(arr[i], path + "." + key + "[" + std::to_string(i) + "]"));
  };
  if (j.contains("all")) {
    list("all", Kind::kAll);
  } else if (j.contains("any")) {
    list("any", Kind::kAny);
  } else if (j.contains("not")) {
    c.kind = Kind::kNot;
    c.children.push_back(parse(j.at("not"), path + ".not"));
  } else {
    c.kind = Kind::kCompare;
    if (!j.contains("field") || !j.at("field").is_string())
      throw Error(Errc::kConfiguration, path + ".field: missing");
    c.field = j.at("field").get<std::string>();
    const auto it = field_types().find(c.field);
    if (it == field_types().end())
      throw Error(Errc::kConfiguration, path + ".field: unknown state field '" + c.field + "'");
    c.op = j.value("op", std::string());
    if (!kOps.count(c.op)) throw Error(Errc::kConfiguration, path + ".op: unknown comparator '" + c.op + "'");
    if (!j.contains("value")) throw Error(Errc::kConfiguration, path + ".value: missing");
    c.value = j.at("value");
    switch (it->second) {
      case FieldType::kNumber:
        if (!c.value.is_number()) throw Error(Errc::kConfiguration, path + ".value: must be a number");
        break;
      case FieldType::kString:
        if (!c.value.is_string()) throw Error(Errc::kConfiguration, path + ".value: must be a string");
        if (c.op != "==" && c.op != "!=")
          throw Error(Errc::kConfiguration, path + ".op: only == and != apply to '" + c.field + "'");
        if (c.field == "latest_shift.type") shift::shift_type_from(c.value.get<std::string>());
        break;
      case FieldType::kBool:
        if (!c.value.is_boolean()) throw Error(Errc::kConfiguration, path + ".value: must be a boolean");
        if (c.op != "==" && c.op != "!=")
          throw Error(Errc::kConfiguration, path + ".op: only == and != apply to '" + c.field + "'");
        break;
    }
  }
  return c;
}

json Condition::serialize() const {
  switch (kind) {
    case Kind::kAll:
    case Kind::kAny: {
      auto arr = nlohmann::json::array();
      for (const auto& ch : children) arr.push_back(ch.serialize());
      return {{kind == Kind::kAll ? "all" : "any", arr}};
    }
    case Kind::kNot: return {{"not", children.front().serialize()}};
    case Kind::kCompare: return {{"field", field}, {"op", op}, {"value", value}};
  }
  return nullptr;
}

bool Condition::holds(const SystemState& s) const {
  switch (kind) {
    case Kind::kAll:
      return std::all_of(children.begin(), children.end(), [&](const Condition& c) { return c.holds(s); });
    case Kind::kAny:
      return std::any_of(children.begin(), children.end(), [&](const Condition& c) { return c.holds(s); });
    case Kind::kNot: return !children.front().holds(s);
    case Kind::kCompare: {
      const auto v = field_value(s, field);
      if (!v) return false;
      if (v->is_number()) return compare(v->get<double>(), op, value.get<double>());
      if (v->is_string()) return compare(v->get<std::string>(), op, value.get<std::string>());
      return compare(v->get<bool>(), op, value.get<bool>());
    }
  }
  return false;
}

Rule Rule::parse(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) throw Error(Errc::kConfiguration, path + ": rule must be an object");
  Rule r;
  if (!j.contains("id") || !j.at("id").is_string() || j.at("id").get<std::string>().empty())
    throw Error(Errc::kConfiguration, path + ".id: missing");
  r.id = j.at("id").get<std::string>();
  if (!j.contains("when")) throw Error(Errc::kConfiguration, path + ".when: missing");
  r.predicate = Condition::parse(j.at("when"), path + ".when");
  if (!j.contains("action")) throw Error(Errc::kConfiguration, path + ".action: missing");
  const auto& a = j.at("action");
  if (a.is_string()) {
    r.action.kind = action_from(a.get<std::string>());
  } else {
    r.action.kind = action_from(a.value("kind", std::string()));
    r.action.parameters = a.value("parameters", nlohmann::json::object());
  }
  if (j.contains("priority")) {
    if (!j.at("priority").is_number_integer()) throw Error(Errc::kConfiguration, path + ".priority: must be an integer");
    r.priority = j.at("priority").get<int>();
  }
  r.cooldown = j.value("cooldown", 0.0);
  if (!(r.cooldown >= 0.0)) throw Error(Errc::kConfiguration, path + ".cooldown: must be >= 0");
  return r;
}

nlohmann::json Rule::serialize() const {
  return {{"id", id}, {"when", predicate.serialize()}, {"action", to_json(action)}, {"priority", priority},
          {"cooldown", cooldown}};
}

std::vector<Rule> load_rules(const nlohmann::json& rules, const std::string& path) {
  if (!rules.is_array()) throw Error(Errc::kConfiguration, path + ": must be an array");
  std::vector<Rule> out;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < rules.size(); ++i) {
    const auto p = path + "[" + std::to_string(i) + "]";
    out.push_back(Rule::parse(rules[i], p));
    if (!ids.insert(out.back().id).second)
      throw Error(Errc::kConfiguration, p + ".id: duplicate rule id '" + out.back().id + "'");
  }
  return out;
}

std::vector<Rule> default_rules() {
  return load_rules(nlohmann::json::parse(R"([
    {"id": "emergency_change_point", "priority": 100, "cooldown": 5,
     "when": {"all": [{"field": "latest_shift.type", "op": "==", "value": "change_point"},
                      {"field": "latest_shift.p_value", "op": "<", "value": 0.001}]},
     "action": "retrain"},
    {"id": "shift_magnitude_retrain", "priority": 50, "cooldown": 5,
     "when": {"all": [{"field": "latest_shift.magnitude", "op": ">", "value": 1.5},
                      {"field": "time_since_retrain", "op": ">=", "value": 60}]},
     "action": "retrain"},
    {"id": "health_degradation", "priority": 10, "cooldown": 30,
     "when": {"all": [{"field": "health_samples", "op": ">=", "value": 200},
                      {"field": "health_drop", "op": ">", "value": 0.15}]},
     "action": "rollback"}
  ])"));
}

CostModel CostModel::parse(const nlohmann::json& j, const std::string& path) {
  CostModel c;
  if (!j.is_object()) throw Error(Errc::kConfiguration, path + ": must be an object");
  for (const auto& [k, v] : j.items()) {
    double* slot = k == "retrain_cost"     ? &c.retrain_cost
                   : k == "horizon_events" ? &c.horizon_events
                   : k == "min_cadence"    ? &c.min_cadence
                   : k == "emergency_p"    ? &c.emergency_p
                                           : nullptr;
    if (slot == nullptr) throw Error(Errc::kConfiguration, path + "." + k + ": unknown key");
    if (!v.is_number() || v.get<double>() < 0.0)
      throw Error(Errc::kConfiguration, path + "." + k + ": must be a non-negative number");
    *slot = v.get<double>();
  }
  return c;
}

Gain expected_gain(const SystemState& s, const CostModel& cost) {
  if (cost.gain_fn) return {cost.gain_fn(s, cost), std::nullopt};
  if (!s.model_health) return {0.0, "model_health missing; gain taken as 0"};
  return {s.prediction_value * cost.horizon_events * std::max(0.0, s.model_baseline - *s.model_health),
          std::nullopt};
}

json to_json(const ProvenanceRecord& p) {
  return {{"decision_id", p.decision_id}, {"snapshot_id", p.snapshot_id}, {"rule_id", p.rule_id},
          {"report_ids", p.report_ids},   {"action", to_json(p.action)},  {"ts", p.ts},
          {"reason", p.reason},           {"gain", p.gain},               {"cost", p.cost}};
}

ProvenanceRecord provenance_from_json(const json& j) {
  ProvenanceRecord p;
  p.decision_id = j.at("decision_id").get<std::string>();
  p.snapshot_id = j.at("snapshot_id").get<std::uint64_t>();
  p.rule_id = j.at("rule_id").get<std::string>();
  p.report_ids = j.at("report_ids").get<std::vector<std::string>>();
  p.action.kind = action_from(j.at("action").at("kind").get<std::string>());
  p.action.parameters = j.at("action").at("parameters");
  p.ts = j.at("ts").get<std::int64_t>();
  p.reason = j.at("reason").get<std::string>();
  p.gain = j.at("gain").get<double>();
  p.cost = j.at("cost").get<double>();
  return p;
}

std::pair<PolicyAction, ProvenanceRecord> evaluate(const SystemState& state, const std::vector<Rule>& rules,
                                                   const CostModel& cost) {
  ProvenanceRecord prov;
  prov.decision_id = "d-" + std::to_string(state.snapshot_id);
  prov.snapshot_id = state.snapshot_id;
  prov.ts = state.wall_clock;
  prov.report_ids = state.report_ids;
  prov.cost = cost.retrain_cost;

  std::vector<const Rule*> order;
  for (const auto& r : rules) order.push_back(&r);
  std::sort(order.begin(), order.end(), [](const Rule* a, const Rule* b) {
    return a->priority != b->priority ? a->priority > b->priority : a->id < b->id;
  });

  const bool emergency = state.latest_shift && state.latest_shift->type == shift::ShiftType::kChangePoint &&
                         state.latest_shift->p_value && *state.latest_shift->p_value < cost.emergency_p;
  std::vector<std::string> skipped;
  for (const Rule* r : order) {
    if (!r->predicate.holds(state)) continue;
    const auto last = state.rule_last_fired.find(r->id);
    if (last != state.rule_last_fired.end() &&
        static_cast<double>(state.wall_clock - last->second) < r->cooldown * 1000.0) {
      skipped.push_back(r->id + ":cooldown");
      continue;
    }
    if (is_retrain(*r)) {
      if (state.retrain_in_flight) {
        skipped.push_back(r->id + ":in_flight");
        continue;
      }
      if (state.active_model_version != 0 && state.time_since_retrain < cost.min_cadence && !emergency) {
        skipped.push_back(r->id + ":cadence");
        continue;
      }
    }

    PolicyAction action = r->action;
    prov.rule_id = r->id;
    prov.reason = "rule fired";
    if (action.kind == ActionKind::kRetrain) {
      const auto g = expected_gain(state, cost);
      prov.gain = g.value;
      if (g.value >= cost.retrain_cost) {
        if (!action.parameters.contains("window_start"))
          action.parameters["window_start"] = state.latest_shift ? state.latest_shift->ts : state.last_retrain_ts;
        if (emergency && state.time_since_retrain < cost.min_cadence) prov.reason = "emergency override";
      } else {
        action = {ActionKind::kRaiseAlert,
                  {{"degraded_from", "retrain"}, {"gain", g.value}, {"cost", cost.retrain_cost}}};
        prov.reason = g.warning ? *g.warning : "expected gain below retrain cost";
      }
    } else if (action.kind == ActionKind::kRollback) {
      if (state.previous_model_version == 0) {
        action = {ActionKind::kRaiseAlert, {{"degraded_from", "rollback"}, {"reason", "no previous version"}}};
        prov.reason = "no previous version";
      } else if (!action.parameters.contains("target_version")) {
        action.parameters["target_version"] = state.previous_model_version;
      }
    }
    prov.action = action;
    return {action, prov};
  }
  prov.reason = skipped.empty() ? "no rule fired" : "no rule fired (suppressed: " + [&] {
    std::string s;
    for (const auto& x : skipped) s += (s.empty() ? "" : ",") + x;
    return s;
  }() + ")";
  prov.action = {};
  return {prov.action, prov};
}

// ---------------------------------------------------------------------------

const char* ack_name(AckStatus s) {
  switch (s) {
    case AckStatus::kApplied: return "applied";
    case AckStatus::kNoop: return "noop";
    case AckStatus::kDuplicate: return "duplicate";
    case AckStatus::kBusy: return "busy";
    case AckStatus::kFailed: return "failed";
  }
  return "noop";
}

LifecycleExecutor::LifecycleExecutor(const modelkit::ModelRegistry& registry, modelkit::Predictor& predictor,
                                     Hooks hooks, std::size_t max_in_flight)
    : registry_(registry), predictor_(predictor), hooks_(std::move(hooks)), max_in_flight_(max_in_flight) {
  if (max_in_flight_ == 0) throw Error(Errc::kConfiguration, "policy.max_in_flight: must be positive");
}

void LifecycleExecutor::emit(const HealthEvent& e) {
  if (hooks_.health) hooks_.health(e);
}

void LifecycleExecutor::log(const ProvenanceRecord& p, const Ack& ack) {
  if (hooks_.diag) hooks_.diag({{"decision", to_json(p)}, {"outcome", ack_name(ack.status)}, {"message", ack.message}});
}

Ack LifecycleExecutor::apply(const PolicyAction& action, const ProvenanceRecord& prov) {
  if (action.kind == ActionKind::kTransferLearning)
    throw Error(Errc::kUnsupported, "transfer_learning is accepted by the schema but cannot be executed");
  Ack ack;
  if (action.kind != ActionKind::kKeepExisting && !seen_.insert(prov.decision_id).second) {
    ack = {AckStatus::kDuplicate, "decision " + prov.decision_id + " already applied"};
    log(prov, ack);
    return ack;
  }
  const json base{{"decision_id", prov.decision_id}, {"action", action_name(action.kind)}, {"rule_id", prov.rule_id}};
  switch (action.kind) {
    case ActionKind::kKeepExisting:
      ack = {AckStatus::kNoop, prov.reason};
      break;
    case ActionKind::kRetrain: {
      if (jobs_.size() >= max_in_flight_) {
        ack = {AckStatus::kBusy, "retrain already in flight"};
        seen_.erase(prov.decision_id);  // a later delivery may still enqueue
        break;
      }
      RetrainJob job{prov.decision_id, prov.snapshot_id, action.parameters.value("window_start", std::int64_t{0}),
                     prov.ts};
      jobs_.push_back(job);
      ++enqueued_total_;
      ack = {AckStatus::kApplied, "training job enqueued"};
      auto payload = base;
      payload["window_start"] = job.window_start;
      emit({prov.ts, HealthKind::kActionTaken, "policy", payload});
      break;
    }
    case ActionKind::kRollback: {
      const auto target = action.parameters.value("target_version", std::uint64_t{0});
      if (target == 0 || !registry_.contains(target)) {
        ack = {AckStatus::kFailed, "rollback target " + std::to_string(target) + " missing"};
        auto payload = base;
        payload["failed"] = ack.message;
        emit({prov.ts, HealthKind::kWarning, "policy", payload});
        break;
      }
      predictor_.activate(registry_, target);
      if (hooks_.activated) hooks_.activated(target);
      ack = {AckStatus::kApplied, "activated version " + std::to_string(target)};
      auto payload = base;
      payload["target_version"] = target;
      emit({prov.ts, HealthKind::kActionTaken, "policy", payload});
      break;
    }
    case ActionKind::kRaiseAlert: {
      ack = {AckStatus::kApplied, "alert raised"};
      auto payload = base;
      payload["parameters"] = action.parameters;
      emit({prov.ts, HealthKind::kActionTaken, "policy", payload});
      break;
    }
    case ActionKind::kTransferLearning: break;
  }
  log(prov, ack);
  return ack;
}

std::optional<RetrainJob> LifecycleExecutor::pending() const {
  if (jobs_.empty()) return std::nullopt;
  return jobs_.front();
}

void LifecycleExecutor::complete(const std::string& decision_id) {
  std::erase_if(jobs_, [&](const RetrainJob& j) { return j.decision_id == decision_id; });
}

}  // namespace driftline::policy
