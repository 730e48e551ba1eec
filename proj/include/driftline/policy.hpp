#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "driftline/modelkit.hpp"
#include "driftline/monitor.hpp"
#include "json.hpp"

namespace driftline::policy {

enum class ActionKind { kRetrain, kKeepExisting, kRollback, kRaiseAlert, kTransferLearning };
const char* action_name(ActionKind k);
ActionKind action_from(const std::string& name);

struct PolicyAction {
  ActionKind kind = ActionKind::kKeepExisting;
  nlohmann::json parameters = nlohmann::json::object();
  friend bool operator==(const PolicyAction&, const PolicyAction&) = default;
};

nlohmann::json to_json(const PolicyAction& a);

/// Fields a condition may reference. Optional fields that are absent make
/// every comparison on them false.
const std::vector<std::string>& state_fields();

/// Condition tree: {"all": [...]}, {"any": [...]}, {"not": c} or a
/// comparison {"field", "op", "value"} with op in < <= > >= == !=.
struct Condition {
  enum class Kind { kAll, kAny, kNot, kCompare };
  Kind kind = Kind::kAll;
  std::vector<Condition> children;
  std::string field;
  std::string op;
  nlohmann::json value;

  /// kConfiguration naming `path` on unknown fields, ops or shapes.
  static Condition parse(const nlohmann::json& j, const std::string& path);
  nlohmann::json serialize() const;
  bool holds(const monitor::SystemState& s) const;
};

struct Rule {
  std::string id;
  Condition predicate;
  PolicyAction action;
  int priority = 0;
  double cooldown = 0.0;  // s

  static Rule parse(const nlohmann::json& j, const std::string& path);
  nlohmann::json serialize() const;
};

/// kConfiguration on duplicate ids or any invalid rule.
std::vector<Rule> load_rules(const nlohmann::json& rules, const std::string& path = "rules");
std::vector<Rule> default_rules();

struct CostModel {
  double retrain_cost = 1000.0;
  double horizon_events = 1e4;
  double min_cadence = 60.0;  // s
  double emergency_p = 0.001;
  /// Benefit of retraining; the default is
  /// prediction_value * horizon * max(0, baseline - health).
  std::function<double(const monitor::SystemState&, const CostModel&)> gain_fn;

  static CostModel parse(const nlohmann::json& j, const std::string& path);
};

struct Gain {
  double value = 0.0;
  std::optional<std::string> warning;
};

Gain expected_gain(const monitor::SystemState& s, const CostModel& cost);

struct ProvenanceRecord {
  std::string decision_id;
  std::uint64_t snapshot_id = 0;
  std::string rule_id;  // empty when no rule fired
  std::vector<std::string> report_ids;
  PolicyAction action;
  std::int64_t ts = 0;
  std::string reason;
  double gain = 0.0;
  double cost = 0.0;

  friend bool operator==(const ProvenanceRecord&, const ProvenanceRecord&) = default;
};

nlohmann::json to_json(const ProvenanceRecord& p);
ProvenanceRecord provenance_from_json(const nlohmann::json& j);

/// Pure: the winning rule is the highest priority (ties by id) whose
/// predicate holds and whose cooldown has elapsed. Retrain rules are
/// skipped inside min_cadence (unless the latest shift is a change point
/// below emergency_p) and while a retrain is in flight; a retrain that
/// fails the cost gate becomes raise_alert, and a rollback without a
/// previous version becomes raise_alert.
std::pair<PolicyAction, ProvenanceRecord> evaluate(const monitor::SystemState& state, const std::vector<Rule>& rules,
                                                   const CostModel& cost);

struct RetrainJob {
  std::string decision_id;
  std::uint64_t snapshot_id = 0;
  std::int64_t window_start = 0;  // train on reservoir items at or after this ts
  std::int64_t enqueued_at = 0;
};

enum class AckStatus { kApplied, kNoop, kDuplicate, kBusy, kFailed };
const char* ack_name(AckStatus s);

struct Ack {
  AckStatus status = AckStatus::kNoop;
  std::string message;
};

/// Serializes lifecycle actions. Retrain enqueues at most one job per
/// decision id and at most `max_in_flight` jobs overall.
class LifecycleExecutor {
 public:
  struct Hooks {
    std::function<void(const monitor::HealthEvent&)> health;
    std::function<void(const nlohmann::json&)> diag;
    /// Called after a successful rollback activation.
    std::function<void(std::uint64_t version)> activated;
  };

  LifecycleExecutor(const modelkit::ModelRegistry& registry, modelkit::Predictor& predictor, Hooks hooks,
                    std::size_t max_in_flight = 1);

  /// kUnsupported for transfer learning.
  Ack apply(const PolicyAction& action, const ProvenanceRecord& provenance);

  /// Oldest queued job, left queued until complete().
  std::optional<RetrainJob> pending() const;
  void complete(const std::string& decision_id);
  std::size_t in_flight() const { return jobs_.size(); }
  std::uint64_t enqueued_total() const { return enqueued_total_; }

 private:
  void emit(const monitor::HealthEvent& e);
  void log(const ProvenanceRecord& p, const Ack& ack);

  const modelkit::ModelRegistry& registry_;
  modelkit::Predictor& predictor_;
  Hooks hooks_;
  std::size_t max_in_flight_;
  std::deque<RetrainJob> jobs_;
  std::set<std::string> seen_;
  std::uint64_t enqueued_total_ = 0;
};

}  // namespace driftline::policy
