#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "driftline/event.hpp"
#include "driftline/modelkit.hpp"
#include "driftline/shift/detector.hpp"
#include "driftline/shift/eddm.hpp"
#include "driftline/shift/kliep.hpp"
#include "driftline/sketch/tdigest.hpp"
#include "json.hpp"

namespace driftline::store {
class Stores;
}

namespace driftline::monitor {

enum class HealthKind { kMetric, kWarning, kExpiry, kDetectorFired, kActionTaken };
const char* health_kind_name(HealthKind k);

struct HealthEvent {
  std::int64_t ts = 0;
  HealthKind kind = HealthKind::kMetric;
  std::string source;
  nlohmann::json payload = nlohmann::json::object();
};

nlohmann::json to_json(const HealthEvent& e);
HealthEvent health_event_from_json(const nlohmann::json& j);

struct WindowConfig {
  std::size_t reference_size = 1000;  // also the warm-up length
  std::size_t test_size = 500;
  std::size_t step = 100;   // events between advances
  std::size_t confirm = 2;  // consecutive firing advances before re-freezing
  shift::DetectorConfig detector;

  void validate(const std::string& prefix) const;
};

/// Frozen reference window plus a sliding test window over feature rows.
/// The first reference_size rows form the reference; afterwards every
/// `step` rows (with a full test window) is an advance that runs the
/// detector bank. After `confirm` consecutive firing advances the test
/// window becomes the new reference and the test window restarts empty, so
/// no row is ever in both windows.
class WindowedDetector {
 public:
  WindowedDetector(WindowConfig config, std::string source);

  struct Advance {
    shift::Detection detection;
    bool confirmed = false;
    shift::WindowPair pair;  // the windows the detector saw
  };

  std::optional<Advance> push(std::int64_t ts, std::span<const double> row, std::optional<int> label);

  bool warming() const { return !frozen_; }
  std::size_t reference_rows() const { return reference_.rows(); }
  std::size_t test_rows() const { return test_.size(); }
  std::uint64_t reference_id() const { return reference_id_; }
  std::uint64_t advances() const { return advances_; }
  const shift::Matrix& reference() const { return reference_; }
  const std::vector<int>& reference_labels() const { return reference_labels_; }
  const WindowConfig& config() const { return config_; }

  /// Back to warm-up with empty windows.
  void reset();

 private:
  struct Row {
    std::vector<double> x;
    std::optional<int> label;
  };
  void freeze(const std::vector<Row>& rows);

  WindowConfig config_;
  std::string source_;
  bool frozen_ = false;
  std::vector<Row> warmup_;
  shift::Matrix reference_;
  std::vector<int> reference_labels_;
  std::deque<Row> test_;
  std::size_t since_advance_ = 0;
  std::size_t consecutive_ = 0;
  std::uint64_t reference_id_ = 0;
  std::uint64_t advances_ = 0;
};

struct StepResult {
  std::vector<shift::ShiftReport> reports;
  std::vector<HealthEvent> events;
};

struct DataMonitorConfig {
  WindowConfig window;
  std::size_t dims = 0;  // 0: taken from the first event
  double anomaly_low = 0.001;
  double anomaly_high = 0.999;
  double anomaly_alpha = 1e-4;  // binomial test on the per-step anomaly count
  bool kliep = true;            // change-point scoring on confirmed firings
  std::size_t kliep_centers = 100;
  std::size_t kliep_rows = 300;  // per window, subsampled
  std::size_t kliep_null = 40;
  std::uint64_t seed = 0;
  ExecPolicy policy = ExecPolicy::kParallel;
};

/// Watches the primary feature stream.
class DataMonitor {
 public:
  explicit DataMonitor(DataMonitorConfig config);

  /// Malformed events (no features, wrong width, non-finite) are counted
  /// and reported as warnings.
  StepResult step(const Event& e);

  bool warming() const { return windows_.warming(); }
  std::uint64_t malformed() const { return malformed_; }
  std::uint64_t anomalies() const { return anomalies_; }
  const WindowedDetector& windows() const { return windows_; }
  /// Per-dimension anomaly band from the reference t-digests.
  std::vector<std::pair<double, double>> band() const { return band_; }
  /// Memory of the per-dimension reference digests.
  std::size_t sketch_bytes() const;

 private:
  void rebuild_band();
  std::optional<shift::ShiftReport> change_point(const shift::WindowPair& pair, std::int64_t ts);

  DataMonitorConfig config_;
  WindowedDetector windows_;
  std::vector<sketch::TDigest> digests_;
  std::vector<std::pair<double, double>> band_;
  double anomaly_base_rate_ = 0.0;
  std::size_t block_events_ = 0;
  std::size_t block_anomalies_ = 0;
  std::uint64_t malformed_ = 0;
  std::uint64_t anomalies_ = 0;
  std::uint64_t frozen_id_seen_ = 0;
};

struct PredictionMonitorConfig {
  WindowConfig window;
  std::size_t accuracy_window = 500;
  shift::EddmState eddm;
  std::size_t bootstrap = 200;  // resamples for the gradual-report interval
  std::uint64_t seed = 0;
};

/// Watches the predictor's output stream. step(pred, nullopt) records a new
/// prediction in the distribution window (confidence as the feature,
/// predicted class as the label). step(pred, truth) records the delayed
/// outcome of an earlier prediction: rolling accuracy and EDDM.
class PredictionMonitor {
 public:
  explicit PredictionMonitor(PredictionMonitorConfig config);

  StepResult step(const modelkit::Prediction& pred, std::optional<int> truth);

  std::optional<double> model_health() const;
  std::uint64_t health_samples() const { return outcomes_.size(); }
  const shift::EddmState& eddm() const { return eddm_; }
  /// Clears every window (used on activation and rollback).
  void reset();

 private:
  PredictionMonitorConfig config_;
  WindowedDetector windows_;
  std::deque<bool> outcomes_;
  std::size_t correct_ = 0;
  shift::EddmState eddm_;
  std::uint64_t last_abrupt_advance_ = 0;
  bool any_abrupt_ = false;
  std::uint64_t gradual_count_ = 0;
};

/// The policy engine's world view.
struct SystemState {
  std::uint64_t snapshot_id = 0;
  std::int64_t wall_clock = 0;        // simulated event time, ms
  double time_since_retrain = 0.0;    // s
  double retrain_cost = 0.0;
  double prediction_value = 0.0;
  double horizon_events = 0.0;
  std::optional<shift::ShiftReport> latest_shift;
  std::vector<std::string> report_ids;  // reports since the last retrain
  double label_coverage = 0.0;
  std::optional<double> model_health;
  double model_baseline = 0.0;
  std::uint64_t health_samples = 0;
  std::uint64_t active_model_version = 0;  // 0: none
  std::uint64_t previous_model_version = 0;
  std::string eddm_level = "normal";
  std::int64_t last_retrain_ts = 0;
  bool retrain_in_flight = false;
  std::map<std::string, std::int64_t> rule_last_fired;  // rule id -> wall_clock
  bool stale = false;

  friend bool operator==(const SystemState&, const SystemState&) = default;
};

nlohmann::json to_json(const SystemState& s);
SystemState system_state_from_json(const nlohmann::json& j);

/// Holds the live state and persists numbered snapshots.
class WorldState {
 public:
  /// `stores` may be null (snapshots then stay in memory only).
  explicit WorldState(store::Stores* stores) : stores_(stores) {}

  SystemState& live() { return live_; }
  const SystemState& live() const { return live_; }

  /// Records a detector report; anomaly reports never become latest_shift.
  void note_report(const shift::ShiftReport& r);
  /// Reports older than this (event time, ms) stop counting as shift
  /// evidence at the next snapshot; 0 keeps them until the next retrain.
  void set_shift_ttl(std::int64_t ms) { shift_ttl_ = ms; }
  /// Clears shift evidence and restarts the retrain clock.
  void note_retrain(std::int64_t ts);

  /// Point-in-time snapshot with the next id, appended to the state store.
  /// A failing store yields a snapshot flagged stale.
  SystemState world_state(std::int64_t now);

  /// Exact bytes of a snapshot taken earlier (kNotFound otherwise).
  const std::string& read(std::uint64_t snapshot_id) const;
  std::uint64_t last_snapshot_id() const { return next_id_ - 1; }

  /// Snapshots older than this many are dropped from memory (they remain
  /// in the state store).
  void set_memory_limit(std::size_t n) { memory_limit_ = n; }

 private:
  store::Stores* stores_;
  void refresh_evidence();

  SystemState live_;
  std::vector<shift::ShiftReport> recent_;
  std::int64_t shift_ttl_ = 0;
  std::uint64_t next_id_ = 1;
  std::map<std::uint64_t, std::string> snapshots_;
  std::size_t memory_limit_ = 64;
};

}  // namespace driftline::monitor
