#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "driftline/common.hpp"
#include "driftline/joiner.hpp"
#include "json.hpp"

namespace driftline::store {
class ModelStore;
}

namespace driftline::modelkit {

enum class Family : std::uint16_t { kSgdLinear = 1, kGaussianNb = 2 };
const char* family_name(Family f);
Family family_from(const std::string& name);

using Hyperparams = std::map<std::string, double>;

struct Range {
  double lo = 0.0;
  double hi = 1.0;
  bool log_scale = false;
  bool integer = false;
};
using HyperSpace = std::map<std::string, Range>;

/// sgd_linear_classifier: learning_rate, l2, epochs.
/// gaussian_naive_bayes: var_smoothing.
HyperSpace default_space(Family f);
Hyperparams default_hyperparams(Family f);
/// kConfiguration on unknown names or values outside their range.
void validate(const Hyperparams& hp, const HyperSpace& space);

struct TrainingWindow {
  std::uint64_t snapshot_id = 0;
  std::int64_t start_ts = 0;
  std::int64_t end_ts = 0;
  friend bool operator==(const TrainingWindow&, const TrainingWindow&) = default;
};

struct Metrics {
  double accuracy = 0.0;
  double log_loss = 0.0;
  std::uint64_t n_train = 0;
  std::uint64_t n_holdout = 0;
  friend bool operator==(const Metrics&, const Metrics&) = default;
};

struct ModelArtifact {
  std::uint64_t version = 0;
  Family family = Family::kSgdLinear;
  std::uint32_t dims = 0;
  std::uint32_t classes = 0;
  std::vector<double> parameters;
  Hyperparams hyperparams;
  TrainingWindow trained_on;
  Metrics metrics;
  std::int64_t created_at = 0;        // simulated event time, ms
  std::uint64_t train_duration = 0;   // work units: examples x passes
  std::uint64_t seed = 0;

  Bytes serialize() const;
  static ModelArtifact deserialize(std::span<const std::uint8_t> data);
  friend bool operator==(const ModelArtifact&, const ModelArtifact&) = default;
};

struct TrainingRecord {
  std::uint64_t version = 0;
  Family family = Family::kSgdLinear;
  Hyperparams hyperparams;
  Metrics metrics;
  TrainingWindow trained_on;
  std::int64_t created_at = 0;
  std::uint64_t train_duration = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const TrainingRecord&, const TrainingRecord&) = default;
};

nlohmann::json to_json(const TrainingRecord& r);
TrainingRecord training_record_from_json(const nlohmann::json& j);

struct TrainOptions {
  Family family = Family::kSgdLinear;
  std::size_t min_examples = 100;
  std::uint32_t classes = 0;  // 0: max label + 1, at least 2
  std::int64_t created_at = 0;
  TrainingWindow window;
};

struct TrainResult {
  ModelArtifact artifact;  // version 0 until the registry assigns one
  TrainingRecord record;
  std::vector<std::size_t> train_rows;    // indices into the input
  std::vector<std::size_t> holdout_rows;  // trailing 20% by primary_ts
};

/// Deterministic in (data order, hp, seed). kNotReady below min_examples,
/// kData listing offending row indices on non-finite features or
/// non-class labels, kDomain on ragged dimensionality.
TrainResult train(std::span<const joiner::JoinedExample> data, const Hyperparams& hp, std::uint64_t seed,
                  const TrainOptions& options);

struct Prediction {
  int value = 0;
  double confidence = 0.0;  // max class probability
  std::uint64_t model_version = 0;
  std::int64_t ts = 0;
  friend bool operator==(const Prediction&, const Prediction&) = default;
};

/// Class probabilities; pure in (model, features).
std::vector<double> predict_proba(const ModelArtifact& model, std::span<const double> features);
Prediction predict(const ModelArtifact& model, std::span<const double> features, std::int64_t ts = 0);

nlohmann::json to_json(const Prediction& p);

/// Returns candidate configurations; the default draws uniformly (log-uniform
/// for log-scale ranges) from the space.
using SearchStrategy = std::function<std::vector<Hyperparams>(const HyperSpace&, std::size_t count, Rng& rng)>;
std::vector<Hyperparams> random_candidates(const HyperSpace& space, std::size_t count, Rng& rng);

struct SearchResult {
  Hyperparams best;
  double metric = 0.0;  // holdout accuracy of `best`, NaN when not evaluated
  std::vector<std::pair<Hyperparams, double>> evaluated;
};

/// Candidate 1 is the best prior configuration of the same family from
/// `history` (by validation accuracy); the rest come from the strategy.
/// Each candidate is trained on `data` and scored on its trailing holdout.
/// With budget 1 and a usable history the prior best is returned directly.
SearchResult warm_start_search(const std::vector<TrainingRecord>& history, const HyperSpace& space,
                               std::size_t budget, std::uint64_t seed, std::span<const joiner::JoinedExample> data,
                               const TrainOptions& options, const SearchStrategy& strategy = random_candidates);

/// Artifacts by version, backed by the model store when one is given.
class ModelRegistry {
 public:
  explicit ModelRegistry(store::ModelStore* store = nullptr) : store_(store) {}

  /// Assigns the next version, persists and returns it.
  std::uint64_t publish(ModelArtifact artifact);
  std::shared_ptr<const ModelArtifact> get(std::uint64_t version) const;
  bool contains(std::uint64_t version) const;
  std::uint64_t latest_version() const { return next_version_ - 1; }

 private:
  store::ModelStore* store_;
  std::map<std::uint64_t, std::shared_ptr<const ModelArtifact>> cache_;
  std::uint64_t next_version_ = 1;
};

/// Serves predictions from the active artifact. Activation swaps a
/// shared pointer under a mutex, so a prediction always sees one complete
/// model.
class Predictor {
 public:
  /// False (no-op) when the version is already active.
  bool activate(std::shared_ptr<const ModelArtifact> model);
  /// kNotFound for unknown versions.
  bool activate(const ModelRegistry& registry, std::uint64_t version);

  /// kNotReady when no model is active.
  Prediction predict(std::span<const double> features, std::int64_t ts = 0) const;
  std::shared_ptr<const ModelArtifact> active() const;
  std::optional<std::uint64_t> active_version() const;

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const ModelArtifact> model_;
};

/// The model stream a predictor subscribes to.
class ModelStream {
 public:
  using Listener = std::function<void(std::shared_ptr<const ModelArtifact>)>;
  void subscribe(Listener l) { listeners_.push_back(std::move(l)); }
  void publish(const std::shared_ptr<const ModelArtifact>& model) const {
    for (const auto& l : listeners_) l(model);
  }

 private:
  std::vector<Listener> listeners_;
};

}  // namespace driftline::modelkit
