#include "driftline/modelkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "driftline/sketch/format.hpp"
#include "driftline/store.hpp"

namespace driftline::modelkit {

using nlohmann::json;

namespace {
constexpr std::array<char, 4> kModelMagic{'D', 'L', 'M', 'D'};
constexpr double kProbFloor = 1e-15;
}  // namespace

const char* family_name(Family f) {
  return f == Family::kSgdLinear ? "sgd_linear_classifier" : "gaussian_naive_bayes";
}

Family family_from(const std::string& name) {
  if (name == "sgd_linear_classifier") return Family::kSgdLinear;
  if (name == "gaussian_naive_bayes") return Family::kGaussianNb;
  throw Error(Errc::kConfiguration, "unknown model family '" + name + "'");
}

HyperSpace default_space(Family f) {
  if (f == Family::kSgdLinear) {
    return {{"learning_rate", {1e-3, 1.0, true, false}}, {"l2", {1e-6, 1e-1, true, false}}, {"epochs", {1, 20, false, true}}};
  }
  return {{"var_smoothing", {1e-12, 1e-2, true, false}}};
}

Hyperparams default_hyperparams(Family f) {
  if (f == Family::kSgdLinear) return {{"learning_rate", 0.1}, {"l2", 1e-4}, {"epochs", 5}};
  return {{"var_smoothing", 1e-9}};
}

void validate(const Hyperparams& hp, const HyperSpace& space) {
  if (space.empty()) throw Error(Errc::kConfiguration, "hyperparameter space is empty");
  for (const auto& [name, v] : hp) {
    auto it = space.find(name);
    if (it == space.end()) throw Error(Errc::kConfiguration, "hyperparams." + name + ": unknown");
    if (!(v >= it->second.lo && v <= it->second.hi)) {
      throw Error(Errc::kConfiguration, "hyperparams." + name + ": outside [" + std::to_string(it->second.lo) + ", " +
                                            std::to_string(it->second.hi) + "]");
    }
  }
}

// ---------------------------------------------------------------------------
// Serialization

Bytes ModelArtifact::serialize() const {
  ByteWriter p;
  p.u64(version);
  p.u32(dims);
  p.u32(classes);
  p.u64(seed);
  p.u64(static_cast<std::uint64_t>(created_at));
  p.u64(train_duration);
  p.u64(trained_on.snapshot_id);
  p.u64(static_cast<std::uint64_t>(trained_on.start_ts));
  p.u64(static_cast<std::uint64_t>(trained_on.end_ts));
  p.f64(metrics.accuracy);
  p.f64(metrics.log_loss);
  p.u64(metrics.n_train);
  p.u64(metrics.n_holdout);
  p.u32(static_cast<std::uint32_t>(hyperparams.size()));
  for (const auto& [k, v] : hyperparams) {
    p.str(k);
    p.f64(v);
  }
  ByteWriter body;
  body.u32(static_cast<std::uint32_t>(parameters.size()));
  for (double v : parameters) body.f64(v);
  return sketch::seal(kModelMagic, static_cast<std::uint16_t>(family), p.take(), body.take());
}

ModelArtifact ModelArtifact::deserialize(std::span<const std::uint8_t> data) {
  const auto env = sketch::open(kModelMagic, data);
  if (env.kind != 1 && env.kind != 2) throw Error(Errc::kData, "unknown model family tag");
  ModelArtifact m;
  m.family = static_cast<Family>(env.kind);
  ByteReader p(env.params);
  m.version = p.u64();
  m.dims = p.u32();
  m.classes = p.u32();
  m.seed = p.u64();
  m.created_at = static_cast<std::int64_t>(p.u64());
  m.train_duration = p.u64();
  m.trained_on.snapshot_id = p.u64();
  m.trained_on.start_ts = static_cast<std::int64_t>(p.u64());
  m.trained_on.end_ts = static_cast<std::int64_t>(p.u64());
  m.metrics.accuracy = p.f64();
  m.metrics.log_loss = p.f64();
  m.metrics.n_train = p.u64();
  m.metrics.n_holdout = p.u64();
  const auto nh = p.u32();
  for (std::uint32_t i = 0; i < nh; ++i) {
    auto k = p.str();
    m.hyperparams[k] = p.f64();
  }
  ByteReader b(env.payload);
  const auto n = b.u32();
  m.parameters.resize(n);
  for (auto& v : m.parameters) v = b.f64();
  return m;
}

namespace {

json window_json(const TrainingWindow& w) {
  return {{"snapshot_id", w.snapshot_id}, {"start_ts", w.start_ts}, {"end_ts", w.end_ts}};
}

}  // namespace

json to_json(const TrainingRecord& r) {
  return {{"version", r.version},
          {"family", family_name(r.family)},
          {"hyperparams", r.hyperparams},
          {"metrics",
           {{"accuracy", r.metrics.accuracy},
            {"log_loss", r.metrics.log_loss},
            {"n_train", r.metrics.n_train},
            {"n_holdout", r.metrics.n_holdout}}},
          {"trained_on", window_json(r.trained_on)},
          {"created_at", r.created_at},
          {"train_duration", r.train_duration},
          {"seed", r.seed}};
}

TrainingRecord training_record_from_json(const json& j) {
  TrainingRecord r;
  r.version = j.at("version").get<std::uint64_t>();
  r.family = family_from(j.at("family").get<std::string>());
  r.hyperparams = j.at("hyperparams").get<Hyperparams>();
  const auto& m = j.at("metrics");
  r.metrics = {m.at("accuracy").get<double>(), m.at("log_loss").get<double>(), m.at("n_train").get<std::uint64_t>(),
               m.at("n_holdout").get<std::uint64_t>()};
  const auto& w = j.at("trained_on");
  r.trained_on = {w.at("snapshot_id").get<std::uint64_t>(), w.at("start_ts").get<std::int64_t>(),
                  w.at("end_ts").get<std::int64_t>()};
  r.created_at = j.at("created_at").get<std::int64_t>();
  r.train_duration = j.at("train_duration").get<std::uint64_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  return r;
}

json to_json(const Prediction& p) {
  return {{"value", p.value}, {"confidence", p.confidence}, {"model_version", p.model_version}, {"ts", p.ts}};
}

// ---------------------------------------------------------------------------
// Families

namespace {

void softmax_inplace(std::vector<double>& z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (auto& v : z) {
    v = std::exp(v - mx);
    s += v;
  }
  for (auto& v : z) v /= s;
}

// SGD layout: means[d], scales[d], W[c][d+1] (bias last).
std::vector<double> sgd_logits(const ModelArtifact& m, std::span<const double> x) {
  const std::size_t d = m.dims, c = m.classes;
  const double* mean = m.parameters.data();
  const double* scale = mean + d;
  const double* w = scale + d;
  std::vector<double> z(c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    double s = w[k * (d + 1) + d];
    for (std::size_t j = 0; j < d; ++j) s += w[k * (d + 1) + j] * (x[j] - mean[j]) / scale[j];
    z[k] = s;
  }
  return z;
}

// NB layout: log_prior[c], means[c][d], vars[c][d].
std::vector<double> nb_logits(const ModelArtifact& m, std::span<const double> x) {
  const std::size_t d = m.dims, c = m.classes;
  const double* prior = m.parameters.data();
  const double* mu = prior + c;
  const double* var = mu + c * d;
  std::vector<double> z(c);
  for (std::size_t k = 0; k < c; ++k) {
    double s = prior[k];
    for (std::size_t j = 0; j < d; ++j) {
      const double v = var[k * d + j];
      const double diff = x[j] - mu[k * d + j];
      s += -0.5 * std::log(2.0 * 3.14159265358979323846 * v) - diff * diff / (2.0 * v);
    }
    z[k] = s;
  }
  return z;
}

void fit_sgd(ModelArtifact& m, std::span<const joiner::JoinedExample> data, const std::vector<std::size_t>& rows,
             const std::vector<int>& labels, const Hyperparams& hp, std::uint64_t seed) {
  const std::size_t d = m.dims, c = m.classes;
  const double lr0 = hp.at("learning_rate"), l2 = hp.at("l2");
  const int epochs = static_cast<int>(std::lround(hp.at("epochs")));
  m.parameters.assign(2 * d + c * (d + 1), 0.0);
  double* mean = m.parameters.data();
  double* scale = mean + d;
  double* w = scale + d;
  for (auto r : rows) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += data[r].features.values[j];
  }
  for (std::size_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(rows.size());
  for (auto r : rows) {
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = data[r].features.values[j] - mean[j];
      scale[j] += diff * diff;
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    scale[j] = std::sqrt(scale[j] / static_cast<double>(rows.size()));
    if (!(scale[j] > 1e-12)) scale[j] = 1.0;
  }
  Rng rng(seed);
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> x(d), z(c);
  for (int e = 0; e < epochs; ++e) {
    rng.shuffle(order);
    const double lr = lr0 / (1.0 + e);
    for (auto o : order) {
      const auto r = rows[o];
      for (std::size_t j = 0; j < d; ++j) x[j] = (data[r].features.values[j] - mean[j]) / scale[j];
      for (std::size_t k = 0; k < c; ++k) {
        double s = w[k * (d + 1) + d];
        for (std::size_t j = 0; j < d; ++j) s += w[k * (d + 1) + j] * x[j];
        z[k] = s;
      }
      softmax_inplace(z);
      for (std::size_t k = 0; k < c; ++k) {
        const double g = z[k] - (labels[o] == static_cast<int>(k) ? 1.0 : 0.0);
        for (std::size_t j = 0; j < d; ++j) w[k * (d + 1) + j] -= lr * (g * x[j] + l2 * w[k * (d + 1) + j]);
        w[k * (d + 1) + d] -= lr * g;
      }
    }
  }
  m.train_duration = static_cast<std::uint64_t>(rows.size()) * static_cast<std::uint64_t>(epochs);
}

void fit_nb(ModelArtifact& m, std::span<const joiner::JoinedExample> data, const std::vector<std::size_t>& rows,
            const std::vector<int>& labels, const Hyperparams& hp) {
  const std::size_t d = m.dims, c = m.classes;
  m.parameters.assign(c + 2 * c * d, 0.0);
  double* prior = m.parameters.data();
  double* mu = prior + c;
  double* var = mu + c * d;
  std::vector<double> count(c, 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto k = static_cast<std::size_t>(labels[i]);
    count[k] += 1.0;
    for (std::size_t j = 0; j < d; ++j) mu[k * d + j] += data[rows[i]].features.values[j];
  }
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t j = 0; j < d; ++j) mu[k * d + j] = count[k] > 0 ? mu[k * d + j] / count[k] : 0.0;
  }
  double max_var = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto k = static_cast<std::size_t>(labels[i]);
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = data[rows[i]].features.values[j] - mu[k * d + j];
      var[k * d + j] += diff * diff;
    }
  }
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t j = 0; j < d; ++j) {
      var[k * d + j] = count[k] > 1 ? var[k * d + j] / count[k] : 1.0;
      max_var = std::max(max_var, var[k * d + j]);
    }
  }
  const double eps = hp.at("var_smoothing") * std::max(max_var, 1e-12);
  for (std::size_t i = 0; i < c * d; ++i) var[i] = std::max(var[i] + eps, 1e-12);
  const double n = static_cast<double>(rows.size());
  for (std::size_t k = 0; k < c; ++k) prior[k] = std::log((count[k] + 1.0) / (n + static_cast<double>(c)));
  m.train_duration = static_cast<std::uint64_t>(rows.size());
}

}  // namespace

std::vector<double> predict_proba(const ModelArtifact& model, std::span<const double> features) {
  if (features.size() != model.dims) {
    throw Error(Errc::kDomain, "model expects " + std::to_string(model.dims) + " features, got " +
                                   std::to_string(features.size()));
  }
  auto z = model.family == Family::kSgdLinear ? sgd_logits(model, features) : nb_logits(model, features);
  softmax_inplace(z);
  return z;
}

Prediction predict(const ModelArtifact& model, std::span<const double> features, std::int64_t ts) {
  const auto p = predict_proba(model, features);
  const auto best = std::max_element(p.begin(), p.end());
  return {static_cast<int>(best - p.begin()), *best, model.version, ts};
}

TrainResult train(std::span<const joiner::JoinedExample> data, const Hyperparams& hp_in, std::uint64_t seed,
                  const TrainOptions& options) {
  if (data.size() < std::max<std::size_t>(options.min_examples, 5)) {
    throw Error(Errc::kNotReady, "training needs " + std::to_string(std::max<std::size_t>(options.min_examples, 5)) +
                                     " examples, have " + std::to_string(data.size()));
  }
  Hyperparams hp = default_hyperparams(options.family);
  for (const auto& [k, v] : hp_in) hp[k] = v;
  validate(hp, default_space(options.family));

  const std::size_t dims = data[0].features.dims();
  if (dims == 0) throw Error(Errc::kDomain, "training examples have no features");
  std::vector<std::size_t> bad;
  std::vector<int> label_of(data.size());
  int top = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].features.dims() != dims) {
      throw Error(Errc::kDomain, "row " + std::to_string(i) + " has " + std::to_string(data[i].features.dims()) +
                                     " features, expected " + std::to_string(dims));
    }
    const auto cls = class_of(data[i].label);
    bool ok = cls.has_value();
    for (double v : data[i].features.values) ok = ok && std::isfinite(v);
    if (!ok) {
      bad.push_back(i);
      continue;
    }
    label_of[i] = *cls;
    top = std::max(top, *cls);
  }
  if (!bad.empty()) {
    std::string list;
    for (std::size_t i = 0; i < bad.size() && i < 20; ++i) list += (i ? "," : "") + std::to_string(bad[i]);
    if (bad.size() > 20) list += ",...";
    throw Error(Errc::kData, "non-finite features or non-class labels at rows [" + list + "]");
  }
  const std::uint32_t classes = options.classes ? options.classes : static_cast<std::uint32_t>(std::max(top + 1, 2));
  if (top >= static_cast<int>(classes)) throw Error(Errc::kDomain, "label exceeds configured class count");

  // Trailing 20% by event time is the holdout.
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return data[a].primary_ts < data[b].primary_ts; });
  const std::size_t n_hold = std::max<std::size_t>(1, data.size() / 5);
  TrainResult res;
  res.train_rows.assign(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_hold));
  res.holdout_rows.assign(order.end() - static_cast<std::ptrdiff_t>(n_hold), order.end());

  ModelArtifact& m = res.artifact;
  m.family = options.family;
  m.dims = static_cast<std::uint32_t>(dims);
  m.classes = classes;
  m.hyperparams = hp;
  m.seed = seed;
  m.created_at = options.created_at;
  m.trained_on = options.window;
  std::vector<int> train_labels;
  for (auto r : res.train_rows) train_labels.push_back(label_of[r]);
  if (m.family == Family::kSgdLinear) {
    fit_sgd(m, data, res.train_rows, train_labels, hp, seed);
  } else {
    fit_nb(m, data, res.train_rows, train_labels, hp);
  }

  double correct = 0.0, loss = 0.0;
  for (auto r : res.holdout_rows) {
    const auto p = predict_proba(m, data[r].features.values);
    const auto best = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    correct += best == label_of[r];
    loss -= std::log(std::max(p[static_cast<std::size_t>(label_of[r])], kProbFloor));
  }
  m.metrics = {correct / static_cast<double>(n_hold), loss / static_cast<double>(n_hold), res.train_rows.size(), n_hold};
  res.record = {0, m.family, hp, m.metrics, m.trained_on, m.created_at, m.train_duration, seed};
  return res;
}

// ---------------------------------------------------------------------------
// Search

std::vector<Hyperparams> random_candidates(const HyperSpace& space, std::size_t count, Rng& rng) {
  std::vector<Hyperparams> out;
  for (std::size_t i = 0; i < count; ++i) {
    Hyperparams hp;
    for (const auto& [name, r] : space) {
      double v = r.log_scale ? std::exp(rng.uniform(std::log(r.lo), std::log(r.hi))) : rng.uniform(r.lo, r.hi);
      if (r.integer) v = std::clamp(std::round(v), r.lo, r.hi);
      hp[name] = std::clamp(v, r.lo, r.hi);
    }
    out.push_back(std::move(hp));
  }
  return out;
}

SearchResult warm_start_search(const std::vector<TrainingRecord>& history, const HyperSpace& space,
                               std::size_t budget, std::uint64_t seed, std::span<const joiner::JoinedExample> data,
                               const TrainOptions& options, const SearchStrategy& strategy) {
  if (space.empty()) throw Error(Errc::kConfiguration, "hyperparameter space is empty");
  if (budget < 1) throw Error(Errc::kDomain, "search budget must be >= 1");
  std::vector<Hyperparams> candidates;
  const TrainingRecord* prior = nullptr;
  for (const auto& r : history) {
    if (r.family != options.family) continue;
    bool in_space = true;
    for (const auto& [k, v] : r.hyperparams) {
      auto it = space.find(k);
      in_space = in_space && it != space.end() && v >= it->second.lo && v <= it->second.hi;
    }
    if (in_space && (!prior || r.metrics.accuracy > prior->metrics.accuracy)) prior = &r;
  }
  if (prior) candidates.push_back(prior->hyperparams);
  SearchResult res;
  if (prior && budget == 1) {
    res.best = prior->hyperparams;
    res.metric = std::numeric_limits<double>::quiet_NaN();
    return res;
  }
  Rng rng(seed);
  auto drawn = strategy(space, budget - candidates.size(), rng);
  candidates.insert(candidates.end(), drawn.begin(), drawn.end());
  double best = -1.0;
  for (const auto& hp : candidates) {
    const auto tr = train(data, hp, seed, options);
    res.evaluated.emplace_back(hp, tr.artifact.metrics.accuracy);
    if (tr.artifact.metrics.accuracy > best) {
      best = tr.artifact.metrics.accuracy;
      res.best = hp;
    }
  }
  res.metric = best;
  return res;
}

// ---------------------------------------------------------------------------
// Registry and predictor

std::uint64_t ModelRegistry::publish(ModelArtifact artifact) {
  artifact.version = next_version_;
  if (store_) store_->put_model(artifact.version, artifact.serialize());
  cache_[artifact.version] = std::make_shared<const ModelArtifact>(std::move(artifact));
  return next_version_++;
}

std::shared_ptr<const ModelArtifact> ModelRegistry::get(std::uint64_t version) const {
  if (auto it = cache_.find(version); it != cache_.end()) return it->second;
  if (store_ && store_->contains(version)) {
    return std::make_shared<const ModelArtifact>(ModelArtifact::deserialize(store_->get_model(version)));
  }
  throw Error(Errc::kNotFound, "unknown model version " + std::to_string(version));
}

bool ModelRegistry::contains(std::uint64_t version) const {
  return cache_.count(version) || (store_ && store_->contains(version));
}

bool Predictor::activate(std::shared_ptr<const ModelArtifact> model) {
  if (!model) throw Error(Errc::kDomain, "activate: null model");
  std::lock_guard lock(mu_);
  if (model_ && model_->version == model->version) return false;
  model_ = std::move(model);
  return true;
}

bool Predictor::activate(const ModelRegistry& registry, std::uint64_t version) {
  return activate(registry.get(version));
}

Prediction Predictor::predict(std::span<const double> features, std::int64_t ts) const {
  const auto m = active();
  if (!m) throw Error(Errc::kNotReady, "no active model");
  return modelkit::predict(*m, features, ts);
}

std::shared_ptr<const ModelArtifact> Predictor::active() const {
  std::lock_guard lock(mu_);
  return model_;
}

std::optional<std::uint64_t> Predictor::active_version() const {
  const auto m = active();
  if (!m) return std::nullopt;
  return m->version;
}

}  // namespace driftline::modelkit
