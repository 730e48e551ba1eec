#include "driftline/monitor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/special_functions/beta.hpp>

#include "driftline/store.hpp"

namespace driftline::monitor {

using nlohmann::json;

const char* health_kind_name(HealthKind k) {
  switch (k) {
    case HealthKind::kMetric: return "metric";
    case HealthKind::kWarning: return "warning";
    case HealthKind::kExpiry: return "expiry";
    case HealthKind::kDetectorFired: return "detector_fired";
    case HealthKind::kActionTaken: return "action_taken";
  }
  return "metric";
}

namespace {

HealthKind health_kind_from(const std::string& s) {
  for (auto k : {HealthKind::kMetric, HealthKind::kWarning, HealthKind::kExpiry, HealthKind::kDetectorFired,
                 HealthKind::kActionTaken}) {
    if (s == health_kind_name(k)) return k;
  }
  throw Error(Errc::kData, "unknown health event kind '" + s + "'");
}

// P(X >= k) for X ~ Binomial(n, p).
double binomial_upper(std::size_t k, std::size_t n, double p) {
  if (k == 0) return 1.0;
  if (k > n) return 0.0;
  if (p <= 0.0) return 0.0;
  if (p >= 1.0) return 1.0;
  return boost::math::ibeta(static_cast<double>(k), static_cast<double>(n - k + 1), p);
}

std::string report_id(const std::string& source, std::uint64_t ref, std::uint64_t adv, const char* tag) {
  return source + "-r" + std::to_string(ref) + "-a" + std::to_string(adv) + (tag[0] ? "-" : "") + tag;
}

HealthEvent fired_event(const shift::ShiftReport& r, const std::string& source) {
  return {r.ts,
          HealthKind::kDetectorFired,
          source,
          {{"report_id", r.id},
           {"type", shift::shift_type_name(r.type)},
           {"magnitude", r.magnitude},
           {"detector", r.detector}}};
}

}  // namespace

json to_json(const HealthEvent& e) {
  return {{"ts", e.ts}, {"kind", health_kind_name(e.kind)}, {"source", e.source}, {"payload", e.payload}};
}

HealthEvent health_event_from_json(const json& j) {
  return {j.at("ts").get<std::int64_t>(), health_kind_from(j.at("kind").get<std::string>()),
          j.at("source").get<std::string>(), j.at("payload")};
}

void WindowConfig::validate(const std::string& prefix) const {
  if (reference_size < 2) throw Error(Errc::kConfiguration, prefix + ".reference_size: must be at least 2");
  if (test_size < 2) throw Error(Errc::kConfiguration, prefix + ".test_size: must be at least 2");
  if (step == 0) throw Error(Errc::kConfiguration, prefix + ".step: must be positive");
  if (confirm == 0) throw Error(Errc::kConfiguration, prefix + ".confirm: must be positive");
  if (!(detector.alpha > 0.0 && detector.alpha < 1.0))
    throw Error(Errc::kConfiguration, prefix + ".alpha: must be in (0, 1)");
}

// ---------------------------------------------------------------------------

WindowedDetector::WindowedDetector(WindowConfig config, std::string source)
    : config_(std::move(config)), source_(std::move(source)) {
  config_.validate(source_);
}

void WindowedDetector::reset() {
  frozen_ = false;
  warmup_.clear();
  reference_ = shift::Matrix();
  reference_labels_.clear();
  test_.clear();
  since_advance_ = 0;
  consecutive_ = 0;
}

void WindowedDetector::freeze(const std::vector<Row>& rows) {
  reference_ = shift::Matrix(rows.front().x.size());
  reference_labels_.clear();
  const bool labelled = std::all_of(rows.begin(), rows.end(), [](const Row& r) { return r.label.has_value(); });
  for (const auto& r : rows) {
    reference_.push_row(r.x);
    if (labelled) reference_labels_.push_back(*r.label);
  }
  frozen_ = true;
  ++reference_id_;
}

std::optional<WindowedDetector::Advance> WindowedDetector::push(std::int64_t ts, std::span<const double> row,
                                                                std::optional<int> label) {
  (void)ts;
  Row r{{row.begin(), row.end()}, label};
  if (!frozen_) {
    warmup_.push_back(std::move(r));
    if (warmup_.size() >= config_.reference_size) {
      freeze(warmup_);
      warmup_.clear();
    }
    return std::nullopt;
  }
  test_.push_back(std::move(r));
  if (test_.size() > config_.test_size) test_.pop_front();
  ++since_advance_;
  if (test_.size() < config_.test_size || since_advance_ < config_.step) return std::nullopt;

  since_advance_ = 0;
  ++advances_;
  Advance adv;
  adv.pair.reference = reference_;
  adv.pair.reference_labels = reference_labels_;
  adv.pair.test = shift::Matrix(reference_.cols());
  const bool labelled = !reference_labels_.empty() &&
                        std::all_of(test_.begin(), test_.end(), [](const Row& x) { return x.label.has_value(); });
  for (const auto& t : test_) {
    adv.pair.test.push_row(t.x);
    if (labelled) adv.pair.test_labels.push_back(*t.label);
  }
  adv.pair.reference_id = reference_id_;
  adv.pair.test_id = advances_;
  adv.detection = shift::detect_shift(adv.pair, config_.detector);
  if (adv.detection.report) {
    if (++consecutive_ >= config_.confirm) {
      adv.confirmed = true;
      freeze(std::vector<Row>(test_.begin(), test_.end()));
      test_.clear();
      consecutive_ = 0;
    }
  } else {
    consecutive_ = 0;
  }
  return adv;
}

// ---------------------------------------------------------------------------

DataMonitor::DataMonitor(DataMonitorConfig config) : config_(std::move(config)), windows_(config_.window, "data") {
  if (!(config_.anomaly_low >= 0.0 && config_.anomaly_low < config_.anomaly_high && config_.anomaly_high <= 1.0))
    throw Error(Errc::kConfiguration, "data.anomaly: need 0 <= low < high <= 1");
}

std::size_t DataMonitor::sketch_bytes() const {
  std::size_t b = 0;
  for (const auto& d : digests_) b += d.memory_bytes();
  return b;
}

void DataMonitor::rebuild_band() {
  const auto& ref = windows_.reference();
  digests_.assign(ref.cols(), sketch::TDigest(100.0));
  for (std::size_t j = 0; j < ref.cols(); ++j) {
    for (std::size_t i = 0; i < ref.rows(); ++i) digests_[j].add(ref.row(i)[j]);
    digests_[j].compress();
  }
  band_.resize(ref.cols());
  for (std::size_t j = 0; j < ref.cols(); ++j)
    band_[j] = {digests_[j].quantile(config_.anomaly_low), digests_[j].quantile(config_.anomaly_high)};
  std::size_t outside = 0;
  for (std::size_t i = 0; i < ref.rows(); ++i) {
    const auto r = ref.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (r[j] < band_[j].first || r[j] > band_[j].second) {
        ++outside;
        break;
      }
    }
  }
  // Floor at one event per window so an empty tail does not make every
  // single outlier significant.
  anomaly_base_rate_ = std::max(static_cast<double>(outside), 1.0) / static_cast<double>(ref.rows());
  frozen_id_seen_ = windows_.reference_id();
  block_events_ = 0;
  block_anomalies_ = 0;
}

std::optional<shift::ShiftReport> DataMonitor::change_point(const shift::WindowPair& full, std::int64_t ts) {
  Rng rng(config_.seed ^ splitmix64(full.test_id));
  auto sub = [&](const shift::Matrix& m) {
    std::vector<std::size_t> idx(m.rows());
    std::iota(idx.begin(), idx.end(), 0);
    if (idx.size() > config_.kliep_rows) {
      rng.shuffle(idx);
      idx.resize(config_.kliep_rows);
      std::sort(idx.begin(), idx.end());
    }
    shift::Matrix out(m.cols());
    for (auto i : idx) out.push_row(m.row(i));
    return out;
  };
  shift::WindowPair pair;
  pair.reference = sub(full.reference);
  pair.test = sub(full.test);
  pair.reference_id = full.reference_id;
  pair.test_id = full.test_id;

  shift::KliepOptions opt;
  opt.seed = config_.seed ^ full.test_id;
  opt.policy = config_.policy;
  const auto model = shift::kliep_fit(pair, config_.kliep_centers, shift::default_sigma_grid(pair, opt.seed), opt);
  const double score = shift::change_score(model, pair.test);
  const auto null = shift::null_scores(pair, config_.kliep_centers, model.sigma, config_.kliep_null, opt);
  if (null.size() < 2) return std::nullopt;
  const double p99 = shift::percentile(null, 0.99);
  if (!(score > p99)) return std::nullopt;

  double mean = 0.0;
  for (double v : null) mean += v;
  mean /= static_cast<double>(null.size());
  double var = 0.0;
  for (double v : null) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(null.size() - 1));
  const double median = shift::percentile(null, 0.5);
  const double p95 = shift::percentile(null, 0.95);

  shift::ShiftReport r;
  r.id = report_id("data", full.reference_id, full.test_id, "cp");
  r.ts = ts;
  r.type = shift::ShiftType::kChangePoint;
  r.statistic = score;
  r.null_p95 = p95;
  // Exceedance over the null median in units of the null 95th percentile.
  r.magnitude = p95 > median ? (score - median) / (p95 - median) : 0.0;
  // Normal tail of the null replicates, so strong changes resolve below
  // 1/(replicates+1).
  r.p_value = sd > 0.0 ? 0.5 * std::erfc((score - mean) / sd / std::sqrt(2.0)) : 0.0;
  r.detector = "kliep";
  r.ref_window = full.reference_id;
  r.test_window = full.test_id;
  return r;
}

StepResult DataMonitor::step(const Event& e) {
  StepResult out;
  const std::size_t expected = config_.dims != 0 ? config_.dims : windows_.reference().cols();
  std::string problem;
  if (!e.features || e.features->values.empty()) {
    problem = "missing features";
  } else if (expected != 0 && e.features->values.size() != expected) {
    problem = "expected " + std::to_string(expected) + " features, got " + std::to_string(e.features->values.size());
  } else if (!std::all_of(e.features->values.begin(), e.features->values.end(),
                          [](double v) { return std::isfinite(v); })) {
    problem = "non-finite feature";
  } else if (windows_.warming() && windows_.reference_rows() == 0 && config_.dims == 0) {
    config_.dims = e.features->values.size();
  }
  if (!problem.empty()) {
    ++malformed_;
    out.events.push_back({e.ts, HealthKind::kWarning, "data", {{"malformed", problem}, {"key", e.key}}});
    return out;
  }
  const auto& x = e.features->values;

  if (!windows_.warming()) {
    ++block_events_;
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (x[j] < band_[j].first || x[j] > band_[j].second) {
        ++block_anomalies_;
        ++anomalies_;
        out.events.push_back(
            {e.ts, HealthKind::kWarning, "data", {{"anomaly", e.key}, {"dim", j}, {"value", x[j]}}});
        break;
      }
    }
  }

  const bool was_warming = windows_.warming();
  auto adv = windows_.push(e.ts, x, std::nullopt);
  if (was_warming && !windows_.warming()) {
    rebuild_band();
    out.events.push_back({e.ts, HealthKind::kMetric, "data",
                          {{"reference_frozen", windows_.reference_id()}, {"rows", windows_.reference_rows()}}});
    return out;
  }
  if (!adv) return out;

  const std::size_t n = block_events_, k = block_anomalies_;
  block_events_ = block_anomalies_ = 0;

  if (adv->detection.report) {
    auto r = *adv->detection.report;
    r.id = report_id("data", adv->pair.reference_id, adv->pair.test_id, "");
    r.ts = e.ts;
    out.events.push_back(fired_event(r, "data"));
    out.reports.push_back(std::move(r));
  }
  if (n > 0) {
    const double p = binomial_upper(k, n, anomaly_base_rate_);
    if (p < config_.anomaly_alpha) {
      // Critical count at 0.05 gives the null scale.
      std::size_t crit = 0;
      while (crit <= n && binomial_upper(crit, n, anomaly_base_rate_) > 0.05) ++crit;
      shift::ShiftReport r;
      r.id = report_id("data", adv->pair.reference_id, adv->pair.test_id, "anomaly");
      r.ts = e.ts;
      r.type = shift::ShiftType::kAnomaly;
      r.statistic = static_cast<double>(k) / static_cast<double>(n);
      r.null_p95 = static_cast<double>(crit) / static_cast<double>(n);
      r.magnitude = crit > 0 ? static_cast<double>(k) / static_cast<double>(crit) : static_cast<double>(k);
      r.p_value = p;
      r.detector = "tdigest-band";
      r.ref_window = adv->pair.reference_id;
      r.test_window = adv->pair.test_id;
      out.events.push_back(fired_event(r, "data"));
      out.reports.push_back(std::move(r));
    }
  }
  if (adv->confirmed) {
    if (config_.kliep) {
      try {
        if (auto cp = change_point(adv->pair, e.ts)) {
          out.events.push_back(fired_event(*cp, "data"));
          out.reports.push_back(std::move(*cp));
        }
      } catch (const Error& err) {
        out.events.push_back({e.ts, HealthKind::kWarning, "data", {{"kliep", err.what()}}});
      }
    }
    rebuild_band();
    out.events.push_back({e.ts, HealthKind::kMetric, "data",
                          {{"reference_frozen", windows_.reference_id()}, {"rows", windows_.reference_rows()}}});
  }
  return out;
}

// ---------------------------------------------------------------------------

PredictionMonitor::PredictionMonitor(PredictionMonitorConfig config)
    : config_(std::move(config)), windows_(config_.window, "prediction"), eddm_(config_.eddm) {
  if (config_.accuracy_window == 0) throw Error(Errc::kConfiguration, "prediction.accuracy_window: must be positive");
  eddm_.reset();
}

std::optional<double> PredictionMonitor::model_health() const {
  if (outcomes_.empty()) return std::nullopt;
  return static_cast<double>(correct_) / static_cast<double>(outcomes_.size());
}

void PredictionMonitor::reset() {
  windows_.reset();
  outcomes_.clear();
  correct_ = 0;
  eddm_.reset();
  any_abrupt_ = false;
}

StepResult PredictionMonitor::step(const modelkit::Prediction& pred, std::optional<int> truth) {
  StepResult out;
  if (!truth) {
    const double conf[1] = {pred.confidence};
    auto adv = windows_.push(pred.ts, conf, pred.value);
    if (adv && adv->detection.report) {
      auto r = *adv->detection.report;
      r.id = report_id("prediction", adv->pair.reference_id, adv->pair.test_id, "");
      r.ts = pred.ts;
      r.detector = "prediction:" + r.detector;
      out.events.push_back(fired_event(r, "prediction"));
      out.reports.push_back(std::move(r));
      last_abrupt_advance_ = windows_.advances();
      any_abrupt_ = true;
    }
    return out;
  }

  const bool ok = pred.value == *truth;
  outcomes_.push_back(ok);
  correct_ += ok;
  if (outcomes_.size() > config_.accuracy_window) {
    correct_ -= outcomes_.front();
    outcomes_.pop_front();
  }
  const auto before = eddm_.level;
  eddm_ = shift::eddm_update(eddm_, !ok);
  if (eddm_.level == shift::DriftLevel::kWarning && before == shift::DriftLevel::kNormal) {
    out.events.push_back({pred.ts, HealthKind::kWarning, "prediction", {{"eddm", shift::to_json(eddm_)}}});
  }
  if (eddm_.level == shift::DriftLevel::kDrift) {
    // A recent abrupt report already explains the degradation.
    const bool abrupt_recent = any_abrupt_ && windows_.advances() - last_abrupt_advance_ <= 5;
    if (!abrupt_recent) {
      Rng rng(config_.seed ^ splitmix64(++gradual_count_));
      std::vector<double> accs;
      const std::vector<bool> sample(outcomes_.begin(), outcomes_.end());
      for (std::size_t b = 0; b < config_.bootstrap; ++b) {
        std::size_t c = 0;
        for (std::size_t i = 0; i < sample.size(); ++i) c += sample[rng.below(sample.size())];
        accs.push_back(static_cast<double>(c) / static_cast<double>(sample.size()));
      }
      shift::ShiftReport r;
      r.id = "prediction-eddm-" + std::to_string(gradual_count_);
      r.ts = pred.ts;
      r.type = shift::ShiftType::kGradual;
      r.statistic = eddm_.ratio;
      r.null_p95 = eddm_.drift_ratio;
      r.magnitude = (1.0 - eddm_.ratio) / (1.0 - eddm_.drift_ratio);
      if (!accs.empty()) r.ci = std::make_pair(shift::percentile(accs, 0.025), shift::percentile(accs, 0.975));
      r.detector = "eddm";
      r.ref_window = windows_.reference_id();
      r.test_window = windows_.advances();
      out.events.push_back(fired_event(r, "prediction"));
      out.reports.push_back(std::move(r));
    } else {
      out.events.push_back({pred.ts, HealthKind::kDetectorFired, "prediction",
                            {{"detector", "eddm"}, {"ratio", eddm_.ratio}, {"explained_by_abrupt", true}}});
    }
    eddm_.reset();
  }
  return out;
}

// ---------------------------------------------------------------------------

json to_json(const SystemState& s) {
  json rules = json::object();
  for (const auto& [k, v] : s.rule_last_fired) rules[k] = v;
  return {{"snapshot_id", s.snapshot_id},
          {"wall_clock", s.wall_clock},
          {"time_since_retrain", s.time_since_retrain},
          {"retrain_cost", s.retrain_cost},
          {"prediction_value", s.prediction_value},
          {"horizon_events", s.horizon_events},
          {"latest_shift", s.latest_shift ? shift::to_json(*s.latest_shift) : json(nullptr)},
          {"report_ids", s.report_ids},
          {"label_coverage", s.label_coverage},
          {"model_health", s.model_health ? json(*s.model_health) : json(nullptr)},
          {"model_baseline", s.model_baseline},
          {"health_samples", s.health_samples},
          {"active_model_version", s.active_model_version},
          {"previous_model_version", s.previous_model_version},
          {"eddm_level", s.eddm_level},
          {"last_retrain_ts", s.last_retrain_ts},
          {"retrain_in_flight", s.retrain_in_flight},
          {"rule_last_fired", rules},
          {"stale", s.stale}};
}

SystemState system_state_from_json(const json& j) {
  SystemState s;
  s.snapshot_id = j.at("snapshot_id").get<std::uint64_t>();
  s.wall_clock = j.at("wall_clock").get<std::int64_t>();
  s.time_since_retrain = j.at("time_since_retrain").get<double>();
  s.retrain_cost = j.at("retrain_cost").get<double>();
  s.prediction_value = j.at("prediction_value").get<double>();
  s.horizon_events = j.at("horizon_events").get<double>();
  if (!j.at("latest_shift").is_null()) s.latest_shift = shift::shift_report_from_json(j.at("latest_shift"));
  s.report_ids = j.at("report_ids").get<std::vector<std::string>>();
  s.label_coverage = j.at("label_coverage").get<double>();
  if (!j.at("model_health").is_null()) s.model_health = j.at("model_health").get<double>();
  s.model_baseline = j.at("model_baseline").get<double>();
  s.health_samples = j.at("health_samples").get<std::uint64_t>();
  s.active_model_version = j.at("active_model_version").get<std::uint64_t>();
  s.previous_model_version = j.at("previous_model_version").get<std::uint64_t>();
  s.eddm_level = j.at("eddm_level").get<std::string>();
  s.last_retrain_ts = j.at("last_retrain_ts").get<std::int64_t>();
  s.retrain_in_flight = j.at("retrain_in_flight").get<bool>();
  for (const auto& [k, v] : j.at("rule_last_fired").items()) s.rule_last_fired[k] = v.get<std::int64_t>();
  s.stale = j.at("stale").get<bool>();
  return s;
}

void WorldState::refresh_evidence() {
  live_.report_ids.clear();
  live_.latest_shift.reset();
  for (const auto& r : recent_) {
    live_.report_ids.push_back(r.id);
    if (r.type != shift::ShiftType::kAnomaly) live_.latest_shift = r;
  }
}

void WorldState::note_report(const shift::ShiftReport& r) {
  recent_.push_back(r);
  refresh_evidence();
}

void WorldState::note_retrain(std::int64_t ts) {
  live_.last_retrain_ts = ts;
  recent_.clear();
  refresh_evidence();
}

SystemState WorldState::world_state(std::int64_t now) {
  if (shift_ttl_ > 0) {
    std::erase_if(recent_, [&](const shift::ShiftReport& r) { return r.ts < now - shift_ttl_; });
    refresh_evidence();
  }
  SystemState s = live_;
  s.snapshot_id = next_id_++;
  s.wall_clock = now;
  s.time_since_retrain = std::max<double>(0.0, static_cast<double>(now - s.last_retrain_ts) / 1000.0);
  s.label_coverage = std::clamp(s.label_coverage, 0.0, 1.0);
  s.stale = false;
  if (stores_ != nullptr) {
    try {
      stores_->append(store::StoreKind::kState, to_json(s));
    } catch (const Error&) {
      s.stale = true;
    } catch (const std::exception&) {
      s.stale = true;
    }
  }
  snapshots_[s.snapshot_id] = to_json(s).dump();
  while (snapshots_.size() > memory_limit_) snapshots_.erase(snapshots_.begin());
  return s;
}

const std::string& WorldState::read(std::uint64_t snapshot_id) const {
  auto it = snapshots_.find(snapshot_id);
  if (it == snapshots_.end()) throw Error(Errc::kNotFound, "snapshot " + std::to_string(snapshot_id) + " not held");
  return it->second;
}

}  // namespace driftline::monitor
