#include "driftline/shift/detector.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/special_functions/gamma.hpp>

namespace driftline::shift {

using nlohmann::json;

namespace {
constexpr const char* kTypeNames[] = {"covariate", "prior_probability", "change_point", "gradual", "anomaly", "unknown"};
}

const char* shift_type_name(ShiftType t) { return kTypeNames[static_cast<int>(t)]; }

ShiftType shift_type_from(const std::string& name) {
  for (int i = 0; i < 6; ++i) {
    if (name == kTypeNames[i]) return static_cast<ShiftType>(i);
  }
  throw Error(Errc::kData, "unknown shift type '" + name + "'");
}

json to_json(const ShiftReport& r) {
  json j;
  j["id"] = r.id;
  j["ts"] = r.ts;
  j["type"] = shift_type_name(r.type);
  j["magnitude"] = r.magnitude;
  j["statistic"] = r.statistic;
  j["null_p95"] = r.null_p95;
  if (r.p_value) j["p_value"] = *r.p_value;
  if (r.ci) j["ci"] = {r.ci->first, r.ci->second};
  j["features"] = json::array();
  for (const auto& f : r.features) {
    j["features"].push_back(
        {{"index", f.index}, {"name", f.name}, {"statistic", f.statistic}, {"p_value", f.p_value}, {"psi", f.psi}});
  }
  j["detector"] = r.detector;
  j["ref_window"] = r.ref_window;
  j["test_window"] = r.test_window;
  return j;
}

ShiftReport shift_report_from_json(const json& j) {
  ShiftReport r;
  r.id = j.value("id", "");
  r.ts = j.value("ts", std::int64_t{0});
  r.type = shift_type_from(j.at("type").get<std::string>());
  r.magnitude = j.at("magnitude").get<double>();
  r.statistic = j.value("statistic", 0.0);
  r.null_p95 = j.value("null_p95", 0.0);
  if (j.contains("p_value")) r.p_value = j["p_value"].get<double>();
  if (j.contains("ci")) r.ci = std::make_pair(j["ci"][0].get<double>(), j["ci"][1].get<double>());
  for (const auto& f : j.at("features")) {
    r.features.push_back({f.at("index").get<std::size_t>(), f.value("name", ""), f.at("statistic").get<double>(),
                          f.at("p_value").get<double>(), f.value("psi", 0.0)});
  }
  r.detector = j.at("detector").get<std::string>();
  r.ref_window = j.at("ref_window").get<std::uint64_t>();
  r.test_window = j.at("test_window").get<std::uint64_t>();
  return r;
}

std::vector<std::uint64_t> class_counts(const std::vector<int>& labels, std::size_t classes) {
  std::vector<std::uint64_t> c(classes, 0);
  for (int l : labels) {
    if (l < 0 || classes == 0) continue;
    ++c[std::min<std::size_t>(static_cast<std::size_t>(l), classes - 1)];
  }
  return c;
}

Detection detect_shift(const WindowPair& pair, const DetectorConfig& config) {
  Detection out;
  if (!(config.alpha > 0.0 && config.alpha < 1.0)) throw Error(Errc::kConfiguration, "detector.alpha: must be in (0,1)");
  const std::size_t nr = pair.reference.rows(), nt = pair.test.rows();
  if (nr < std::max<std::size_t>(config.min_reference, 1) || nt < std::max<std::size_t>(config.min_test, 1)) return out;
  if (pair.reference.cols() != pair.test.cols()) throw Error(Errc::kDomain, "detect_shift: dimensionality mismatch");
  out.ready = true;

  const std::size_t dims = pair.feature_dims();
  const bool with_labels = !pair.reference_labels.empty() && !pair.test_labels.empty();
  const double tests = static_cast<double>(dims + (with_labels ? 1 : 0));

  out.per_feature.resize(dims);
  auto one = [&](std::size_t j) {
    const auto a = pair.reference.column(j), b = pair.test.column(j);
    const auto ks = ks_statistic(a, b);
    auto ha = Histogram::freedman_diaconis(a, 4, config.max_bins);
    auto hb = ha.empty_like();
    ha.add_all(a);
    hb.add_all(b);
    auto& f = out.per_feature[j];
    f.index = j;
    f.name = j < config.feature_names.size() ? config.feature_names[j] : "x" + std::to_string(j);
    f.statistic = ks.d;
    f.p_value = std::min(1.0, ks.p * tests);
    f.psi = psi(ha, hb);
  };
  if (config.policy == ExecPolicy::kParallel) {
#pragma omp parallel for schedule(static)
    for (std::size_t j = 0; j < dims; ++j) one(j);
  } else {
    for (std::size_t j = 0; j < dims; ++j) one(j);
  }

  bool labels_significant = false;
  if (with_labels) {
    int top = 0;
    for (int l : pair.reference_labels) top = std::max(top, l);
    for (int l : pair.test_labels) top = std::max(top, l);
    const auto classes = static_cast<std::size_t>(top) + 1;
    const auto ca = class_counts(pair.reference_labels, classes), cb = class_counts(pair.test_labels, classes);
    out.labels = chi_square_homogeneity(ca, cb);
    out.label_p_adjusted = std::min(1.0, out.labels->p * tests);
    labels_significant = out.label_p_adjusted < config.alpha;
  }

  double best_feature_p = 1.0;
  double best_d = 0.0;
  for (const auto& f : out.per_feature) {
    best_feature_p = std::min(best_feature_p, f.p_value);
    best_d = std::max(best_d, f.statistic);
  }
  const bool features_significant = best_feature_p < config.alpha;
  if (!features_significant && !labels_significant) return out;

  ShiftReport r;
  r.detector = "ks+psi+chi2";
  r.ref_window = pair.reference_id;
  r.test_window = pair.test_id;
  if (labels_significant) {
    r.type = ShiftType::kPriorProbability;
    r.statistic = out.labels->statistic;
    r.null_p95 = 2.0 * boost::math::gamma_q_inv(0.5 * out.labels->dof, 0.05);
    r.p_value = out.label_p_adjusted;
  } else {
    r.type = ShiftType::kCovariate;
    r.statistic = best_d;
    r.null_p95 = ks_critical(0.05, nr, nt);
    r.p_value = best_feature_p;
  }
  r.magnitude = r.statistic / r.null_p95;
  r.features = out.per_feature;
  std::stable_sort(r.features.begin(), r.features.end(),
                   [](const auto& a, const auto& b) { return a.statistic > b.statistic; });
  r.features.resize(std::min({r.features.size(), config.top_k, dims}));
  out.report = std::move(r);
  return out;
}

}  // namespace driftline::shift
