#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "driftline/common.hpp"
#include "driftline/shift/stats.hpp"
#include "driftline/shift/window.hpp"
#include "json.hpp"

namespace driftline::shift {

enum class ShiftType { kCovariate, kPriorProbability, kChangePoint, kGradual, kAnomaly, kUnknown };
const char* shift_type_name(ShiftType t);
ShiftType shift_type_from(const std::string& name);

struct FeatureAttribution {
  std::size_t index = 0;
  std::string name;
  double statistic = 0.0;  // KS D
  double p_value = 1.0;    // Bonferroni-adjusted
  double psi = 0.0;

  friend bool operator==(const FeatureAttribution&, const FeatureAttribution&) = default;
};

struct ShiftReport {
  std::string id;
  std::int64_t ts = 0;
  ShiftType type = ShiftType::kUnknown;
  double magnitude = 0.0;  // statistic / null_p95
  double statistic = 0.0;
  double null_p95 = 0.0;
  std::optional<double> p_value;
  std::optional<std::pair<double, double>> ci;
  std::vector<FeatureAttribution> features;  // ranked, strongest first
  std::string detector;
  std::uint64_t ref_window = 0;
  std::uint64_t test_window = 0;

  friend bool operator==(const ShiftReport&, const ShiftReport&) = default;
};

nlohmann::json to_json(const ShiftReport& r);
ShiftReport shift_report_from_json(const nlohmann::json& j);

struct DetectorConfig {
  double alpha = 0.05;
  std::size_t min_reference = 30;
  std::size_t min_test = 30;
  std::size_t top_k = 5;
  std::size_t max_bins = 64;
  std::vector<std::string> feature_names;
  ExecPolicy policy = ExecPolicy::kParallel;
};

struct Detection {
  bool ready = false;
  std::optional<ShiftReport> report;
  std::vector<FeatureAttribution> per_feature;  // in dimension order
  std::optional<ChiSquareResult> labels;
  double label_p_adjusted = 1.0;
};

/// Runs KS and PSI on every dimension and a chi-square test on the labels,
/// Bonferroni-adjusted over all tests. A report is produced only when some
/// adjusted p-value is below alpha: labels significant means
/// prior_probability, features only means covariate. Windows below the
/// configured minimum sizes give ready = false.
Detection detect_shift(const WindowPair& pair, const DetectorConfig& config);

/// Category counts over labels 0..classes-1 (labels >= classes are clamped).
std::vector<std::uint64_t> class_counts(const std::vector<int>& labels, std::size_t classes);

}  // namespace driftline::shift
