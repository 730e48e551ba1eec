#include "driftline/shift/eddm.hpp"

#include <cmath>

namespace driftline::shift {

const char* level_name(DriftLevel level) {
  switch (level) {
    case DriftLevel::kNormal: return "normal";
    case DriftLevel::kWarning: return "warning";
    case DriftLevel::kDrift: return "drift";
  }
  return "?";
}

double EddmState::std_distance() const {
  return error_count == 0 ? 0.0 : std::sqrt(m2 / static_cast<double>(error_count));
}

void EddmState::reset() {
  const double w = warning_ratio, d = drift_ratio;
  const auto k = min_errors;
  *this = EddmState{};
  warning_ratio = w;
  drift_ratio = d;
  min_errors = k;
}

EddmState eddm_update(EddmState s, bool is_error) {
  ++s.steps;
  if (!is_error) return s;
  ++s.error_count;
  const double distance = static_cast<double>(s.steps - s.last_error_step);
  s.last_error_step = s.steps;
  const double old_mean = s.mean_distance;
  s.mean_distance += (distance - old_mean) / static_cast<double>(s.error_count);
  s.m2 += (distance - s.mean_distance) * (distance - old_mean);

  if (s.error_count < s.min_errors) {
    s.level = DriftLevel::kNormal;
    s.ratio = 1.0;
    return s;
  }
  const double sd = s.std_distance();
  const double value = s.mean_distance + 2.0 * sd;
  if (value > s.max_value) {
    s.max_value = value;
    s.max_mean = s.mean_distance;
    s.max_std = sd;
  }
  s.ratio = value / s.max_value;
  if (s.ratio < s.drift_ratio) {
    s.level = DriftLevel::kDrift;
  } else if (s.ratio < s.warning_ratio) {
    s.level = DriftLevel::kWarning;
  } else {
    s.level = DriftLevel::kNormal;
  }
  return s;
}

nlohmann::json to_json(const EddmState& s) {
  return {{"steps", s.steps},       {"errors", s.error_count},       {"mean_distance", s.mean_distance},
          {"std_distance", s.std_distance()}, {"ratio", s.ratio}, {"level", level_name(s.level)}};
}

}  // namespace driftline::shift
