#pragma once

#include <cstdint>

#include "json.hpp"

namespace driftline::shift {

enum class DriftLevel { kNormal, kWarning, kDrift };
const char* level_name(DriftLevel level);

/// Early drift detection from the distances between classification errors.
/// The monitored value is p' + 2s' (mean and std of inter-error distance);
/// the level compares it with its running maximum, but only once at least
/// `min_errors` errors have been seen. The maximum is tracked from that
/// point on.
struct EddmState {
  double warning_ratio = 0.95;
  double drift_ratio = 0.90;
  std::uint64_t min_errors = 30;

  std::uint64_t steps = 0;
  std::uint64_t error_count = 0;
  std::uint64_t last_error_step = 0;
  double mean_distance = 0.0;
  double m2 = 0.0;  // Welford accumulator for the distance variance
  double max_value = 0.0;
  double max_mean = 0.0;
  double max_std = 0.0;
  double ratio = 1.0;
  DriftLevel level = DriftLevel::kNormal;

  double std_distance() const;
  void reset();
};

/// Feeds one prediction outcome.
EddmState eddm_update(EddmState state, bool is_error);

nlohmann::json to_json(const EddmState& s);

}  // namespace driftline::shift
