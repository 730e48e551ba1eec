#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"

namespace driftline {

/// Feature payload: a dense vector, optionally with field names when the
/// source record carried an object (names are then sorted).
struct Features {
  std::vector<double> values;
  std::vector<std::string> names;

  std::size_t dims() const { return values.size(); }
  friend bool operator==(const Features&, const Features&) = default;
};

/// Categorical-or-real label.
using Label = std::variant<double, std::string>;

/// Numeric class index of a label; strings are rejected.
std::optional<int> class_of(const Label& label);

/// One timestamped stream record as it appears on the wire.
struct Event {
  std::string key;
  std::int64_t ts = 0;  // event time, ms
  std::optional<Features> features;
  std::optional<Label> label;
  bool weak = false;
  std::string source;

  friend bool operator==(const Event&, const Event&) = default;
};

/// Parses one JSONL record. Requires `key` and `ts` plus `features` (object
/// or array) and/or `label`. Throws kData naming the offending field.
Event parse_event(std::string_view line);
nlohmann::json to_json(const Event& e);
nlohmann::json to_json(const Features& f);
nlohmann::json to_json(const Label& l);
Label label_from_json(const nlohmann::json& j);

}  // namespace driftline
