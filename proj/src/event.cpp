#include "driftline/event.hpp"

#include <cmath>

#include "driftline/common.hpp"

namespace driftline {

using nlohmann::json;

std::optional<int> class_of(const Label& label) {
  if (const auto* d = std::get_if<double>(&label)) {
    if (std::isfinite(*d) && *d >= 0.0 && std::floor(*d) == *d) return static_cast<int>(*d);
  }
  return std::nullopt;
}

Label label_from_json(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) return j.get<std::string>();
  if (j.is_boolean()) return j.get<bool>() ? 1.0 : 0.0;
  throw Error(Errc::kData, "label: expected number or string");
}

Event parse_event(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw Error(Errc::kData, std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(Errc::kData, "event must be a JSON object");
  Event e;
  if (!j.contains("key")) throw Error(Errc::kData, "key: missing");
  const auto& key = j["key"];
  if (key.is_string()) {
    e.key = key.get<std::string>();
  } else if (key.is_number_integer()) {
    e.key = std::to_string(key.get<std::int64_t>());
  } else {
    throw Error(Errc::kData, "key: expected string or integer");
  }
  if (e.key.empty()) throw Error(Errc::kData, "key: must be non-empty");
  if (!j.contains("ts") || !j["ts"].is_number()) throw Error(Errc::kData, "ts: missing or not a number");
  e.ts = j["ts"].get<std::int64_t>();
  if (j.contains("features")) {
    const auto& f = j["features"];
    Features feats;
    if (f.is_array()) {
      for (const auto& v : f) {
        if (!v.is_number()) throw Error(Errc::kData, "features: array entries must be numbers");
        feats.values.push_back(v.get<double>());
      }
    } else if (f.is_object()) {
      for (const auto& [name, v] : f.items()) {
        if (!v.is_number()) throw Error(Errc::kData, "features." + name + ": must be a number");
        feats.names.push_back(name);
        feats.values.push_back(v.get<double>());
      }
    } else {
      throw Error(Errc::kData, "features: expected array or object");
    }
    e.features = std::move(feats);
  }
  if (j.contains("label") && !j["label"].is_null()) e.label = label_from_json(j["label"]);
  if (!e.features && !e.label) throw Error(Errc::kData, "event needs features or label");
  if (j.contains("weak")) e.weak = j["weak"].get<bool>();
  if (j.contains("source")) e.source = j["source"].get<std::string>();
  return e;
}

json to_json(const Features& f) {
  if (f.names.empty()) return f.values;
  json obj = json::object();
  for (std::size_t i = 0; i < f.values.size(); ++i) obj[f.names[i]] = f.values[i];
  return obj;
}

json to_json(const Label& l) {
  return std::visit([](const auto& v) { return json(v); }, l);
}

json to_json(const Event& e) {
  json j;
  j["key"] = e.key;
  j["ts"] = e.ts;
  if (e.features) j["features"] = to_json(*e.features);
  if (e.label) j["label"] = to_json(*e.label);
  if (e.weak) j["weak"] = true;
  if (!e.source.empty()) j["source"] = e.source;
  return j;
}

}  // namespace driftline
