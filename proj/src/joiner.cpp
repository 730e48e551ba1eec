#include "driftline/joiner.hpp"

#include <algorithm>

#include "driftline/common.hpp"

namespace driftline::joiner {

using nlohmann::json;

json to_json(const JoinedExample& ex) {
  json j;
  j["key"] = ex.key;
  j["features"] = driftline::to_json(ex.features);
  j["label"] = driftline::to_json(ex.label);
  if (ex.weak) j["weak"] = true;
  j["primary_ts"] = ex.primary_ts;
  j["feedback_ts"] = ex.feedback_ts;
  j["join_latency"] = ex.join_latency();
  return j;
}

JoinedExample joined_from_json(const json& j) {
  JoinedExample ex;
  ex.key = j.at("key").get<std::string>();
  const auto& f = j.at("features");
  if (f.is_array()) {
    ex.features.values = f.get<std::vector<double>>();
  } else {
    for (const auto& [name, v] : f.items()) {
      ex.features.names.push_back(name);
      ex.features.values.push_back(v.get<double>());
    }
  }
  ex.label = label_from_json(j.at("label"));
  ex.weak = j.value("weak", false);
  ex.primary_ts = j.at("primary_ts").get<std::int64_t>();
  ex.feedback_ts = j.at("feedback_ts").get<std::int64_t>();
  return ex;
}

void JoinerConfig::validate() const {
  if (watermark_lag < 0) throw Error(Errc::kConfiguration, "joiner.watermark_lag: must be >= 0");
  if (timeout < watermark_lag) throw Error(Errc::kConfiguration, "joiner.timeout: must be >= watermark_lag");
  if (max_buffer < 1) throw Error(Errc::kConfiguration, "joiner.max_buffer: must be >= 1");
}

const char* side_name(Side s) { return s == Side::kPrimary ? "primary" : "feedback"; }

double JoinerStats::label_coverage() const {
  return offered_primary == 0 ? 0.0 : static_cast<double>(joined) / static_cast<double>(offered_primary);
}

template <typename T>
void StreamJoiner::Buffer<T>::push(std::uint64_t seq, T ev) {
  by_key[ev.key].push_back(seq);
  by_time.emplace(ev.ts, seq);
  entries.emplace(seq, std::move(ev));
}

template <typename T>
std::optional<T> StreamJoiner::Buffer<T>::pop_key(const std::string& key) {
  auto it = by_key.find(key);
  if (it == by_key.end()) return std::nullopt;
  const std::uint64_t seq = it->second.front();
  it->second.pop_front();
  if (it->second.empty()) by_key.erase(it);
  auto node = entries.extract(seq);
  by_time.erase({node.mapped().ts, seq});
  return std::move(node.mapped());
}

template <typename T>
void StreamJoiner::Buffer<T>::erase(std::int64_t ts, std::uint64_t seq, const std::string& key) {
  auto it = by_key.find(key);
  if (it != by_key.end()) {
    auto& q = it->second;
    q.erase(std::find(q.begin(), q.end(), seq));
    if (q.empty()) by_key.erase(it);
  }
  by_time.erase({ts, seq});
  entries.erase(seq);
}

StreamJoiner::StreamJoiner(JoinerConfig config) : config_(config) { config_.validate(); }

bool StreamJoiner::full() const { return primaries_.size() + feedback_.size() >= config_.max_buffer; }

namespace {
void check_event(const std::string& key, std::int64_t ts, bool primary) {
  if (key.empty()) throw Error(Errc::kDomain, "join key must be non-empty");
  if (primary && ts < 0) throw Error(Errc::kDomain, "primary timestamp must be >= 0");
}
}  // namespace

OfferResult StreamJoiner::offer_primary(PrimaryEvent e) {
  check_event(e.key, e.ts, true);
  OfferResult out;
  if (auto fb = feedback_.pop_key(e.key)) {
    ++stats_.offered_primary;
    ++stats_.joined;
    out.emitted.push_back({e.key, std::move(e.features), std::move(fb->label), fb->weak, e.ts, fb->ts});
  } else if (full()) {
    ++stats_.backpressured;
    out.status = OfferStatus::kBackpressure;
  } else {
    ++stats_.offered_primary;
    primaries_.push(next_seq_++, std::move(e));
  }
  stats_.buffered_primary = primaries_.size();
  stats_.buffered_feedback = feedback_.size();
  return out;
}

OfferResult StreamJoiner::offer_feedback(FeedbackEvent f) {
  check_event(f.key, f.ts, false);
  OfferResult out;
  if (auto pr = primaries_.pop_key(f.key)) {
    ++stats_.offered_feedback;
    ++stats_.joined;
    out.emitted.push_back({f.key, std::move(pr->features), std::move(f.label), f.weak, pr->ts, f.ts});
  } else if (full()) {
    ++stats_.backpressured;
    out.status = OfferStatus::kBackpressure;
  } else {
    ++stats_.offered_feedback;
    feedback_.push(next_seq_++, std::move(f));
  }
  stats_.buffered_primary = primaries_.size();
  stats_.buffered_feedback = feedback_.size();
  return out;
}

std::vector<Expiration> StreamJoiner::advance_watermark(std::int64_t observed_ts) {
  stats_.watermark = std::max(stats_.watermark, observed_ts - config_.watermark_lag);
  std::vector<Expiration> out;
  if (stats_.watermark == std::numeric_limits<std::int64_t>::min()) return out;
  const std::int64_t cutoff = stats_.watermark - config_.timeout;
  auto sweep = [&](auto& buf, Side side, std::uint64_t& counter) {
    while (!buf.by_time.empty() && buf.by_time.begin()->first < cutoff) {
      const auto [ts, seq] = *buf.by_time.begin();
      const std::string key = buf.entries.at(seq).key;
      out.push_back({key, side, ts, stats_.watermark - ts});
      buf.erase(ts, seq, key);
      ++counter;
    }
  };
  sweep(primaries_, Side::kPrimary, stats_.expired_primary);
  sweep(feedback_, Side::kFeedback, stats_.expired_feedback);
  stats_.buffered_primary = primaries_.size();
  stats_.buffered_feedback = feedback_.size();
  return out;
}

}  // namespace driftline::joiner
