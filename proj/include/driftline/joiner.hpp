#pragma once

#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "driftline/event.hpp"

namespace driftline::joiner {

struct PrimaryEvent {
  std::string key;
  std::int64_t ts = 0;
  Features features;
};

struct FeedbackEvent {
  std::string key;
  std::int64_t ts = 0;
  Label label;
  bool weak = false;
};

struct JoinedExample {
  std::string key;
  Features features;
  Label label;
  bool weak = false;
  std::int64_t primary_ts = 0;
  std::int64_t feedback_ts = 0;

  std::int64_t join_latency() const { return feedback_ts - primary_ts; }
  friend bool operator==(const JoinedExample&, const JoinedExample&) = default;
};

nlohmann::json to_json(const JoinedExample& ex);
JoinedExample joined_from_json(const nlohmann::json& j);

struct JoinerConfig {
  std::int64_t watermark_lag = 0;  // ms
  std::int64_t timeout = 60'000;   // ms
  std::size_t max_buffer = 1'000'000;

  /// Throws kConfiguration when lag < 0 or timeout < lag.
  void validate() const;
};

enum class Side { kPrimary, kFeedback };
const char* side_name(Side s);

struct Expiration {
  std::string key;
  Side side = Side::kPrimary;
  std::int64_t ts = 0;
  std::int64_t age = 0;  // watermark - ts at expiry
};

enum class OfferStatus { kAccepted, kBackpressure };

struct OfferResult {
  OfferStatus status = OfferStatus::kAccepted;
  std::vector<JoinedExample> emitted;
};

struct JoinerStats {
  std::uint64_t offered_primary = 0;
  std::uint64_t offered_feedback = 0;
  std::uint64_t joined = 0;
  std::uint64_t expired_primary = 0;
  std::uint64_t expired_feedback = 0;
  std::uint64_t buffered_primary = 0;
  std::uint64_t buffered_feedback = 0;
  std::uint64_t backpressured = 0;
  std::int64_t watermark = std::numeric_limits<std::int64_t>::min();

  /// joined / offered_primary, 0 when nothing was offered.
  double label_coverage() const;
};

/// Key join of primary events with delayed feedback. Matching is FIFO and 1:1
/// per key in arrival order, symmetric in which side arrives first. Unmatched
/// entries older than watermark - timeout expire and are reported.
class StreamJoiner {
 public:
  explicit StreamJoiner(JoinerConfig config);

  /// A full buffer is reported as kBackpressure and the event is not taken;
  /// an event that matches immediately is always accepted.
  OfferResult offer_primary(PrimaryEvent e);
  OfferResult offer_feedback(FeedbackEvent f);

  /// Raises the watermark to observed_ts - watermark_lag (never lowers it)
  /// and expires entries whose timestamp is below watermark - timeout.
  std::vector<Expiration> advance_watermark(std::int64_t observed_ts);

  const JoinerStats& stats() const { return stats_; }
  std::int64_t watermark() const { return stats_.watermark; }
  const JoinerConfig& config() const { return config_; }

 private:
  template <typename T>
  struct Buffer {
    std::map<std::uint64_t, T> entries;  // seq -> event
    std::unordered_map<std::string, std::deque<std::uint64_t>> by_key;
    std::set<std::pair<std::int64_t, std::uint64_t>> by_time;

    std::size_t size() const { return entries.size(); }
    void push(std::uint64_t seq, T ev);
    std::optional<T> pop_key(const std::string& key);
    void erase(std::int64_t ts, std::uint64_t seq, const std::string& key);
  };

  bool full() const;

  JoinerConfig config_;
  Buffer<PrimaryEvent> primaries_;
  Buffer<FeedbackEvent> feedback_;
  std::uint64_t next_seq_ = 0;
  JoinerStats stats_;
};

}  // namespace driftline::joiner
