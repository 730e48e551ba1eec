#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "driftline/common.hpp"
#include "json.hpp"

namespace driftline::store {

namespace fs = std::filesystem;

/// One replayed record: its sequence number and the raw JSON text as written.
struct Record {
  std::uint64_t seq = 0;
  std::string data;

  nlohmann::json json() const { return nlohmann::json::parse(data); }
  friend bool operator==(const Record&, const Record&) = default;
};

struct SegmentInfo {
  std::uint64_t first_seq = 0;
  std::uint64_t end_seq = 0;  // one past the last record
  std::uint64_t bytes = 0;
  std::uint64_t epoch = 0;  // store-wide seal order, 0 while open
  bool sealed = false;
  fs::path path;
};

struct EvictionReport {
  std::vector<fs::path> removed;
  std::uint64_t bytes_before = 0;
  std::uint64_t bytes_after = 0;
};

std::uint32_t crc32(std::string_view bytes);

/// Append-only JSONL log split into segments named seg-<first_seq>.jsonl.
/// Each line is {"seq":N,"crc":"xxxxxxxx","data":...} and is written with a
/// single write() so an acknowledged record survives a process kill. Sealed
/// segments end with a footer line carrying a checksum over the whole
/// segment. Opening truncates a torn tail of the open segment.
class LogStore {
 public:
  struct Options {
    std::uint64_t segment_bytes = 4u << 20;
    bool fsync = false;  // also flush to the device on every append
    std::function<std::uint64_t()> next_epoch;  // shared seal counter; a local one when empty
    /// Open an existing directory without touching it; writes throw kIo and
    /// a missing directory is kNotFound.
    bool read_only = false;
  };

  LogStore(fs::path dir, Options options);
  explicit LogStore(fs::path dir) : LogStore(std::move(dir), Options{}) {}
  ~LogStore();
  LogStore(const LogStore&) = delete;
  LogStore& operator=(const LogStore&) = delete;

  std::uint64_t append(const nlohmann::json& record);
  std::uint64_t append_raw(std::string_view json_text);

  /// Records with seq in [from, to). Throws kDomain when from > to and
  /// kPartialReplay when part of the range was evicted.
  std::vector<Record> replay(std::uint64_t from, std::uint64_t to) const;
  std::vector<Record> replay_all() const { return replay(first_seq(), next_seq()); }

  std::uint64_t next_seq() const { return next_seq_; }
  std::uint64_t first_seq() const;
  std::uint64_t bytes() const;
  const std::vector<SegmentInfo>& segments() const { return segments_; }
  const fs::path& dir() const { return dir_; }

  /// Seals the open segment (when it has records) and starts a new one.
  void seal();

  /// Marks the segment holding `seq` as pinned.
  void pin(std::uint64_t seq) { pinned_.insert(seq); }
  void unpin(std::uint64_t seq) { pinned_.erase(seq); }
  bool is_pinned(const SegmentInfo& s) const;

  /// Removes one sealed, unpinned segment; used by the cross-store evictor.
  void remove_segment(std::uint64_t first_seq);

  /// Single-store eviction: oldest sealed unpinned segments first until the
  /// store fits `budget`. The open segment always counts as pinned.
  EvictionReport evict(std::uint64_t budget);

 private:
  void open_existing();
  void start_segment(std::uint64_t first_seq);
  void write_index() const;
  void write_all(std::string_view bytes);

  fs::path dir_;
  Options options_;
  std::vector<SegmentInfo> segments_;
  std::set<std::uint64_t> pinned_;
  std::uint64_t next_seq_ = 0;
  std::uint64_t next_epoch_ = 1;
  std::uint32_t open_crc_ = 0;
  int fd_ = -1;
};

/// Versioned model artifacts as files models/model-<version>.dlmd.
class ModelStore {
 public:
  explicit ModelStore(fs::path dir, bool read_only = false);

  /// kConflict when the version exists.
  void put_model(std::uint64_t version, const Bytes& artifact);
  /// kNotFound for unknown or evicted versions.
  Bytes get_model(std::uint64_t version) const;
  bool contains(std::uint64_t version) const;
  std::vector<std::uint64_t> versions() const;
  std::uint64_t bytes() const;

  /// Oldest versions go first; `keep` (active and previous) always stay.
  EvictionReport evict(std::uint64_t budget, const std::set<std::uint64_t>& keep);

 private:
  fs::path path_for(std::uint64_t version) const;
  fs::path dir_;
  std::map<std::uint64_t, std::uint64_t> sizes_;  // version -> bytes
};

enum class StoreKind { kTraining, kState, kHealth, kDiagnostic };
const char* store_kind_name(StoreKind k);

/// The shared-infrastructure layout under one root:
/// models/ training/ state/ health/ diag/.
class Stores {
 public:
  struct Options {
    LogStore::Options log;
    std::uint64_t budget_bytes = 1ull << 30;
  };

  Stores(fs::path root, Options options);
  explicit Stores(fs::path root) : Stores(std::move(root), Options{}) {}

  LogStore& log(StoreKind k);
  const LogStore& log(StoreKind k) const;
  ModelStore& models() { return models_; }
  const ModelStore& models() const { return models_; }
  const fs::path& root() const { return root_; }

  /// Appends, then evicts if the total exceeds the budget. When eviction
  /// cannot make room, the record is kept and kConfiguration is thrown.
  std::uint64_t append(StoreKind k, const nlohmann::json& record);

  /// Seals every open segment that has records.
  void seal_all();

  std::uint64_t bytes() const;

  /// Removes the oldest sealed unpinned segments across all logs, then
  /// models outside `keep_models`, until the total fits. kConfiguration when
  /// the pinned set alone exceeds the budget (nothing is removed then).
  EvictionReport evict(std::uint64_t budget, const std::set<std::uint64_t>& keep_models = {});

  void keep_models(std::set<std::uint64_t> versions) { keep_models_ = std::move(versions); }

 private:
  fs::path root_;
  Options options_;
  std::map<StoreKind, std::unique_ptr<LogStore>> logs_;
  ModelStore models_;
  std::set<std::uint64_t> keep_models_;
  std::shared_ptr<std::uint64_t> epoch_ = std::make_shared<std::uint64_t>(0);
};

/// Writes `bytes` to `path` via a temporary file and rename.
void write_atomic(const fs::path& path, std::string_view bytes);
std::string read_file(const fs::path& path);

}  // namespace driftline::store
