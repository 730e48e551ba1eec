#include "driftline/store.hpp"

#include <fcntl.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace driftline::store {

using nlohmann::json;

std::uint32_t crc32(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

namespace {

std::uint32_t crc_extend(std::uint32_t crc, std::string_view bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

std::string hex8(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

std::string segment_name(std::uint64_t first_seq) { return "seg-" + std::to_string(first_seq) + ".jsonl"; }

std::string record_line(std::uint64_t seq, std::string_view data) {
  std::string line = "{\"seq\":" + std::to_string(seq) + ",\"crc\":\"" + hex8(crc32(data)) + "\",\"data\":";
  line.append(data);
  line += "}\n";
  return line;
}

/// Parses one record line (without the newline). nullopt when malformed or
/// the checksum does not match.
std::optional<Record> parse_record(std::string_view line) {
  constexpr std::string_view head = "{\"seq\":";
  if (line.substr(0, head.size()) != head) return std::nullopt;
  std::size_t pos = head.size();
  std::uint64_t seq = 0;
  auto [ptr, ec] = std::from_chars(line.data() + pos, line.data() + line.size(), seq);
  if (ec != std::errc{}) return std::nullopt;
  pos = static_cast<std::size_t>(ptr - line.data());
  constexpr std::string_view mid = ",\"crc\":\"";
  if (line.substr(pos, mid.size()) != mid) return std::nullopt;
  pos += mid.size();
  if (line.size() < pos + 8) return std::nullopt;
  const std::string_view crc_hex = line.substr(pos, 8);
  pos += 8;
  constexpr std::string_view tail = "\",\"data\":";
  if (line.substr(pos, tail.size()) != tail) return std::nullopt;
  pos += tail.size();
  if (line.size() < pos + 1 || line.back() != '}') return std::nullopt;
  std::string_view data = line.substr(pos, line.size() - pos - 1);
  if (hex8(crc32(data)) != crc_hex) return std::nullopt;
  return Record{seq, std::string(data)};
}

bool is_footer(std::string_view line) { return line.starts_with("{\"footer\":"); }

}  // namespace

void write_atomic(const fs::path& path, std::string_view bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::kIo, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(Errc::kIo, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kNotFound, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// LogStore

LogStore::LogStore(fs::path dir, Options options) : dir_(std::move(dir)), options_(std::move(options)) {
  if (options_.segment_bytes < 64) throw Error(Errc::kConfiguration, "store.segment_bytes: must be >= 64");
  if (!options_.next_epoch) {
    auto counter = std::make_shared<std::uint64_t>(0);
    options_.next_epoch = [counter] { return ++*counter; };
  }
  if (options_.read_only) {
    if (!fs::is_directory(dir_))
      throw Error(Errc::kNotFound, "store directory " + dir_.string() + " is missing; point at a run directory");
  } else {
    fs::create_directories(dir_);
  }
  open_existing();
}

LogStore::~LogStore() {
  if (fd_ >= 0) ::close(fd_);
}

void LogStore::open_existing() {
  std::vector<std::pair<std::uint64_t, fs::path>> files;
  for (const auto& entry : fs::directory_iterator(dir_)) {
    const auto name = entry.path().filename().string();
    if (!name.starts_with("seg-") || !name.ends_with(".jsonl")) continue;
    files.emplace_back(std::stoull(name.substr(4, name.size() - 10)), entry.path());
  }
  std::sort(files.begin(), files.end());
  for (std::size_t f = 0; f < files.size(); ++f) {
    const auto& [first, path] = files[f];
    const std::string content = read_file(path);
    SegmentInfo seg;
    seg.first_seq = first;
    seg.path = path;
    std::size_t pos = 0, valid = 0;
    std::uint64_t expect = first;
    std::uint32_t crc = 0;
    bool sealed = false;
    while (pos < content.size()) {
      const auto nl = content.find('\n', pos);
      if (nl == std::string::npos) break;  // torn tail
      const std::string_view line(content.data() + pos, nl - pos);
      if (is_footer(line)) {
        const auto footer = json::parse(line).at("footer");
        if (footer.at("crc").get<std::string>() != hex8(crc) || footer.at("end_seq").get<std::uint64_t>() != expect) {
          throw Error(Errc::kData, "checksum mismatch in sealed segment " + path.string());
        }
        seg.epoch = footer.at("epoch").get<std::uint64_t>();
        sealed = true;
        valid = nl + 1;
        break;
      }
      auto rec = parse_record(line);
      if (!rec || rec->seq != expect) break;
      crc = crc_extend(crc, content.substr(pos, nl + 1 - pos));
      ++expect;
      pos = nl + 1;
      valid = pos;
    }
    if (sealed && valid != content.size()) throw Error(Errc::kData, "trailing bytes after footer in " + path.string());
    if (!sealed) {
      if (f + 1 != files.size()) throw Error(Errc::kData, "unsealed segment before the tail: " + path.string());
      if (valid != content.size() && !options_.read_only) fs::resize_file(path, valid);  // drop the unacknowledged tail
      open_crc_ = crc;
    }
    seg.sealed = sealed;
    seg.end_seq = expect;
    seg.bytes = valid;
    segments_.push_back(seg);
    next_seq_ = expect;
  }
  if (options_.read_only) return;
  if (segments_.empty() || segments_.back().sealed) {
    start_segment(next_seq_);
  } else {
    fd_ = ::open(segments_.back().path.c_str(), O_WRONLY | O_APPEND | O_CLOEXEC);
    if (fd_ < 0) throw Error(Errc::kIo, "cannot open " + segments_.back().path.string());
  }
  write_index();
}

void LogStore::start_segment(std::uint64_t first_seq) {
  if (fd_ >= 0) ::close(fd_);
  SegmentInfo seg;
  seg.first_seq = first_seq;
  seg.end_seq = first_seq;
  seg.path = dir_ / segment_name(first_seq);
  fd_ = ::open(seg.path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_TRUNC | O_CLOEXEC, 0644);
  if (fd_ < 0) throw Error(Errc::kIo, "cannot create " + seg.path.string());
  segments_.push_back(seg);
  open_crc_ = 0;
}

void LogStore::write_all(std::string_view bytes) {
  // One write() per record: a killed process leaves either the whole line
  // in the page cache or a detectable torn tail.
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto n = ::write(fd_, bytes.data() + done, bytes.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(Errc::kIo, std::string("append failed: ") + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
  if (options_.fsync && ::fdatasync(fd_) != 0) throw Error(Errc::kIo, "fdatasync failed");
}

std::uint64_t LogStore::append(const json& record) { return append_raw(record.dump()); }

std::uint64_t LogStore::append_raw(std::string_view json_text) {
  if (options_.read_only) throw Error(Errc::kIo, "store " + dir_.string() + " is open read-only");
  if (json_text.find('\n') != std::string_view::npos) throw Error(Errc::kDomain, "record must be a single line");
  auto& open = segments_.back();
  if (open.bytes > 0 && open.bytes + json_text.size() > options_.segment_bytes) {
    seal();
  }
  const std::uint64_t seq = next_seq_;
  const std::string line = record_line(seq, json_text);
  write_all(line);
  auto& seg = segments_.back();
  seg.bytes += line.size();
  seg.end_seq = seq + 1;
  open_crc_ = crc_extend(open_crc_, line);
  ++next_seq_;
  return seq;
}

void LogStore::seal() {
  if (options_.read_only || segments_.empty()) return;
  auto& seg = segments_.back();
  if (seg.end_seq == seg.first_seq) return;
  seg.epoch = options_.next_epoch();
  json footer = {{"footer", {{"count", seg.end_seq - seg.first_seq},
                             {"crc", hex8(open_crc_)},
                             {"end_seq", seg.end_seq},
                             {"epoch", seg.epoch}}}};
  const std::string line = footer.dump() + "\n";
  write_all(line);
  seg.bytes += line.size();
  seg.sealed = true;
  start_segment(next_seq_);
  write_index();
}

std::uint64_t LogStore::first_seq() const { return segments_.empty() ? next_seq_ : segments_.front().first_seq; }

std::uint64_t LogStore::bytes() const {
  std::uint64_t total = 0;
  for (const auto& s : segments_) total += s.bytes;
  return total;
}

bool LogStore::is_pinned(const SegmentInfo& s) const {
  if (!s.sealed) return true;
  auto it = pinned_.lower_bound(s.first_seq);
  return it != pinned_.end() && *it < s.end_seq;
}

std::vector<Record> LogStore::replay(std::uint64_t from, std::uint64_t to) const {
  if (from > to) throw Error(Errc::kDomain, "replay: from > to");
  if (to > next_seq_) throw Error(Errc::kDomain, "replay: range extends past the last record");
  std::vector<Record> out;
  if (from == to) return out;
  if (from < first_seq()) {
    throw Error(Errc::kPartialReplay, "replay: records before " + std::to_string(first_seq()) +
                                          " were evicted; earliest available sequence is " +
                                          std::to_string(first_seq()));
  }
  // A pinned older segment can survive while a later one is evicted, so the
  // range may have a hole in the middle.
  std::uint64_t covered = from;
  for (const auto& seg : segments_) {
    if (seg.end_seq <= covered || seg.first_seq >= to) continue;
    if (seg.first_seq > covered) {
      throw Error(Errc::kPartialReplay, "replay: records " + std::to_string(covered) + ".." +
                                            std::to_string(seg.first_seq - 1) +
                                            " were evicted; earliest available sequence after the gap is " +
                                            std::to_string(seg.first_seq));
    }
    covered = seg.end_seq;
  }
  if (covered < to) {
    std::uint64_t next = next_seq_;
    for (const auto& seg : segments_) {
      if (seg.first_seq >= covered) {
        next = seg.first_seq;
        break;
      }
    }
    throw Error(Errc::kPartialReplay, "replay: records from " + std::to_string(covered) +
                                          " were evicted; earliest available sequence after the gap is " +
                                          std::to_string(next));
  }
  for (const auto& seg : segments_) {
    if (seg.end_seq <= from || seg.first_seq >= to) continue;
    const std::string content = read_file(seg.path);
    std::size_t pos = 0;
    while (pos < content.size()) {
      const auto nl = content.find('\n', pos);
      if (nl == std::string::npos) break;
      const std::string_view line(content.data() + pos, nl - pos);
      pos = nl + 1;
      if (is_footer(line)) break;
      auto rec = parse_record(line);
      if (!rec) throw Error(Errc::kData, "corrupt record in " + seg.path.string());
      if (rec->seq >= from && rec->seq < to) out.push_back(std::move(*rec));
    }
  }
  return out;
}

void LogStore::remove_segment(std::uint64_t first_seq) {
  if (options_.read_only) throw Error(Errc::kIo, "store " + dir_.string() + " is open read-only");
  auto it = std::find_if(segments_.begin(), segments_.end(), [&](const auto& s) { return s.first_seq == first_seq; });
  if (it == segments_.end()) throw Error(Errc::kNotFound, "no segment starting at " + std::to_string(first_seq));
  if (is_pinned(*it)) throw Error(Errc::kConflict, "segment is pinned or open");
  fs::remove(it->path);
  segments_.erase(it);
  write_index();
}

EvictionReport LogStore::evict(std::uint64_t budget) {
  EvictionReport rep;
  rep.bytes_before = bytes();
  std::uint64_t pinned = 0;
  for (const auto& s : segments_) pinned += is_pinned(s) ? s.bytes : 0;
  if (pinned > budget) throw Error(Errc::kConfiguration, "eviction budget is smaller than the pinned segments");
  std::uint64_t total = rep.bytes_before;
  while (total > budget) {
    auto it = std::find_if(segments_.begin(), segments_.end(), [&](const auto& s) { return !is_pinned(s); });
    if (it == segments_.end()) break;
    total -= it->bytes;
    rep.removed.push_back(it->path);
    remove_segment(it->first_seq);
  }
  rep.bytes_after = bytes();
  return rep;
}

void LogStore::write_index() const {
  json idx;
  idx["next_seq"] = next_seq_;
  idx["segments"] = json::array();
  for (const auto& s : segments_) {
    idx["segments"].push_back({{"file", s.path.filename().string()},
                               {"first_seq", s.first_seq},
                               {"end_seq", s.end_seq},
                               {"bytes", s.bytes},
                               {"sealed", s.sealed},
                               {"epoch", s.epoch}});
  }
  write_atomic(dir_ / "index.json", idx.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// ModelStore

ModelStore::ModelStore(fs::path dir, bool read_only) : dir_(std::move(dir)) {
  if (read_only) {
    if (!fs::is_directory(dir_))
      throw Error(Errc::kNotFound, "model store " + dir_.string() + " is missing; point at a run directory");
  } else {
    fs::create_directories(dir_);
  }
  for (const auto& entry : fs::directory_iterator(dir_)) {
    const auto name = entry.path().filename().string();
    if (!name.starts_with("model-") || !name.ends_with(".dlmd")) continue;
    sizes_[std::stoull(name.substr(6, name.size() - 11))] = entry.file_size();
  }
}

fs::path ModelStore::path_for(std::uint64_t version) const {
  return dir_ / ("model-" + std::to_string(version) + ".dlmd");
}

void ModelStore::put_model(std::uint64_t version, const Bytes& artifact) {
  if (sizes_.count(version)) throw Error(Errc::kConflict, "model version " + std::to_string(version) + " exists");
  write_atomic(path_for(version), {reinterpret_cast<const char*>(artifact.data()), artifact.size()});
  sizes_[version] = artifact.size();
}

Bytes ModelStore::get_model(std::uint64_t version) const {
  if (!sizes_.count(version)) throw Error(Errc::kNotFound, "model version " + std::to_string(version));
  const auto s = read_file(path_for(version));
  return Bytes(s.begin(), s.end());
}

bool ModelStore::contains(std::uint64_t version) const { return sizes_.count(version) > 0; }

std::vector<std::uint64_t> ModelStore::versions() const {
  std::vector<std::uint64_t> v;
  for (const auto& [k, _] : sizes_) v.push_back(k);
  return v;
}

std::uint64_t ModelStore::bytes() const {
  std::uint64_t total = 0;
  for (const auto& [_, b] : sizes_) total += b;
  return total;
}

EvictionReport ModelStore::evict(std::uint64_t budget, const std::set<std::uint64_t>& keep) {
  EvictionReport rep;
  rep.bytes_before = bytes();
  std::uint64_t kept = 0;
  for (auto v : keep) kept += sizes_.count(v) ? sizes_[v] : 0;
  if (kept > budget) throw Error(Errc::kConfiguration, "eviction budget is smaller than the retained models");
  std::uint64_t total = rep.bytes_before;
  for (auto it = sizes_.begin(); it != sizes_.end() && total > budget;) {
    if (keep.count(it->first)) {
      ++it;
      continue;
    }
    rep.removed.push_back(path_for(it->first));
    fs::remove(path_for(it->first));
    total -= it->second;
    it = sizes_.erase(it);
  }
  rep.bytes_after = bytes();
  return rep;
}

// ---------------------------------------------------------------------------
// Stores

const char* store_kind_name(StoreKind k) {
  switch (k) {
    case StoreKind::kTraining: return "training";
    case StoreKind::kState: return "state";
    case StoreKind::kHealth: return "health";
    case StoreKind::kDiagnostic: return "diag";
  }
  return "?";
}

Stores::Stores(fs::path root, Options options)
    : root_(std::move(root)), options_(std::move(options)), models_(root_ / "models", options_.log.read_only) {
  auto epoch = epoch_;
  options_.log.next_epoch = [epoch] { return ++*epoch; };
  for (auto k : {StoreKind::kTraining, StoreKind::kState, StoreKind::kHealth, StoreKind::kDiagnostic}) {
    logs_[k] = std::make_unique<LogStore>(root_ / store_kind_name(k), options_.log);
    for (const auto& s : logs_[k]->segments()) *epoch_ = std::max(*epoch_, s.epoch);
  }
}

LogStore& Stores::log(StoreKind k) { return *logs_.at(k); }
const LogStore& Stores::log(StoreKind k) const { return *logs_.at(k); }

std::uint64_t Stores::bytes() const {
  std::uint64_t total = models_.bytes();
  for (const auto& [_, l] : logs_) total += l->bytes();
  return total;
}

std::uint64_t Stores::append(StoreKind k, const json& record) {
  const auto seq = log(k).append(record);
  if (bytes() > options_.budget_bytes) evict(options_.budget_bytes, keep_models_);
  return seq;
}

void Stores::seal_all() {
  for (auto& [_, l] : logs_) l->seal();
}

EvictionReport Stores::evict(std::uint64_t budget, const std::set<std::uint64_t>& keep_models) {
  EvictionReport rep;
  rep.bytes_before = bytes();
  if (rep.bytes_before <= budget) {
    rep.bytes_after = rep.bytes_before;
    return rep;
  }
  struct Candidate {
    std::uint64_t epoch;
    StoreKind kind;
    std::uint64_t first_seq;
    std::uint64_t bytes;
  };
  std::vector<Candidate> cands;
  std::uint64_t removable = 0;
  for (const auto& [k, l] : logs_) {
    for (const auto& s : l->segments()) {
      if (l->is_pinned(s)) continue;
      cands.push_back({s.epoch, k, s.first_seq, s.bytes});
      removable += s.bytes;
    }
  }
  for (auto v : models_.versions()) {
    if (!keep_models.count(v)) removable += models_.get_model(v).size();
  }
  if (rep.bytes_before - removable > budget) {
    throw Error(Errc::kConfiguration, "store budget " + std::to_string(budget) + " is smaller than the pinned set (" +
                                         std::to_string(rep.bytes_before - removable) + " bytes)");
  }
  std::sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
    return std::tie(a.epoch, a.kind, a.first_seq) < std::tie(b.epoch, b.kind, b.first_seq);
  });
  std::uint64_t total = rep.bytes_before;
  for (const auto& c : cands) {
    if (total <= budget) break;
    auto& l = log(c.kind);
    rep.removed.push_back(l.dir() / segment_name(c.first_seq));
    l.remove_segment(c.first_seq);
    total -= c.bytes;
  }
  if (total > budget) {
    const auto models_budget = models_.bytes() - (total - budget);
    auto r = models_.evict(models_budget, keep_models);
    rep.removed.insert(rep.removed.end(), r.removed.begin(), r.removed.end());
  }
  rep.bytes_after = bytes();
  return rep;
}

}  // namespace driftline::store
