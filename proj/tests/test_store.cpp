#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <fstream>

#include "doctest.h"
#include "driftline/store.hpp"
#include "test_util.hpp"

using namespace driftline;
using namespace driftline::store;
using nlohmann::json;

TEST_CASE("appends get consecutive sequence numbers and replay in order") {
  const auto dir = testutil::scratch_dir("store-seq");
  LogStore log(dir);
  CHECK(log.append({{"a", 1}}) == 0);
  CHECK(log.append({{"a", 2}}) == 1);
  CHECK(log.replay(1, 1).empty());
  const auto all = log.replay(0, 2);
  REQUIRE(all.size() == 2);
  CHECK(all[1].json()["a"] == 2);
  CHECK(log.replay(0, 2) == all);
  CHECK_THROWS_AS(log.replay(2, 1), Error);
  CHECK_THROWS_AS(log.replay(0, 5), Error);
  CHECK_THROWS_AS(log.append_raw("{\n}"), Error);
}

TEST_CASE("segments roll over, seal with footers and survive reopen") {
  const auto dir = testutil::scratch_dir("store-roll");
  {
    LogStore log(dir, {256, false, {}});
    for (int i = 0; i < 40; ++i) log.append({{"i", i}, {"pad", std::string(20, 'x')}});
    CHECK(log.segments().size() > 3);
    for (std::size_t s = 0; s + 1 < log.segments().size(); ++s) CHECK(log.segments()[s].sealed);
  }
  CHECK(fs::exists(dir / "index.json"));
  LogStore again(dir, {256, false, {}});
  CHECK(again.next_seq() == 40);
  const auto recs = again.replay_all();
  REQUIRE(recs.size() == 40);
  for (int i = 0; i < 40; ++i) {
    CHECK(recs[i].seq == static_cast<std::uint64_t>(i));
    CHECK(recs[i].json()["i"] == i);
  }
  CHECK(again.append({{"i", 40}}) == 40);
}

TEST_CASE("corrupted sealed segment is rejected on open") {
  const auto dir = testutil::scratch_dir("store-corrupt");
  fs::path first;
  {
    LogStore log(dir, {128, false, {}});
    for (int i = 0; i < 10; ++i) log.append({{"i", i}, {"pad", std::string(30, 'y')}});
    first = log.segments().front().path;
  }
  auto content = read_file(first);
  const auto at = content.find("yyy");
  content[at] = 'z';
  std::ofstream(first, std::ios::binary | std::ios::trunc) << content;
  CHECK_THROWS_AS(LogStore(dir, {128, false, {}}), Error);
}

TEST_CASE("torn tail record is discarded on open") {
  const auto dir = testutil::scratch_dir("store-torn");
  fs::path open_seg;
  {
    LogStore log(dir);
    log.append({{"ok", 1}});
    log.append({{"ok", 2}});
    open_seg = log.segments().back().path;
  }
  {
    std::ofstream out(open_seg, std::ios::binary | std::ios::app);
    out << R"({"seq":2,"crc":"00000000","data":{"half")";
  }
  LogStore log(dir);
  CHECK(log.next_seq() == 2);
  CHECK(log.replay_all().size() == 2);
  CHECK(log.append({{"ok", 3}}) == 2);
  // A complete line with a bad checksum is also a torn record.
  {
    std::ofstream out(open_seg, std::ios::binary | std::ios::app);
    out << R"({"seq":3,"crc":"deadbeef","data":{"x":1}})" << "\n";
  }
  LogStore again(dir);
  CHECK(again.next_seq() == 3);
}

TEST_CASE("kill-and-reopen: every acknowledged record survives") {
  const auto dir = testutil::scratch_dir("store-kill");
  int fds[2];
  REQUIRE(::pipe(fds) == 0);
  const pid_t pid = ::fork();
  REQUIRE(pid >= 0);
  if (pid == 0) {
    ::close(fds[0]);
    LogStore log(dir, {1024, false, {}});
    for (std::uint64_t i = 0;; ++i) {
      const auto seq = log.append({{"i", i}, {"pad", std::string(i % 50, 'p')}});
      if (::write(fds[1], &seq, sizeof seq) != sizeof seq) ::_exit(1);
    }
  }
  ::close(fds[1]);
  std::uint64_t acked = 0, seq = 0;
  std::uint64_t got = 0;
  while (got < 3000 && ::read(fds[0], &seq, sizeof seq) == sizeof seq) {
    acked = seq;
    ++got;
  }
  ::kill(pid, SIGKILL);
  ::waitpid(pid, nullptr, 0);
  // Drain acknowledgements written before the kill.
  while (::read(fds[0], &seq, sizeof seq) == sizeof seq) acked = seq;
  ::close(fds[0]);

  LogStore log(dir, {1024, false, {}});
  CHECK(log.next_seq() >= acked + 1);
  const auto recs = log.replay(0, acked + 1);
  REQUIRE(recs.size() == acked + 1);
  for (std::uint64_t i = 0; i <= acked; ++i) CHECK(recs[i].json()["i"] == i);
}

TEST_CASE("eviction removes oldest unpinned segments first") {
  const auto dir = testutil::scratch_dir("store-evict");
  LogStore log(dir, {200, false, {}});
  for (int i = 0; i < 30; ++i) log.append({{"i", i}, {"pad", std::string(40, 'e')}});
  const auto before = log.bytes();
  auto noop = log.evict(before + 10);
  CHECK(noop.removed.empty());

  const auto segs = log.segments();
  REQUIRE(segs.size() >= 4);
  log.pin(segs[0].first_seq);  // the oldest one is pinned
  auto rep = log.evict(before - 1);
  REQUIRE(rep.removed.size() == 1);
  CHECK(rep.removed[0] == segs[1].path);
  CHECK(rep.bytes_after <= before - 1);
  CHECK(fs::exists(segs[0].path));
  CHECK(log.replay(segs[0].first_seq, segs[0].end_seq).size() == segs[0].end_seq - segs[0].first_seq);
  try {
    log.replay(segs[1].first_seq, segs[1].end_seq);
    FAIL("expected partial replay");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::kPartialReplay);
  }
  CHECK_THROWS_AS(log.evict(10), Error);  // smaller than pinned + open
  // Pinned segment survives an aggressive eviction.
  log.evict(segs[0].bytes + log.segments().back().bytes);
  CHECK(fs::exists(segs[0].path));
}

TEST_CASE("replay before the earliest retained record names it") {
  const auto dir = testutil::scratch_dir("store-partial");
  LogStore log(dir, {150, false, {}});
  for (int i = 0; i < 20; ++i) log.append({{"i", i}, {"pad", std::string(40, 'q')}});
  log.evict(log.segments().back().bytes + log.segments()[log.segments().size() - 2].bytes);
  const auto first = log.first_seq();
  CHECK(first > 0);
  try {
    log.replay(0, first + 1);
    FAIL("expected partial replay");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::kPartialReplay);
    CHECK(std::string(e.what()).find(std::to_string(first)) != std::string::npos);
  }
}

TEST_CASE("model store round trip, conflicts and retention") {
  const auto dir = testutil::scratch_dir("store-models");
  ModelStore ms(dir);
  Bytes a{1, 2, 3, 0, 255};
  ms.put_model(1, a);
  CHECK(ms.get_model(1) == a);
  CHECK_THROWS_AS(ms.put_model(1, a), Error);
  try {
    ms.get_model(9);
    FAIL("expected not found");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::kNotFound);
  }
  for (std::uint64_t v = 2; v <= 8; ++v) ms.put_model(v, Bytes(100, static_cast<std::uint8_t>(v)));
  // Simulated space pressure with various active versions: the active and
  // previous versions are always retained.
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const auto vs = ms.versions();
    if (vs.size() < 3) break;
    const auto active = vs[1 + rng.below(vs.size() - 1)];
    const auto previous = *std::prev(std::find(vs.begin(), vs.end(), active));
    ms.evict(ms.bytes() - 1, {active, previous});
    CHECK(ms.contains(active));
    CHECK(ms.contains(previous));
  }
  ModelStore reopened(dir);
  CHECK(reopened.versions() == ms.versions());
}

TEST_CASE("stores layout and cross-store eviction") {
  const auto root = testutil::scratch_dir("stores");
  Stores::Options opt;
  opt.log.segment_bytes = 300;
  Stores st(root, opt);
  for (const char* d : {"models", "training", "state", "health", "diag"}) CHECK(fs::is_directory(root / d));
  for (int i = 0; i < 20; ++i) {
    st.append(StoreKind::kHealth, {{"h", i}, {"pad", std::string(50, 'h')}});
    st.append(StoreKind::kDiagnostic, {{"d", i}, {"pad", std::string(50, 'd')}});
  }
  st.models().put_model(1, Bytes(500, 1));
  st.models().put_model(2, Bytes(500, 2));
  const auto total = st.bytes();
  auto rep = st.evict(total - 400, {1, 2});
  CHECK(rep.bytes_after <= total - 400);
  CHECK(st.models().contains(1));
  // Oldest seal epoch goes first: the first health segment was sealed before
  // the first diag segment.
  REQUIRE_FALSE(rep.removed.empty());
  CHECK(rep.removed.front().parent_path().filename() == "health");
  CHECK_THROWS_AS(st.evict(100, {1, 2}), Error);
}

TEST_CASE("read-only stores leave the directory untouched") {
  const auto root = testutil::scratch_dir("store-ro");
  {
    store::Stores s(root);
    s.append(store::StoreKind::kDiagnostic, {{"a", 1}});
    s.append(store::StoreKind::kHealth, {{"b", 2}});
    s.seal_all();
  }
  auto listing = [&] {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& e : std::filesystem::recursive_directory_iterator(root))
      if (e.is_regular_file()) out.emplace_back(e.path().string(), store::read_file(e.path()));
    std::sort(out.begin(), out.end());
    return out;
  };
  const auto before = listing();
  store::Stores::Options opt;
  opt.log.read_only = true;
  {
    store::Stores ro(root, opt);
    CHECK(ro.log(store::StoreKind::kDiagnostic).replay_all().size() == 1);
    CHECK(ro.log(store::StoreKind::kState).replay_all().empty());
    CHECK_THROWS_AS(ro.append(store::StoreKind::kState, {{"x", 1}}), Error);
  }
  CHECK(listing() == before);
  try {
    store::Stores missing(root / "nope", opt);
    FAIL("expected not found");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::kNotFound);
    CHECK(std::string(e.what()).find("nope") != std::string::npos);
  }
}
