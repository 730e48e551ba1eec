// Serial reference vs OpenMP kernels. Each pair runs the same input.
#include <benchmark/benchmark.h>

#include <vector>

#include "driftline/shift/detector.hpp"
#include "driftline/shift/kliep.hpp"
#include "driftline/sketch/combined.hpp"
#include "driftline/sketch/projection.hpp"

using namespace driftline;

namespace {

ExecPolicy policy_of(const benchmark::State& s) { return s.range(0) ? ExecPolicy::kParallel : ExecPolicy::kSerial; }

shift::WindowPair gaussian_pair(std::size_t ref, std::size_t test, std::size_t dims, double shift) {
  Rng rng(42);
  shift::WindowPair p;
  std::vector<double> row(dims);
  for (std::size_t i = 0; i < ref; ++i) {
    for (auto& x : row) x = rng.normal();
    p.reference.push_row(row);
    p.reference_labels.push_back(static_cast<int>(rng.below(2)));
  }
  for (std::size_t i = 0; i < test; ++i) {
    for (auto& x : row) x = rng.normal();
    row[0] += shift;
    p.test.push_row(row);
    p.test_labels.push_back(static_cast<int>(rng.below(2)));
  }
  return p;
}

void BM_Projection(benchmark::State& state) {
  sketch::RandomProjection proj(100'000, 256, 7);
  Rng rng(1);
  std::vector<double> x(100'000);
  for (auto& v : x) v = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(proj.project(x, policy_of(state)));
}
BENCHMARK(BM_Projection)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_CombinedIngest(benchmark::State& state) {
  Rng rng(2);
  std::vector<std::uint32_t> items(1'000'000);
  for (auto& v : items) v = static_cast<std::uint32_t>(rng.below(100'000));
  const auto preset = sketch::SketchPreset::four_percent(100'000);
  for (auto _ : state) benchmark::DoNotOptimize(sketch::ingest_partitioned(items, preset, 8, policy_of(state)));
}
BENCHMARK(BM_CombinedIngest)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_DetectShift(benchmark::State& state) {
  const auto pair = gaussian_pair(1000, 500, 32, 0.3);
  shift::DetectorConfig cfg;
  cfg.policy = policy_of(state);
  for (auto _ : state) benchmark::DoNotOptimize(shift::detect_shift(pair, cfg));
}
BENCHMARK(BM_DetectShift)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_KliepFit(benchmark::State& state) {
  const auto pair = gaussian_pair(300, 300, 2, 2.0);
  shift::KliepOptions opt;
  opt.policy = policy_of(state);
  const auto grid = shift::default_sigma_grid(pair);
  for (auto _ : state) benchmark::DoNotOptimize(shift::kliep_fit(pair, 100, grid, opt));
}
BENCHMARK(BM_KliepFit)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
