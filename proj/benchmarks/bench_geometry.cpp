#include <benchmark/benchmark.h>

#include <random>

#include "posmed/mask_geometry.hpp"
#include "posmed/metrics.hpp"

using namespace posmed;

namespace {

BinaryMask blob_mask(int side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution fg(0.3);
  BinaryMask m(side, side);
  for (int r = side / 8; r < side / 2; ++r)
    for (int c = side / 4; c < 3 * side / 4; ++c) m.set(r, c, fg(rng));
  return m;
}

void BM_ClassifyZone(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const BinaryMask m = blob_mask(side, 1);
  const ZoneConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(locate_zone(m, cfg));
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_ClassifyZone)->RangeMultiplier(4)->Range(64, 1024);

void BM_DiceIou(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const BinaryMask p = blob_mask(side, 2), g = blob_mask(side, 3);
  for (auto _ : state) benchmark::DoNotOptimize(dice_iou(p, g));
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_DiceIou)->RangeMultiplier(4)->Range(64, 1024);

}  // namespace
