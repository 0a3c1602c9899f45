#include <benchmark/benchmark.h>

#include "posmed/nn/fusion.hpp"
#include "posmed/nn/grad_check.hpp"
#include "posmed/nn/mask_head.hpp"

using namespace posmed::nn;

namespace {

// range(0): channels, range(1): grid side. Embedding 4096 wide, 8 tokens.
void BM_Fuse(benchmark::State& state) {
  FusionConfig fc;
  fc.image_channels = fc.shared_dim = static_cast<std::size_t>(state.range(0));
  const std::size_t grid = static_cast<std::size_t>(state.range(1));
  UniformSource rng(1);
  const FusionParams p = FusionParams::uniform(fc, rng);
  const Tensor z_image = uniform_tensor({1, fc.image_channels, grid, grid}, rng, -1, 1);
  const Tensor z_emb = uniform_tensor({1, 8, fc.embed_dim}, rng, -1, 1);
  for (auto _ : state) benchmark::DoNotOptimize(fuse(z_image, z_emb, p));
}
BENCHMARK(BM_Fuse)->Args({64, 16})->Args({256, 16})->Unit(benchmark::kMillisecond);

void BM_MaskHead(benchmark::State& state) {
  MaskHeadConfig hc;
  hc.in_channels = 64;
  hc.stages = static_cast<std::size_t>(state.range(0));
  UniformSource rng(2);
  const MaskHeadParams p = MaskHeadParams::uniform(hc, rng);
  const Tensor z = uniform_tensor({1, hc.in_channels, 16, 16}, rng, -1, 1);
  for (auto _ : state) benchmark::DoNotOptimize(mask_head(z, p));
}
BENCHMARK(BM_MaskHead)->DenseRange(2, 4)->Unit(benchmark::kMillisecond);

void BM_GradCheckComposite(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(grad_check(GradComponent::Composite, seed++));
}
BENCHMARK(BM_GradCheckComposite)->Unit(benchmark::kMillisecond);

}  // namespace
