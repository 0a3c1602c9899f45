#include <benchmark/benchmark.h>

#include <string>

#include "posmed/metrics.hpp"
#include "posmed/qa_templater.hpp"

using namespace posmed;

namespace {

std::string sentence(int words, int offset) {
  static const char* vocab[] = {"the", "polyp", "is", "located", "in", "top", "left", "region", "of", "image"};
  std::string s;
  for (int i = 0; i < words; ++i) s += std::string(vocab[(i * 7 + offset) % 10]) + " ";
  return s;
}

void BM_RougeL(benchmark::State& state) {
  const int words = static_cast<int>(state.range(0));
  const std::string a = sentence(words, 0), b = sentence(words, 3);
  for (auto _ : state) benchmark::DoNotOptimize(rouge_l(a, b));
}
BENCHMARK(BM_RougeL)->Arg(8)->Arg(32)->Arg(128);

void BM_ExtractZone(benchmark::State& state) {
  const std::string answer = "The brain tumor appears in the lower right part of the scan.";
  for (auto _ : state) benchmark::DoNotOptimize(extract_zone(answer));
}
BENCHMARK(BM_ExtractZone);

void BM_Instantiate(benchmark::State& state) {
  const QaTemplate t{"t01", "Where is the <name>?", "The <name> is in the <position>.", "plain"};
  for (auto _ : state) benchmark::DoNotOptimize(instantiate(t, "polyp", Zone::BR));
}
BENCHMARK(BM_Instantiate);

}  // namespace
