#include <benchmark/benchmark.h>

#include <vector>

#include "saddlekv/policy.hpp"
#include "saddlekv/rng.hpp"

using namespace saddlekv;

namespace {

// l rows of length n, each a random distribution.
std::vector<ProbRow> make_window(std::size_t l, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ProbRow> rows(l, ProbRow(n));
  for (auto& row : rows) {
    float sum = 0.0F;
    for (float& x : row) sum += (x = static_cast<float>(uniform01(rng)) + 1e-3F);
    for (float& x : row) x /= sum;
  }
  return rows;
}

void BM_WindowMeanScores(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto rows = make_window(32, n, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(window_mean_scores(rows, n, 32));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(32 * n));
}
BENCHMARK(BM_WindowMeanScores)->RangeMultiplier(4)->Range(256, 16384);

void BM_TopK(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  std::vector<float> scores(n);
  for (float& x : scores) x = static_cast<float>(uniform01(rng));
  for (auto _ : state) {
    benchmark::DoNotOptimize(top_k_indices(scores, n / 2));
  }
}
BENCHMARK(BM_TopK)->RangeMultiplier(4)->Range(256, 16384);

// One full eviction decision at the default budget (l=32, r=2016) for a
// cache that has grown by `range(0)` tokens past it.
void BM_InfMllmDecide(benchmark::State& state) {
  const std::size_t n = 2048 + static_cast<std::size_t>(state.range(0));
  const auto rows = make_window(32, n, 3);
  PolicyConfig cfg;
  for (auto _ : state) {
    benchmark::DoNotOptimize(inf_mllm_decide(rows, n, cfg));
  }
}
BENCHMARK(BM_InfMllmDecide)->Arg(64)->Arg(512)->Arg(2048);

void BM_HeavyHitterDecide(benchmark::State& state) {
  const std::size_t n = 2048 + static_cast<std::size_t>(state.range(0));
  const auto acc = make_window(1, n, 4).front();
  for (auto _ : state) {
    benchmark::DoNotOptimize(heavy_hitter_decide(acc, n, 2016, 32));
  }
}
BENCHMARK(BM_HeavyHitterDecide)->Arg(64)->Arg(512)->Arg(2048);

}  // namespace
