#include <benchmark/benchmark.h>

#include "saddlekv/session.hpp"

using namespace saddlekv;

namespace {

TinyDecoderSpec bench_spec() {
  TinyDecoderSpec spec;
  spec.layers = 2;
  spec.heads = 2;
  spec.head_dim = 8;
  spec.seed = 5;
  return spec;
}

// Cost of one decode step with `range(0)` tokens already cached.
void BM_DecodeStep(benchmark::State& state) {
  SessionOptions opts;
  opts.policy = PolicyKind::none;
  Session s(bench_spec(), opts);
  for (std::int64_t i = 0; i < state.range(0); ++i) s.decode_step(i % 32000);
  const Session warm = s;
  std::int64_t token = 0;
  for (auto _ : state) {
    state.PauseTiming();
    s = warm;
    state.ResumeTiming();
    benchmark::DoNotOptimize(s.decode_step(token++ % 32000));
  }
}
BENCHMARK(BM_DecodeStep)->Arg(256)->Arg(2048)->Arg(8192);

// A whole round (prompt, eviction, decode) at the default budget.
void BM_Round(benchmark::State& state) {
  SessionOptions opts;
  opts.policy = PolicyKind::inf_mllm;
  Session s(bench_spec(), opts);
  RoundScript script;
  for (std::int64_t i = 0; i < 256; ++i) script.prompt_token_ids.push_back(i * 7 % 32000);
  script.decode_steps = 64;
  for (int i = 0; i < 8; ++i) s.run_round(script);  // past the budget
  for (auto _ : state) {
    benchmark::DoNotOptimize(s.run_round(script));
  }
  state.SetItemsProcessed(state.iterations() * 320);
}
BENCHMARK(BM_Round)->Unit(benchmark::kMillisecond);

}  // namespace
