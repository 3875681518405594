#include <benchmark/benchmark.h>

#include "cicl/trainer.hpp"

namespace {

using namespace cicl;

TrainConfig bench_config(int p, int pairs, int m, int n) {
  TrainConfig c;
  c.split = split_pairs(Modulus(p), 0.8, 7);
  c.spec.m = m;
  c.spec.n = n;
  c.spec.pairs = pairs;
  c.model.vocab = p;
  c.model.max_seq = 2 * pairs;
  return c;
}

void BM_Forward(benchmark::State& state) {
  const auto c = bench_config(59, 24, 8, 8);
  Transformer<float> model(c.model, 1);
  BatchStream stream(c.split, c.spec, static_cast<int>(state.range(0)), 2);
  const auto tb = pack_batch(stream.next_batch());
  for (auto _ : state) {
    const auto tr = model.trace(tb.tokens, tb.batch, tb.seq_len, false);
    benchmark::DoNotOptimize(tr.logits.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(1)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const auto p = static_cast<int>(state.range(0));
  const auto c = p == 13 ? bench_config(13, 12, 4, 4) : bench_config(59, 24, 8, 8);
  auto st = TrainingState<float>::initial(c);
  BatchStream stream(c.split, c.spec, static_cast<int>(state.range(1)), 2);
  const auto batch = stream.next_batch();
  for (auto _ : state) {
    const auto r = train_step(*st.model, st.adam, batch);
    benchmark::DoNotOptimize(r.loss);
  }
  state.SetItemsProcessed(state.iterations() * state.range(1));
}
BENCHMARK(BM_TrainStep)->Args({13, 128})->Args({59, 32})->Unit(benchmark::kMillisecond);

void BM_BatchGeneration(benchmark::State& state) {
  const auto c = bench_config(59, 24, 8, 8);
  BatchStream stream(c.split, c.spec, 512, 2);
  for (auto _ : state) benchmark::DoNotOptimize(stream.next_batch());
  state.SetItemsProcessed(state.iterations() * 512);
}
BENCHMARK(BM_BatchGeneration)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
