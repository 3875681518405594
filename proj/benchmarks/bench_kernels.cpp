#include <benchmark/benchmark.h>

#include <cmath>

#include "cicl/kernels.hpp"

namespace {

using cicl::nn::Tensor;

template <typename Scalar>
Tensor<Scalar> filled(std::vector<std::size_t> shape) {
  Tensor<Scalar> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(std::sin(0.37 * static_cast<double>(i)));
  return t;
}

// Rows are batch x 48 tokens; columns follow the default width.
void BM_Linear(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const auto x = filled<float>({rows, 128});
  const auto w = filled<float>({128, 512});
  const auto b = filled<float>({512});
  Tensor<float> out({rows, 512});
  for (auto _ : state) {
    cicl::nn::linear<float>(x.cmat(), w.cmat(), b.cvec(), out.mat());
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows) * 128 * 512);
}
BENCHMARK(BM_Linear)->Arg(48)->Arg(48 * 32)->Arg(48 * 128);

void BM_CausalAttention(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  const int T = 48, H = 8, d = 128;
  const auto qkv = filled<float>({static_cast<std::size_t>(batch * T), 3 * d});
  Tensor<float> out({static_cast<std::size_t>(batch * T), d});
  Tensor<float> probs({static_cast<std::size_t>(batch * H * T * T)});
  for (auto _ : state) {
    cicl::nn::causal_attention<float>(qkv.cmat(), batch, T, H, out.mat(), probs.values());
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_CausalAttention)->Arg(1)->Arg(32);

void BM_CausalAttentionBackward(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  const int T = 48, H = 8, d = 128;
  const auto qkv = filled<float>({static_cast<std::size_t>(batch * T), 3 * d});
  const auto dout = filled<float>({static_cast<std::size_t>(batch * T), d});
  Tensor<float> out({static_cast<std::size_t>(batch * T), d});
  Tensor<float> probs({static_cast<std::size_t>(batch * H * T * T)});
  Tensor<float> dqkv({static_cast<std::size_t>(batch * T), 3 * d});
  cicl::nn::causal_attention<float>(qkv.cmat(), batch, T, H, out.mat(), probs.values());
  for (auto _ : state) {
    dqkv.set_zero();
    cicl::nn::causal_attention_backward<float>(qkv.cmat(), batch, T, H, probs.values(), dout.cmat(), dqkv.mat());
    benchmark::DoNotOptimize(dqkv.data());
  }
}
BENCHMARK(BM_CausalAttentionBackward)->Arg(1)->Arg(32);

void BM_LayerNorm(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const auto x = filled<float>({rows, 128});
  const auto g = filled<float>({128});
  const auto b = filled<float>({128});
  Tensor<float> out({rows, 128});
  cicl::nn::LayerNormCache<float> cache;
  for (auto _ : state) {
    cicl::nn::layer_norm<float>(x.cmat(), g.cvec(), b.cvec(), out.mat(), cache);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_LayerNorm)->Arg(48 * 128);

void BM_Gelu(benchmark::State& state) {
  const auto x = filled<float>({48 * 128, 512});
  Tensor<float> out(x.shape());
  for (auto _ : state) {
    cicl::nn::gelu<float>(x.values(), out.values());
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_Gelu);

void BM_CrossEntropy(benchmark::State& state) {
  const std::size_t rows = 48 * 128, vocab = 59;
  const auto logits = filled<float>({rows, vocab});
  std::vector<int> targets(rows);
  std::vector<double> weights(rows, 1.0);
  for (std::size_t i = 0; i < rows; ++i) targets[i] = static_cast<int>(i % vocab);
  Tensor<float> grad({rows, vocab});
  for (auto _ : state) {
    const auto r = cicl::nn::weighted_cross_entropy<float>(logits.cmat(), targets, weights, grad.mat());
    benchmark::DoNotOptimize(r.loss);
  }
}
BENCHMARK(BM_CrossEntropy);

}  // namespace
