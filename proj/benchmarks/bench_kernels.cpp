// SPDX-License-Identifier: Apache-2.0
#include <random>

#include <benchmark/benchmark.h>

#include "cutie/masked_attention.hpp"
#include "cutie/object_transformer.hpp"
#include "cutie/pixel_memory.hpp"
#include "cutie/tensor_ops.hpp"

namespace {

using namespace cutie;

Tensor noise(Shape shape, std::mt19937_64 &rng, float lo = -1.0f, float hi = 1.0f) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<float> d(lo, hi);
  for (float &v : t.values()) {
    v = d(rng);
  }
  return t;
}

void BM_Matmul(benchmark::State &state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  const Tensor a = noise({n, n}, rng), b = noise({n, n}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(matmul(a, b));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

void BM_Conv3x3(benchmark::State &state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(2);
  const Tensor x = noise({c, 32, 32}, rng), w = noise({c, c, 3, 3}, rng), b = noise({c}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv2d(x, w, b));
  }
}
BENCHMARK(BM_Conv3x3)->Arg(32)->Arg(128);

// Masked cross attention at default width over a 1/16 feature map of a 480x864 frame.
void BM_MaskedCrossAttention(benchmark::State &state) {
  const std::size_t n = 16, c = 256, hw = 30 * 54;
  std::mt19937_64 rng(3);
  MaskedCrossAttention<float> attn(CrossAttentionParams<float>::random(c, rng, 0.05), 8);
  const Tensor x = noise({n, c}, rng), r = noise({hw, c}, rng), px = noise({n, c}, rng), pr = noise({hw, c}, rng);
  const Tensor mask = build_attention_mask(noise({hw}, rng, 0.0f, 1.0f), n);
  for (auto _ : state) {
    benchmark::DoNotOptimize(attn.forward(x, r, mask, px, pr));
  }
}
BENCHMARK(BM_MaskedCrossAttention)->Unit(benchmark::kMillisecond);

// Pixel-memory similarity and top-k affinity against a bank of T frames.
void BM_SimilarityTopK(benchmark::State &state) {
  const auto frames = static_cast<std::size_t>(state.range(0));
  const std::size_t hw = 8 * 8 * 4, ck = 64;
  std::mt19937_64 rng(4);
  const Tensor q = noise({hw, ck}, rng), sel = noise({hw, ck}, rng, 0.0f, 1.0f);
  const Tensor keys = noise({frames * hw, ck}, rng), shrink = noise({frames * hw}, rng, 1.0f, 3.0f);
  for (auto _ : state) {
    benchmark::DoNotOptimize(affinity(similarity(q, sel, keys, shrink), 30));
  }
}
BENCHMARK(BM_SimilarityTopK)->Arg(1)->Arg(5)->Unit(benchmark::kMicrosecond);

} // namespace
