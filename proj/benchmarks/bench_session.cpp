// SPDX-License-Identifier: Apache-2.0
#include <memory>

#include <benchmark/benchmark.h>

#include "cutie/session.hpp"

namespace {

using namespace cutie;

Image gradient_frame(std::size_t h, std::size_t w, std::size_t shift) {
  Image img(h, w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      std::uint8_t *p = img.pixel(y, x);
      p[0] = static_cast<std::uint8_t>((x + shift) * 3);
      p[1] = static_cast<std::uint8_t>(y * 5);
      p[2] = static_cast<std::uint8_t>((x ^ y) + shift);
    }
  }
  return img;
}

// One propagation step of the default model at 128x128 with two objects,
// after the bank has filled to t_max.
void BM_SessionStep(benchmark::State &state) {
  const std::size_t size = 128;
  auto net = std::make_shared<SegmentationNetwork>(SegmentationNetwork::random(ModelConfig{}, 1));
  InferenceSession session(net, {.mem_interval = 1, .t_max = 5});
  LabelMap mask(size, size);
  for (std::size_t y = 20; y < 60; ++y) {
    for (std::size_t x = 20; x < 60; ++x) {
      mask.at(y, x) = 1;
      mask.at(y + 50, x + 50) = 2;
    }
  }
  session.add_reference(gradient_frame(size, size, 0), mask);
  for (std::size_t t = 1; t < 6; ++t) {
    session.step(gradient_frame(size, size, t));
  }
  const Image frame = gradient_frame(size, size, 9);
  for (auto _ : state) {
    state.PauseTiming();
    InferenceSession probe = session;
    state.ResumeTiming();
    benchmark::DoNotOptimize(probe.step(frame));
  }
}
BENCHMARK(BM_SessionStep)->Unit(benchmark::kMillisecond)->Iterations(3)->UseRealTime();

} // namespace

BENCHMARK_MAIN();
