#include <benchmark/benchmark.h>

#include <random>

#include "annulus/synthvideo.hpp"
#include "annulus/trainer.hpp"

namespace {

using namespace annulus;

ModelConfig bench_model(int base) {
  ModelConfig cfg;
  cfg.base_channels = base;
  return cfg;
}

const Sample& bench_video() {
  static const Sample s = generate_video(SynthConfig{}, 1, 0, false);
  return s;
}

void BM_Forward(benchmark::State& state) {
  const Network<float> net(bench_model(static_cast<int>(state.range(0))));
  std::mt19937_64 rng(1);
  const auto params = net.init(rng);
  const auto window = make_window<float>(bench_video().video.frames, 10);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(params, window));
}
BENCHMARK(BM_Forward)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
  const Network<float> net(bench_model(static_cast<int>(state.range(0))));
  std::mt19937_64 rng(1);
  const auto params = net.init(rng);
  auto grads = params.zeros_like();
  const auto window = make_window<float>(bench_video().video.frames, 10);
  for (auto _ : state) {
    ForwardCache<float> cache;
    const auto out = net.forward(params, window, &cache);
    auto g = PredictionMaps<float>::zeros(out.n_landmarks, out.grid);
    std::fill(g.cls_logits.begin(), g.cls_logits.end(), 1.0f);
    net.backward(params, cache, g, grads);
  }
}
BENCHMARK(BM_ForwardBackward)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const ModelConfig model = bench_model(static_cast<int>(state.range(0)));
  const Network<float> net(model);
  std::mt19937_64 rng(1);
  auto params = net.init(rng);
  auto adam = AdamState::for_params(params);
  const int clip_length = static_cast<int>(state.range(1));
  for (auto _ : state) {
    std::vector<Sample> clips;
    for (int b = 0; b < 4; ++b) {
      clips.push_back(sample_clip(bench_video().video, bench_video().truth, clip_length, rng).sample);
    }
    auto grads = params.zeros_like();
    benchmark::DoNotOptimize(batch_loss<float>(net, params, clips, LossWeights{0.5}, &grads));
    adam_step(params, grads, adam, 1e-4);
  }
}
BENCHMARK(BM_TrainStep)->Args({8, 10})->Args({8, 30})->Args({16, 30})->Unit(benchmark::kMillisecond);

void BM_GenerateVideo(benchmark::State& state) {
  int i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(generate_video(SynthConfig{}, 7, i++, false));
}
BENCHMARK(BM_GenerateVideo)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
