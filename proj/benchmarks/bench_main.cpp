#include <benchmark/benchmark.h>

#include <random>

#include "hybridseg/layers.hpp"
#include "hybridseg/losses.hpp"
#include "hybridseg/metrics.hpp"
#include "hybridseg/network.hpp"

using namespace hybridseg;

namespace {

Tensor<float> random_tensor(int c, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.f, 1.f);
  Tensor<float> t(c, h, w);
  for (auto& v : t.data) v = n(rng);
  return t;
}

GrayImage random_image(int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GrayImage img(size, size);
  for (auto& v : img.values) v = u(rng);
  return img;
}

void BM_ConvForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), size = static_cast<int>(state.range(1));
  const ConvShape s{c, c, 3, 1};
  const auto x = random_tensor(c, size, size, 1);
  const std::vector<float> w(s.weight_count(), 0.01f), b(c, 0.f);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_forward<float>(s, w, b, x, nullptr));
}
BENCHMARK(BM_ConvForward)->Args({16, 32})->Args({32, 16})->Args({64, 8});

void BM_ConvBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), size = static_cast<int>(state.range(1));
  const ConvShape s{c, c, 3, 1};
  const auto x = random_tensor(c, size, size, 2);
  const std::vector<float> w(s.weight_count(), 0.01f), b(c, 0.f);
  ConvCache<float> cache;
  const auto y = conv2d_forward<float>(s, w, b, x, &cache);
  const auto gy = random_tensor(c, y.height, y.width, 3);
  std::vector<float> dw(w.size()), db(b.size());
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_backward<float>(s, w, cache, gy, dw, db));
}
BENCHMARK(BM_ConvBackward)->Args({16, 32})->Args({32, 16})->Args({64, 8});

void BM_NetworkForward(benchmark::State& state) {
  NetConfig cfg;
  cfg.aux_branch = state.range(0) != 0;
  const Network<float> net(cfg);
  const GrayImage img = random_image(64, 4);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(img));
}
BENCHMARK(BM_NetworkForward)->Arg(1)->Arg(0)->Unit(benchmark::kMillisecond);

void BM_NetworkForwardBackward(benchmark::State& state) {
  const Network<float> net(NetConfig{});
  const GrayImage img = random_image(64, 5);
  const RealMap grad(64, 64, 1e-3);
  for (auto _ : state) {
    ForwardCache<float> cache;
    net.forward(img, cache);
    auto g = net.zero_gradients();
    net.backward(cache, grad, &grad, g);
    benchmark::DoNotOptimize(g);
  }
}
BENCHMARK(BM_NetworkForwardBackward)->Unit(benchmark::kMillisecond);

void BM_SMeasure(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const RealMap pred = random_image(size, 6);
  Mask gt(size, size);
  for (int r = size / 4; r < 3 * size / 4; ++r)
    for (int c = size / 3; c < 2 * size / 3; ++c) gt.at(r, c) = 1;
  for (auto _ : state) benchmark::DoNotOptimize(s_measure(pred, gt));
}
BENCHMARK(BM_SMeasure)->Arg(64)->Arg(352);

void BM_PpaLoss(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const RealMap logits = random_image(size, 7);
  Mask gt(size, size);
  for (int r = size / 4; r < 3 * size / 4; ++r)
    for (int c = size / 4; c < 3 * size / 4; ++c) gt.at(r, c) = 1;
  const PpaOptions opts{31 * size / 352 | 1, 1.0};
  for (auto _ : state) benchmark::DoNotOptimize(ppa_loss_grad(logits, gt, opts));
}
BENCHMARK(BM_PpaLoss)->Arg(64)->Arg(352);

}  // namespace

BENCHMARK_MAIN();
