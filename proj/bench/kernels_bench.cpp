#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "scdd/kernels/cluster.hpp"
#include "scdd/kernels/conv.hpp"
#include "scdd/kernels/moments.hpp"

using namespace scdd;
using namespace scdd::kernels;

namespace {

std::vector<Real> random_values(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<Real> dist;
  std::vector<Real> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

ConvGeometry geometry(const benchmark::State& state) {
  ConvGeometry g;
  g.batch = static_cast<int>(state.range(0));
  g.in_channels = g.out_channels = static_cast<int>(state.range(1));
  g.in_h = g.in_w = 16;
  return g;
}

template <auto Forward>
void conv_forward(benchmark::State& state) {
  const auto g = geometry(state);
  const auto x = random_values(g.input_size(), 1), w = random_values(g.weight_size(), 2);
  std::vector<Real> y(g.output_size());
  for (auto _ : state) {
    Forward(g, x, w, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(g.output_size()));
}

template <auto BackwardWeight>
void conv_backward_weight(benchmark::State& state) {
  const auto g = geometry(state);
  const auto x = random_values(g.input_size(), 1), dy = random_values(g.output_size(), 3);
  std::vector<Real> dw(g.weight_size());
  for (auto _ : state) {
    BackwardWeight(g, x, dy, dw);
    benchmark::DoNotOptimize(dw.data());
  }
}

template <auto Moments>
void moments(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0)), channels = static_cast<int>(state.range(1)), spatial = 256;
  const auto x = random_values(static_cast<std::size_t>(batch) * channels * spatial, 4);
  std::vector<Real> mean(channels), var(channels);
  for (auto _ : state) {
    Moments(x, batch, channels, spatial, mean, var);
    benchmark::DoNotOptimize(var.data());
  }
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(x.size() * sizeof(Real)));
}

template <auto Assign>
void assign(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0)), dim = 3, k = static_cast<int>(state.range(1));
  const auto points = random_values(static_cast<std::size_t>(n) * dim, 5);
  const auto centroids = random_values(static_cast<std::size_t>(k) * dim, 6);
  std::vector<int> labels(n);
  for (auto _ : state) benchmark::DoNotOptimize(Assign(points, n, dim, centroids, k, labels));
  state.SetItemsProcessed(state.iterations() * n);
}

}  // namespace

BENCHMARK(conv_forward<reference::conv2d_forward>)->Name("conv_forward/serial")->Args({32, 16})->Args({100, 32});
BENCHMARK(conv_forward<conv2d_forward>)->Name("conv_forward/parallel")->Args({32, 16})->Args({100, 32});
BENCHMARK(conv_backward_weight<reference::conv2d_backward_weight>)
    ->Name("conv_backward_weight/serial")
    ->Args({32, 16})
    ->Args({100, 32});
BENCHMARK(conv_backward_weight<conv2d_backward_weight>)
    ->Name("conv_backward_weight/parallel")
    ->Args({32, 16})
    ->Args({100, 32});
BENCHMARK(moments<reference::channel_moments>)->Name("channel_moments/serial")->Args({100, 16})->Args({256, 64});
BENCHMARK(moments<channel_moments>)->Name("channel_moments/parallel")->Args({100, 16})->Args({256, 64});
BENCHMARK(assign<reference::assign_nearest>)->Name("assign_nearest/serial")->Args({30, 3})->Args({100000, 10});
BENCHMARK(assign<assign_nearest>)->Name("assign_nearest/parallel")->Args({30, 3})->Args({100000, 10});

BENCHMARK_MAIN();
