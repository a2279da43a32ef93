#include <benchmark/benchmark.h>

#include <random>

#include "acmseg/acm.hpp"
#include "acmseg/backbone.hpp"
#include "acmseg/runtime.hpp"
#include "acmseg/ssvm.hpp"

using namespace acmseg;

namespace {

Image random_image(int size) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(size, size);
    for (auto& x : img.data) x = u(rng);
    return img;
}

PriorMaps bowl(int size) {
    Grid d(size, size), a(size, size, 0.02), b(size, size, 0.02), k(size, size, -0.01);
    const double c = (size - 1) / 2.0;
    for (int v = 0; v < size; ++v)
        for (int u = 0; u < size; ++u) d(u, v) = 0.05 * std::pow(std::hypot(u - c, v - c) - size / 4.0, 2);
    return PriorMaps(d, a, b, k);
}

const int kTuned = (tune_allocator(), 0);

}  // namespace

static void BM_Rasterize(benchmark::State& st) {
    const int size = static_cast<int>(st.range(0));
    const Polygon p = circle({size / 2.0, size / 2.0}, size / 3.0, 60);
    for (auto _ : st) benchmark::DoNotOptimize(rasterize(p, size, size));
}
BENCHMARK(BM_Rasterize)->Arg(64)->Arg(128)->Arg(512);

static void BM_Energy(benchmark::State& st) {
    const PriorMaps m = bowl(128);
    const Polygon p = circle({64, 64}, 30, 60);
    for (auto _ : st) benchmark::DoNotOptimize(energy(p, m));
}
BENCHMARK(BM_Energy);

static void BM_NodeGrad(benchmark::State& st) {
    const PriorMaps m = bowl(128);
    const Polygon p = circle({64, 64}, 30, 60);
    for (auto _ : st) benchmark::DoNotOptimize(node_grad(p, m));
}
BENCHMARK(BM_NodeGrad);

static void BM_InferMulti(benchmark::State& st) {
    const PriorMaps m = bowl(128);
    for (auto _ : st) benchmark::DoNotOptimize(infer_multi(m, AcmOptions{}));
}
BENCHMARK(BM_InferMulti)->Unit(benchmark::kMillisecond);

static void BM_Forward(benchmark::State& st) {
    const auto p = init_params(ArchConfig::desk(), 1);
    const Image img = random_image(128);
    for (auto _ : st) benchmark::DoNotOptimize(forward(p, img));
}
BENCHMARK(BM_Forward)->Unit(benchmark::kMillisecond);

static void BM_Backward(benchmark::State& st) {
    const auto p = init_params(ArchConfig::desk(), 1);
    const auto r = forward(p, random_image(128));
    const MapGrads g = energy_map_grads(circle({64, 64}, 30, 60), r.maps);
    for (auto _ : st) benchmark::DoNotOptimize(backward(p, *r.cache, g));
}
BENCHMARK(BM_Backward)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
