#include <benchmark/benchmark.h>

#include "vesselgan/data.hpp"
#include "vesselgan/evaluator.hpp"
#include "vesselgan/losses.hpp"
#include "vesselgan/networks.hpp"
#include "vesselgan/rng.hpp"

using namespace vgan;

namespace {

Tensor random_tensor(std::vector<int> shape, std::uint64_t seed) {
    RngStream rng(seed, "bench");
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform();
    return t;
}

void BM_Conv2dForward64(benchmark::State& state) {
    nn::Conv2d conv("c", 16, 32, 4, 2, 1);
    nn::init_params(conv.params(), 1, 0.02);
    Tensor x = random_tensor({1, 16, 64, 64}, 2);
    for (auto _ : state) {
        benchmark::DoNotOptimize(conv.forward(x, true));
    }
}
BENCHMARK(BM_Conv2dForward64);

void BM_GeneratorStep64(benchmark::State& state) {
    NetworkSpec spec = default_spec(Role::segmentor, 64);
    spec.base_filters = 16;
    Generator g(spec, 1);
    Tensor x = random_tensor({1, 3, 64, 64}, 3);
    Tensor grad = random_tensor({1, 1, 64, 64}, 4);
    for (auto _ : state) {
        g.zero_grad();
        benchmark::DoNotOptimize(g.forward(x, true));
        benchmark::DoNotOptimize(g.backward(grad));
    }
}
BENCHMARK(BM_GeneratorStep64);

void BM_GramMatrix(benchmark::State& state) {
    Tensor f = random_tensor({64, 32, 32}, 5);
    for (auto _ : state) {
        benchmark::DoNotOptimize(losses::gram(f));
    }
}
BENCHMARK(BM_GramMatrix);

void BM_Otsu512(benchmark::State& state) {
    Tensor prob = random_tensor({512, 512}, 6);
    Tensor fov = Tensor::full({512, 512}, 1.0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(otsu_threshold(prob, fov));
    }
}
BENCHMARK(BM_Otsu512);

void BM_AucRoc512(benchmark::State& state) {
    RngStream rng(7, "bench");
    Tensor prob = random_tensor({512, 512}, 8);
    Tensor gold({512, 512});
    for (std::int64_t i = 0; i < gold.numel(); ++i) gold[i] = rng.uniform() < 0.1 ? 1.0 : 0.0;
    Tensor fov = Tensor::full({512, 512}, 1.0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(auc_roc(prob, gold, fov));
    }
}
BENCHMARK(BM_AucRoc512);

void BM_PreprocessDrive(benchmark::State& state) {
    auto ds = make_synthetic_dataset(1, 128, 9);
    for (auto _ : state) {
        benchmark::DoNotOptimize(preprocess(ds[0], DatasetKind::SYNTHETIC, 64));
    }
}
BENCHMARK(BM_PreprocessDrive);

}  // namespace

BENCHMARK_MAIN();
