#include <benchmark/benchmark.h>

#include <vector>

#include "ofakd/losses.hpp"
#include "ofakd/nn.hpp"
#include "ofakd/ops.hpp"
#include "ofakd/rng.hpp"

namespace {

using ofakd::Tensor;

Tensor<float> random(ofakd::Shape shape, std::uint64_t seed) {
    ofakd::Rng rng(seed);
    std::vector<float> v(ofakd::numel_of(shape));
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    return Tensor<float>(std::move(shape), std::move(v));
}

void BM_matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = random({n, n}, 1), b = random({n, n}, 2);
    for (auto _ : state) benchmark::DoNotOptimize(ofakd::matmul(a, b));
    state.SetItemsProcessed(state.iterations() * 2 * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_conv2d(benchmark::State& state) {
    const auto c = static_cast<std::size_t>(state.range(0));
    const auto x = random({32, c, 16, 16}, 3);
    const auto w = random({c, c, 3, 3}, 4);
    for (auto _ : state) benchmark::DoNotOptimize(ofakd::conv2d(x, w, Tensor<float>(), {1, 1, 1}));
}
BENCHMARK(BM_conv2d)->Arg(16)->Arg(32)->Arg(64);

// One training step (forward, loss, backward) on a 32-sample batch.
void BM_train_step(benchmark::State& state) {
    ofakd::ModelConfig config;
    config.family = state.range(0) == 0 ? ofakd::Family::cnn : ofakd::Family::vit;
    config.class_count = 8;
    if (config.family == ofakd::Family::vit) {
        config.depth = 4;
        config.patch_size = 8;
    }
    const ofakd::StagedModel<float> model(config);
    auto images = random({32, 3, 32, 32}, 5);
    std::vector<std::size_t> labels(32);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % config.class_count;
    ofakd::GradTape<float> tape;
    for (auto _ : state) {
        ofakd::TapeScope<float> scope(&tape);
        const auto loss = ofakd::cross_entropy(model.forward(images), labels);
        ofakd::backward(loss);
    }
    state.SetLabel(config.family == ofakd::Family::cnn ? "cnn" : "vit");
}
BENCHMARK(BM_train_step)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
