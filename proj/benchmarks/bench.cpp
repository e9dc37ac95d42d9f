#include <benchmark/benchmark.h>

#include "cace/model.hpp"
#include "cace/ops.hpp"
#include "cace/rng.hpp"

using namespace cace;

static void BM_Conv2d3x3(benchmark::State& state) {
    const long c = state.range(0), hw = state.range(1);
    Rng rng(1);
    Tensor x = rng.normal_tensor(1, c, hw, hw, 1.0);
    Tensor w = rng.normal_tensor(c, c, 3, 3, 0.1);
    Tensor b = Tensor::zeros(1, c, 1, 1);
    ConvSpec spec{.kh = 3, .kw = 3, .ph = 1, .pw = 1, .in_channels = c, .out_channels = c};
    for (auto _ : state) {
        Tensor y = ops::conv2d(x, w, b, spec);
        benchmark::DoNotOptimize(y);
    }
    state.SetItemsProcessed(state.iterations() * c * c * hw * hw * 9);
}
BENCHMARK(BM_Conv2d3x3)->Args({16, 64})->Args({32, 32})->Args({64, 16})->Args({128, 4});

static void BM_ForwardDesk(benchmark::State& state) {
    CaceNet net(ModelConfig::desk(), 7);
    Rng rng(2);
    Tensor img = rng.uniform_tensor(1, 1, 64, 64, 0.0, 1.0);
    for (auto _ : state) {
        Tensor y = net.forward(img);
        benchmark::DoNotOptimize(y);
    }
}
BENCHMARK(BM_ForwardDesk);

static void BM_TrainStepDesk(benchmark::State& state) {
    CaceNet net(ModelConfig::desk(), 7);
    Rng rng(3);
    Tensor img = rng.uniform_tensor(1, 1, 64, 64, 0.0, 1.0);
    Tensor target(1, 1, 64, 64);
    for (long i = 0; i < target.numel(); ++i) target.set(i, rng.uniform() < 0.5 ? 0.0 : 1.0);
    for (auto _ : state) {
        Tape tape;
        Variable in = tape.leaf(img, false);
        Variable pred = net.forward_on(tape, in, RunMode::train);
        Variable loss = tape.bce_loss(pred, target, 1e-7);
        tape.backward(loss);
        benchmark::DoNotOptimize(tape.value(loss).get(0));
    }
}
BENCHMARK(BM_TrainStepDesk);

BENCHMARK_MAIN();
