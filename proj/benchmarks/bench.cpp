#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "bfpkit/accel.hpp"
#include "bfpkit/bfp.hpp"
#include "bfpkit/nn.hpp"
#include "bfpkit/tensor.hpp"

using namespace bfpkit;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> v(n);
    for (double& x : v) x = dist(rng);
    return v;
}

Tensor random_tensor(std::vector<int> shape, std::uint64_t seed) {
    Tensor t(std::move(shape));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (double& v : t.data) v = dist(rng);
    return t;
}

MantissaWidth width_arg(const benchmark::State& state) {
    return width_from_bits(static_cast<int>(state.range(0)));
}

void BM_QuantizeBlock(benchmark::State& state) {
    const auto vals = random_values(216, 42);
    for (auto _ : state) {
        auto [block, stats] = bfp::quantize_block(vals, width_arg(state));
        benchmark::DoNotOptimize(block);
        benchmark::DoNotOptimize(stats);
    }
    state.SetItemsProcessed(state.iterations() * 216);
}
BENCHMARK(BM_QuantizeBlock)->Arg(4)->Arg(8)->Arg(16);

void BM_BlockDot(benchmark::State& state) {
    const auto a = bfp::quantize_block(random_values(216, 1), width_arg(state)).first;
    const auto b = bfp::quantize_block(random_values(216, 2), width_arg(state)).first;
    for (auto _ : state) benchmark::DoNotOptimize(bfp::block_dot(a, b));
    state.SetItemsProcessed(state.iterations() * 216);
}
BENCHMARK(BM_BlockDot)->Arg(4)->Arg(8)->Arg(16);

void BM_BlockTensorConv3(benchmark::State& state) {
    const Tensor act = random_tensor({8, 24, 16, 16}, 7);
    for (auto _ : state) {
        auto t = bfp::block_tensor(act, LayerKind::Conv3, width_arg(state));
        benchmark::DoNotOptimize(t);
    }
    state.SetItemsProcessed(state.iterations() * act.numel());
}
BENCHMARK(BM_BlockTensorConv3)->Arg(4)->Arg(8)->Arg(16);

void BM_ForwardConv(benchmark::State& state) {
    nn::LayerSpec l;
    l.kind = LayerKind::Conv3;
    l.c_in = 12;
    l.c_out = 20;
    l.h = 16;
    l.w = 16;
    l.padding = 1;
    const auto w = width_arg(state);
    const auto xb = bfp::block_tensor(random_tensor({4, 12, 16, 16}, 3), l.kind, w);
    const auto wb = bfp::block_tensor(random_tensor({20, 12, 3, 3}, 4), l.kind, w);
    for (auto _ : state) benchmark::DoNotOptimize(nn::forward_conv(xb, wb, l));
    const std::int64_t macs = 4ll * 20 * 16 * 16 * 12 * 9;
    state.SetItemsProcessed(state.iterations() * macs);
}
BENCHMARK(BM_ForwardConv)->Arg(4)->Arg(8)->Arg(16);

void BM_ForwardConvReal(benchmark::State& state) {
    nn::LayerSpec l;
    l.kind = LayerKind::Conv3;
    l.c_in = 12;
    l.c_out = 20;
    l.h = 16;
    l.w = 16;
    l.padding = 1;
    const Tensor x = random_tensor({4, 12, 16, 16}, 3);
    const Tensor w = random_tensor({20, 12, 3, 3}, 4);
    for (auto _ : state) benchmark::DoNotOptimize(nn::forward_conv_real(x, w, l));
    const std::int64_t macs = 4ll * 20 * 16 * 16 * 12 * 9;
    state.SetItemsProcessed(state.iterations() * macs);
}
BENCHMARK(BM_ForwardConvReal);

void BM_WeightGradient(benchmark::State& state) {
    nn::LayerSpec l;
    l.kind = LayerKind::Conv3;
    l.c_in = 12;
    l.c_out = 20;
    l.h = 16;
    l.w = 16;
    l.padding = 1;
    const auto w = width_arg(state);
    const auto xb = bfp::block_tensor(random_tensor({4, 12, 16, 16}, 5), l.kind, w);
    const auto gb = bfp::block_tensor(random_tensor({4, 20, 16, 16}, 6), l.kind, w);
    for (auto _ : state)
        benchmark::DoNotOptimize(nn::weight_gradient(gb, xb, l, w));
}
BENCHMARK(BM_WeightGradient)->Arg(8)->Arg(16);

void BM_EstimateTrainingStep(benchmark::State& state) {
    const accel::CoreGeometry g;
    const accel::CostModelConfig cost;
    std::vector<nn::LayerSpec> layers;
    std::vector<nn::PrecisionConfig> precision;
    for (int i = 0; i < 16; ++i) {
        nn::LayerSpec l;
        l.kind = i % 4 == 3 ? LayerKind::DWConv3 : LayerKind::Conv3;
        l.c_in = 32 + 4 * i;
        l.c_out = l.depthwise() ? l.c_in : 32 + 4 * (i + 1);
        l.h = 32;
        l.w = 32;
        l.padding = 1;
        layers.push_back(l);
        precision.push_back({MantissaWidth::w4, MantissaWidth::w4, MantissaWidth::w4,
                             MantissaWidth::w8});
    }
    for (auto _ : state)
        benchmark::DoNotOptimize(accel::estimate_training_step(layers, precision, 16, cost, g));
    state.SetItemsProcessed(state.iterations() * layers.size() * 3);
}
BENCHMARK(BM_EstimateTrainingStep);

}  // namespace

BENCHMARK_MAIN();
