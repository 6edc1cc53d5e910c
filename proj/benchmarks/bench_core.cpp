#include "nst/attention.hpp"
#include "nst/model.hpp"
#include "nst/oracle.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace nst;

namespace {

Tensor uniform(Shape shape, std::mt19937_64& rng, bool grad = false) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) {
        x = u(rng);
    }
    return Tensor::from(std::move(shape), std::move(v), grad);
}

void BM_Matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(1);
    const auto a = uniform({32, n, n}, rng);
    const auto b = uniform({n, n}, rng);
    NoGradGuard no_grad;
    for (auto _ : state) {
        benchmark::DoNotOptimize(matmul(a, b));
    }
    state.SetItemsProcessed(state.iterations() * 32 * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

void BM_MatmulBackward(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(2);
    const auto a = uniform({32, n, n}, rng, true);
    const auto b = uniform({n, n}, rng, true);
    for (auto _ : state) {
        sum(matmul(a, b)).backward();
    }
}
BENCHMARK(BM_MatmulBackward)->Arg(16)->Arg(64);

void BM_DestationaryAttention(benchmark::State& state) {
    const auto s = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(3);
    const auto q = uniform({32, s, 16}, rng);
    const auto k = uniform({32, s, 16}, rng);
    const auto v = uniform({32, s, 16}, rng);
    const DestatFactors f{exp(uniform({32}, rng)), uniform({32, s}, rng)};
    const AttentionConfig cfg{16, 1, AttentionMode::both, false};
    NoGradGuard no_grad;
    for (auto _ : state) {
        benchmark::DoNotOptimize(destationary_attention(q, k, v, f, cfg));
    }
}
BENCHMARK(BM_DestationaryAttention)->Arg(48)->Arg(96);

ModelConfig desk_config() {
    ModelConfig c;
    c.input_len = 48;
    c.pred_len = 24;
    c.channels = 3;
    c.d_model = 64;
    c.n_heads = 4;
    c.ffn_width = 256;
    c.projector_hidden = 64;
    return c;
}

void BM_ModelForward(benchmark::State& state) {
    Model m(desk_config());
    std::mt19937_64 rng(4);
    const auto x = uniform({32, 48, 3}, rng);
    NoGradGuard no_grad;
    for (auto _ : state) {
        benchmark::DoNotOptimize(m.forward(x).y_hat);
    }
}
BENCHMARK(BM_ModelForward)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
    Model m(desk_config());
    std::mt19937_64 rng(5);
    const auto x = uniform({32, 48, 3}, rng);
    const auto y = uniform({32, 24, 3}, rng);
    for (auto _ : state) {
        m.parameters().zero_grad();
        mse_loss(m.forward(x, true).y_hat, y).backward();
    }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_OracleInstance(benchmark::State& state) {
    std::mt19937_64 rng(6);
    const auto inst = oracle::random_instance(rng, {});
    for (auto _ : state) {
        benchmark::DoNotOptimize(oracle::reconstructed_attention_map(inst.stack, inst.x));
    }
}
BENCHMARK(BM_OracleInstance);

} // namespace

BENCHMARK_MAIN();
