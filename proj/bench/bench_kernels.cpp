// Serial reference vs OpenMP kernels. Thread count follows OMP_NUM_THREADS.

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "bdscan/data_io.hpp"
#include "bdscan/kernels.hpp"
#include "bdscan/network.hpp"
#include "bdscan/perturb.hpp"

using namespace bdscan;

namespace {

Network make_net() {
    Network net = Network::reference({16, 16, 3}, 5);
    net.init_params(1);
    return net;
}

Tensor make_batch(std::size_t n) {
    Tensor t({n, 16, 16, 3});
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& x : t.raw()) x = u(rng);
    return t;
}

Exec exec_of(const benchmark::State& s) { return s.range(0) ? Exec::parallel : Exec::serial; }

void BM_Forward(benchmark::State& state) {
    const Network net = make_net();
    const Tensor x = make_batch(std::size_t(state.range(1)));
    for (auto _ : state) benchmark::DoNotOptimize(forward(net, x, exec_of(state)));
    state.SetItemsProcessed(state.iterations() * state.range(1));
}
BENCHMARK(BM_Forward)->ArgNames({"parallel", "batch"})->ArgsProduct({{0, 1}, {25, 125}});

void BM_TargetObjective(benchmark::State& state) {
    const Network net = make_net();
    const std::size_t n = std::size_t(state.range(1));
    const Tensor x = make_batch(n);
    const std::vector<double> w(n, 1.0 / double(n));
    for (auto _ : state) benchmark::DoNotOptimize(target_objective(net, x, 0, 1, w, exec_of(state)));
    state.SetItemsProcessed(state.iterations() * state.range(1));
}
BENCHMARK(BM_TargetObjective)->ArgNames({"parallel", "batch"})->ArgsProduct({{0, 1}, {25, 125}});

void BM_Sweep(benchmark::State& state) {
    const Network net = make_net();
    const Dataset det = generate_synthetic(5, 50, 16, 16, 3);
    OptimizerConfig cfg;
    cfg.max_norm = 6.0;
    cfg.max_iters = 20;
    for (auto _ : state) benchmark::DoNotOptimize(sweep_all_pairs(net, det, cfg, exec_of(state)));
}
BENCHMARK(BM_Sweep)->ArgNames({"parallel"})->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
