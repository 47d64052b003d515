// ==== microbenchmarks =======================================================
// Assignment solver scaling, one full ambiguity trial, and the decoder
// forward pass. Run manually: build/benchmarks/w2_bench [--benchmark_filter=].

#include <benchmark/benchmark.h>

#include <Eigen/Core>
#include <random>
#include <vector>

#include "w2/decoder.hpp"
#include "w2/matching.hpp"
#include "w2/synthlab.hpp"

namespace {

Eigen::MatrixXd random_cost(int n, int m, unsigned seed) {
    std::mt19937_64 g(seed);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    Eigen::MatrixXd c(n, m);
    for (Eigen::Index i = 0; i < c.rows(); ++i)
        for (Eigen::Index j = 0; j < c.cols(); ++j) c(i, j) = u(g);
    return c;
}

void bm_solve_assignment(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const auto cost = random_cost(n, n, 99);
    for (auto _ : state) {
        auto a = w2::solve_assignment(cost);
        benchmark::DoNotOptimize(a.total_cost);
    }
    state.SetComplexityN(n);
}

void bm_ambiguity_trial(benchmark::State& state) {
    w2::GeneratorConfig cfg;
    cfg.seed = 4;
    const auto [scene, sites] = w2::generate_scene(cfg);
    const auto preds = w2::perturb_predictions(scene, cfg.noise_sigma, 11);
    for (auto _ : state) {
        auto a = w2::assign(preds, scene, w2::CostWeights{},
                            w2::RepulsiveForm::exp_ratio());
        benchmark::DoNotOptimize(a.total_cost);
    }
}

void bm_decoder_forward(benchmark::State& state) {
    w2::GeneratorConfig gcfg;
    gcfg.seed = 4;
    const auto [scene, sites] = w2::generate_scene(gcfg);
    w2::DecoderConfig cfg;
    cfg.num_queries = 16;
    cfg.channels = gcfg.channels;
    cfg.num_layers = static_cast<int>(state.range(0));
    for (auto _ : state) {
        auto t = w2::forward(scene, cfg);
        benchmark::DoNotOptimize(t.predictions.size());
    }
}

}  // namespace

BENCHMARK(bm_solve_assignment)->Arg(8)->Arg(16)->Arg(32)->Arg(64)->Complexity();
BENCHMARK(bm_ambiguity_trial);
BENCHMARK(bm_decoder_forward)->Arg(1)->Arg(6);

BENCHMARK_MAIN();
