// Serial reference vs OpenMP kernels on CMP-shaped workloads.

#include <benchmark/benchmark.h>

#include "merry/kernels.hpp"
#include "merry/random.hpp"
#include "merry/synthetic.hpp"

namespace {

using namespace merry;

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    Matrix m(r, c);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(-1.0, 1.0);
    return m;
}

struct Workload {
    kernels::EdgeList graph;
    Matrix h, rel, w;

    explicit Workload(std::size_t entities) {
        Rng rng(7);
        const KnowledgeGraph kg = synthetic::random_kg(entities, 16, entities * 8, rng);
        graph = kg.edge_list();
        h = random_matrix(entities, 64, rng);
        rel = random_matrix(16, 64, rng);
        w = random_matrix(128, 64, rng);
    }
};

template <bool Parallel>
void BM_MessageAggregate(benchmark::State& state) {
    const Workload wl(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) {
        Matrix out = Parallel ? kernels::omp::message_aggregate(wl.h, wl.rel, wl.graph, {})
                              : kernels::serial::message_aggregate(wl.h, wl.rel, wl.graph, {});
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(wl.graph.size()));
}

template <bool Parallel>
void BM_Matmul(benchmark::State& state) {
    Rng rng(11);
    const auto n = static_cast<std::size_t>(state.range(0));
    const Matrix a = random_matrix(n, 128, rng);
    const Matrix b = random_matrix(128, 64, rng);
    for (auto _ : state) {
        Matrix out = Parallel ? kernels::omp::matmul(a, b) : kernels::serial::matmul(a, b);
        benchmark::DoNotOptimize(out.data());
    }
}

template <bool Parallel>
void BM_LayerNorm(benchmark::State& state) {
    Rng rng(13);
    const auto n = static_cast<std::size_t>(state.range(0));
    const Matrix x = random_matrix(n, 64, rng);
    const std::vector<double> gamma(64, 1.0), beta(64, 0.0);
    for (auto _ : state) {
        Matrix out = Parallel ? kernels::omp::layer_norm(x, gamma, beta, 1e-5, nullptr, nullptr)
                              : kernels::serial::layer_norm(x, gamma, beta, 1e-5, nullptr, nullptr);
        benchmark::DoNotOptimize(out.data());
    }
}

}  // namespace

BENCHMARK(BM_MessageAggregate<false>)->Arg(1000)->Arg(10000)->Name("message_aggregate/serial");
BENCHMARK(BM_MessageAggregate<true>)->Arg(1000)->Arg(10000)->Name("message_aggregate/omp");
BENCHMARK(BM_Matmul<false>)->Arg(1000)->Arg(10000)->Name("matmul/serial");
BENCHMARK(BM_Matmul<true>)->Arg(1000)->Arg(10000)->Name("matmul/omp");
BENCHMARK(BM_LayerNorm<false>)->Arg(1000)->Arg(10000)->Name("layer_norm/serial");
BENCHMARK(BM_LayerNorm<true>)->Arg(1000)->Arg(10000)->Name("layer_norm/omp");

BENCHMARK_MAIN();
