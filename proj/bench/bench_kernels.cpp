// Serial reference vs OpenMP kernels. Run with OMP_NUM_THREADS set to compare.

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "masklrf/kernels.hpp"

using namespace masklrf;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    Matrix m(r, c);
    for (auto& x : m.data) x = nd(rng);
    return m;
}

std::vector<Vec3> random_points(std::size_t n, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<Vec3> p(n);
    for (auto& v : p) v = {u(rng), u(rng), u(rng)};
    return p;
}

template <bool Parallel>
void BM_matmul(benchmark::State& st) {
    const auto n = static_cast<std::size_t>(st.range(0));
    const auto a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
    Matrix c(n, n);
    for (auto _ : st) {
        if constexpr (Parallel) kernels::matmul(a, b, c);
        else kernels::serial::matmul(a, b, c);
        benchmark::DoNotOptimize(c.data.data());
    }
    st.SetItemsProcessed(st.iterations() * static_cast<int64_t>(n * n * n));
}

template <bool Parallel>
void BM_matmul_tn(benchmark::State& st) {
    const auto n = static_cast<std::size_t>(st.range(0));
    const auto a = random_matrix(n, n, 3), b = random_matrix(n, n, 4);
    Matrix c(n, n);
    for (auto _ : st) {
        if constexpr (Parallel) kernels::matmul_tn_acc(a, b, c);
        else kernels::serial::matmul_tn_acc(a, b, c);
        benchmark::DoNotOptimize(c.data.data());
    }
}

template <bool Parallel>
void BM_fps(benchmark::State& st) {
    const auto n = static_cast<std::size_t>(st.range(0));
    const auto pts = random_points(n, 5);
    std::vector<double> min_d(n);
    for (auto _ : st) {
        std::fill(min_d.begin(), min_d.end(), 1e300);
        std::size_t pick = 0;
        for (int s = 0; s < 64; ++s)
            pick = Parallel ? kernels::fps_update(pts, pick, min_d) : kernels::serial::fps_update(pts, pick, min_d);
        benchmark::DoNotOptimize(pick);
    }
}

}  // namespace

BENCHMARK(BM_matmul<false>)->Arg(64)->Arg(256);
BENCHMARK(BM_matmul<true>)->Arg(64)->Arg(256);
BENCHMARK(BM_matmul_tn<false>)->Arg(64)->Arg(256);
BENCHMARK(BM_matmul_tn<true>)->Arg(64)->Arg(256);
BENCHMARK(BM_fps<false>)->Arg(4096)->Arg(65536);
BENCHMARK(BM_fps<true>)->Arg(4096)->Arg(65536);

BENCHMARK_MAIN();
