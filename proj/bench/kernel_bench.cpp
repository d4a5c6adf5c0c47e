// Serial vs OpenMP kernel comparison. Both variants produce bitwise equal
// results (asserted by the kernel tests); this target measures the speed
// side of that trade on the build machine.

#include <benchmark/benchmark.h>

#include <vector>

#include "hiergen/kernels.hpp"
#include "hiergen/rng.hpp"

using namespace hiergen;

namespace {

std::vector<real> random_block(int64_t n, uint64_t seed) {
    rng r(seed);
    std::vector<real> v(n);
    for (real& x : v) x = static_cast<real>(r.gaussian());
    return v;
}

void bm_matmul_serial(benchmark::State& state) {
    const int m = static_cast<int>(state.range(0));
    const int k = m, n = m;
    const auto A = random_block(int64_t(m) * k, 1);
    const auto B = random_block(int64_t(k) * n, 2);
    std::vector<real> C(int64_t(m) * n);
    for (auto _ : state) {
        matmul_nn_serial(A.data(), B.data(), C.data(), m, k, n, false);
        benchmark::DoNotOptimize(C.data());
    }
    state.SetItemsProcessed(state.iterations() * int64_t(m) * k * n);
}

void bm_matmul_omp(benchmark::State& state) {
    const int m = static_cast<int>(state.range(0));
    const int k = m, n = m;
    const auto A = random_block(int64_t(m) * k, 1);
    const auto B = random_block(int64_t(k) * n, 2);
    std::vector<real> C(int64_t(m) * n);
    for (auto _ : state) {
        matmul_nn_omp(A.data(), B.data(), C.data(), m, k, n, false);
        benchmark::DoNotOptimize(C.data());
    }
    state.SetItemsProcessed(state.iterations() * int64_t(m) * k * n);
}

void bm_nearest_serial(benchmark::State& state) {
    const int P = static_cast<int>(state.range(0));
    const int N = 64, C = 16;
    const auto Q = random_block(int64_t(P) * C, 3);
    const auto Z = random_block(int64_t(N) * C, 4);
    std::vector<int32_t> idx(P);
    for (auto _ : state) {
        nearest_code_serial(Q.data(), Z.data(), idx.data(), P, N, C);
        benchmark::DoNotOptimize(idx.data());
    }
    state.SetItemsProcessed(state.iterations() * int64_t(P) * N);
}

void bm_nearest_omp(benchmark::State& state) {
    const int P = static_cast<int>(state.range(0));
    const int N = 64, C = 16;
    const auto Q = random_block(int64_t(P) * C, 3);
    const auto Z = random_block(int64_t(N) * C, 4);
    std::vector<int32_t> idx(P);
    for (auto _ : state) {
        nearest_code_omp(Q.data(), Z.data(), idx.data(), P, N, C);
        benchmark::DoNotOptimize(idx.data());
    }
    state.SetItemsProcessed(state.iterations() * int64_t(P) * N);
}

} // namespace

BENCHMARK(bm_matmul_serial)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_matmul_omp)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_nearest_serial)->Arg(256)->Arg(1024);
BENCHMARK(bm_nearest_omp)->Arg(256)->Arg(1024);

BENCHMARK_MAIN();
