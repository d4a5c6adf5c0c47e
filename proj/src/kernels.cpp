#include "hiergen/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hiergen {

std::atomic<int64_t> g_attention_pairs{0};
std::atomic<bool> g_count_attention_pairs{false};

void reset_attention_pair_counter() { g_attention_pairs = 0; }
int64_t attention_pair_count() { return g_attention_pairs.load(); }

namespace {

inline bool inside_parallel() {
#ifdef _OPENMP
    return omp_in_parallel() != 0;
#else
    return false;
#endif
}

// one output row of C = A*B; row-major B keeps the inner loop contiguous
inline void nn_row(const real* a, const real* B, real* c, int k, int n, bool accumulate) {
    if (!accumulate)
        for (int j = 0; j < n; ++j) c[j] = real(0);
    for (int p = 0; p < k; ++p) {
        const real ap = a[p];
        if (ap == real(0)) continue;
        const real* b = B + static_cast<int64_t>(p) * n;
        for (int j = 0; j < n; ++j) c[j] += ap * b[j];
    }
}

inline void nt_row(const real* a, const real* B, real* c, int k, int n, bool accumulate) {
    for (int j = 0; j < n; ++j) {
        const real* b = B + static_cast<int64_t>(j) * k;
        real acc = accumulate ? c[j] : real(0);
        for (int p = 0; p < k; ++p) acc += a[p] * b[p];
        c[j] = acc;
    }
}

inline void tn_row(const real* A, const real* B, real* c, int i, int m, int k, int n,
                   bool accumulate) {
    if (!accumulate)
        for (int j = 0; j < n; ++j) c[j] = real(0);
    for (int p = 0; p < k; ++p) {
        const real ap = A[static_cast<int64_t>(p) * m + i];
        if (ap == real(0)) continue;
        const real* b = B + static_cast<int64_t>(p) * n;
        for (int j = 0; j < n; ++j) c[j] += ap * b[j];
    }
}

inline int32_t nearest_one(const real* q, const real* Z, int N, int C) {
    int32_t best = 0;
    real best_d = real(0);
    for (int c = 0; c < C; ++c) {
        real d = q[c] - Z[c];
        best_d += d * d;
    }
    for (int n = 1; n < N; ++n) {
        const real* z = Z + static_cast<int64_t>(n) * C;
        real d2 = real(0);
        for (int c = 0; c < C; ++c) {
            real d = q[c] - z[c];
            d2 += d * d;
        }
        if (d2 < best_d) {  // strict: ties keep the lowest index
            best_d = d2;
            best = n;
        }
    }
    return best;
}

constexpr int64_t k_parallel_flops = 1 << 16;

} // namespace

void matmul_nn_serial(const real* A, const real* B, real* C, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i)
        nn_row(A + static_cast<int64_t>(i) * k, B, C + static_cast<int64_t>(i) * n, k, n, accumulate);
}

void matmul_nn_omp(const real* A, const real* B, real* C, int m, int k, int n, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i)
        nn_row(A + static_cast<int64_t>(i) * k, B, C + static_cast<int64_t>(i) * n, k, n, accumulate);
}

void matmul_nn_auto(const real* A, const real* B, real* C, int m, int k, int n, bool accumulate) {
    if (m > 1 && !inside_parallel() && static_cast<int64_t>(m) * k * n >= k_parallel_flops)
        matmul_nn_omp(A, B, C, m, k, n, accumulate);
    else
        matmul_nn_serial(A, B, C, m, k, n, accumulate);
}

void matmul_nt_serial(const real* A, const real* B, real* C, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i)
        nt_row(A + static_cast<int64_t>(i) * k, B, C + static_cast<int64_t>(i) * n, k, n, accumulate);
}

void matmul_nt_omp(const real* A, const real* B, real* C, int m, int k, int n, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i)
        nt_row(A + static_cast<int64_t>(i) * k, B, C + static_cast<int64_t>(i) * n, k, n, accumulate);
}

void matmul_nt_auto(const real* A, const real* B, real* C, int m, int k, int n, bool accumulate) {
    if (m > 1 && !inside_parallel() && static_cast<int64_t>(m) * k * n >= k_parallel_flops)
        matmul_nt_omp(A, B, C, m, k, n, accumulate);
    else
        matmul_nt_serial(A, B, C, m, k, n, accumulate);
}

void matmul_tn_serial(const real* A, const real* B, real* C, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i)
        tn_row(A, B, C + static_cast<int64_t>(i) * n, i, m, k, n, accumulate);
}

void matmul_tn_omp(const real* A, const real* B, real* C, int m, int k, int n, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i)
        tn_row(A, B, C + static_cast<int64_t>(i) * n, i, m, k, n, accumulate);
}

void matmul_tn_auto(const real* A, const real* B, real* C, int m, int k, int n, bool accumulate) {
    if (m > 1 && !inside_parallel() && static_cast<int64_t>(m) * k * n >= k_parallel_flops)
        matmul_tn_omp(A, B, C, m, k, n, accumulate);
    else
        matmul_tn_serial(A, B, C, m, k, n, accumulate);
}

void nearest_code_serial(const real* Q, const real* Z, int32_t* out_idx, int P, int N, int C) {
    for (int p = 0; p < P; ++p)
        out_idx[p] = nearest_one(Q + static_cast<int64_t>(p) * C, Z, N, C);
}

void nearest_code_omp(const real* Q, const real* Z, int32_t* out_idx, int P, int N, int C) {
#pragma omp parallel for schedule(static)
    for (int p = 0; p < P; ++p)
        out_idx[p] = nearest_one(Q + static_cast<int64_t>(p) * C, Z, N, C);
}

void nearest_code_auto(const real* Q, const real* Z, int32_t* out_idx, int P, int N, int C) {
    if (P > 1 && !inside_parallel() && static_cast<int64_t>(P) * N * C >= k_parallel_flops)
        nearest_code_omp(Q, Z, out_idx, P, N, C);
    else
        nearest_code_serial(Q, Z, out_idx, P, N, C);
}

} // namespace hiergen
