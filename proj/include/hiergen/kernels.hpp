#pragma once

// Hot inner loops. Each kernel has a serial reference implementation and an
// OpenMP variant; the *_auto dispatcher picks the parallel path for large
// problems when not already inside a parallel region. Parallel variants
// partition work by output row, so every output element is reduced in a
// fixed serial order and results are identical to the reference bit for bit
// regardless of thread count.

#include <atomic>
#include <cstdint>

#include "hiergen/tensor.hpp"

namespace hiergen {

// C[m,n] = A[m,k] * B[k,n], or += when accumulate is set
void matmul_nn_serial(const real* A, const real* B, real* C, int m, int k, int n, bool accumulate);
void matmul_nn_omp(const real* A, const real* B, real* C, int m, int k, int n, bool accumulate);
void matmul_nn_auto(const real* A, const real* B, real* C, int m, int k, int n, bool accumulate);

// C[m,n] = A[m,k] * B[n,k]^T
void matmul_nt_serial(const real* A, const real* B, real* C, int m, int k, int n, bool accumulate);
void matmul_nt_omp(const real* A, const real* B, real* C, int m, int k, int n, bool accumulate);
void matmul_nt_auto(const real* A, const real* B, real* C, int m, int k, int n, bool accumulate);

// C[m,n] = A[k,m]^T * B[k,n]
void matmul_tn_serial(const real* A, const real* B, real* C, int m, int k, int n, bool accumulate);
void matmul_tn_omp(const real* A, const real* B, real* C, int m, int k, int n, bool accumulate);
void matmul_tn_auto(const real* A, const real* B, real* C, int m, int k, int n, bool accumulate);

// out_idx[p] = argmin_n ||Q[p,:] - Z[n,:]||_2, ties resolved to the lowest index
void nearest_code_serial(const real* Q, const real* Z, int32_t* out_idx, int P, int N, int C);
void nearest_code_omp(const real* Q, const real* Z, int32_t* out_idx, int P, int N, int C);
void nearest_code_auto(const real* Q, const real* Z, int32_t* out_idx, int P, int N, int C);

// attention-pair instrumentation: masked_attention adds the number of
// (query, key) scores it computes when counting is enabled
extern std::atomic<int64_t> g_attention_pairs;
extern std::atomic<bool> g_count_attention_pairs;

void reset_attention_pair_counter();
int64_t attention_pair_count();

struct attention_pair_scope {
    attention_pair_scope() {
        reset_attention_pair_counter();
        g_count_attention_pairs = true;
    }
    ~attention_pair_scope() { g_count_attention_pairs = false; }
};

} // namespace hiergen
