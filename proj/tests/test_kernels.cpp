#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cstring>
#include <vector>

#include "hiergen/kernels.hpp"
#include "hiergen/rng.hpp"

using namespace hiergen;

namespace {

std::vector<real> random_vec(rng& r, int n, real s) {
    std::vector<real> v(n);
    for (auto& x : v) x = r.gaussian() * s;
    return v;
}

// reference triple loop, double accumulator
std::vector<double> ref_nn(const std::vector<real>& A, const std::vector<real>& B, int m, int k,
                           int n) {
    std::vector<double> C(static_cast<size_t>(m) * n, 0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0;
            for (int p = 0; p < k; ++p) acc += double(A[i * k + p]) * double(B[p * n + j]);
            C[i * n + j] = acc;
        }
    return C;
}

} // namespace

TEST_CASE("matmul variants match a reference triple loop") {
    rng r(42);
    const int m = 7, k = 13, n = 5;
    auto A = random_vec(r, m * k, real(1));
    auto B = random_vec(r, k * n, real(1));
    auto Bt = std::vector<real>(B.size());  // [n,k]
    for (int p = 0; p < k; ++p)
        for (int j = 0; j < n; ++j) Bt[j * k + p] = B[p * n + j];
    auto At = std::vector<real>(A.size());  // [k,m]
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) At[p * m + i] = A[i * k + p];

    auto ref = ref_nn(A, B, m, k, n);
    std::vector<real> C1(m * n), C2(m * n), C3(m * n);
    matmul_nn_serial(A.data(), B.data(), C1.data(), m, k, n, false);
    matmul_nt_serial(A.data(), Bt.data(), C2.data(), m, k, n, false);
    matmul_tn_serial(At.data(), B.data(), C3.data(), m, k, n, false);
    for (size_t i = 0; i < ref.size(); ++i) {
        CHECK(double(C1[i]) == doctest::Approx(ref[i]).epsilon(1e-5));
        CHECK(double(C2[i]) == doctest::Approx(ref[i]).epsilon(1e-5));
        CHECK(double(C3[i]) == doctest::Approx(ref[i]).epsilon(1e-5));
    }
}

TEST_CASE("accumulate adds onto existing output") {
    rng r(43);
    const int m = 3, k = 4, n = 2;
    auto A = random_vec(r, m * k, real(1));
    auto B = random_vec(r, k * n, real(1));
    std::vector<real> C(m * n, real(2));
    matmul_nn_serial(A.data(), B.data(), C.data(), m, k, n, true);
    auto ref = ref_nn(A, B, m, k, n);
    for (size_t i = 0; i < ref.size(); ++i)
        CHECK(double(C[i]) == doctest::Approx(ref[i] + 2.0).epsilon(1e-5));
}

TEST_CASE("parallel kernels are bitwise identical to serial") {
    rng r(44);
    const std::array<int, 3> cases[] = {{64, 33, 65}, {1, 100, 1}, {37, 1, 64}, {128, 64, 96}};
    for (auto dims : cases) {
        int m = dims[0], k = dims[1], n = dims[2];
        auto A = random_vec(r, m * k, real(1));
        auto B = random_vec(r, k * n, real(1));
        std::vector<real> Cs(m * n), Cp(m * n);
        matmul_nn_serial(A.data(), B.data(), Cs.data(), m, k, n, false);
        matmul_nn_omp(A.data(), B.data(), Cp.data(), m, k, n, false);
        CHECK(std::memcmp(Cs.data(), Cp.data(), Cs.size() * sizeof(real)) == 0);

        auto Bt = random_vec(r, n * k, real(1));
        matmul_nt_serial(A.data(), Bt.data(), Cs.data(), m, k, n, false);
        matmul_nt_omp(A.data(), Bt.data(), Cp.data(), m, k, n, false);
        CHECK(std::memcmp(Cs.data(), Cp.data(), Cs.size() * sizeof(real)) == 0);

        auto At = random_vec(r, k * m, real(1));
        matmul_tn_serial(At.data(), B.data(), Cs.data(), m, k, n, false);
        matmul_tn_omp(At.data(), B.data(), Cp.data(), m, k, n, false);
        CHECK(std::memcmp(Cs.data(), Cp.data(), Cs.size() * sizeof(real)) == 0);
    }
}

TEST_CASE("auto dispatch matches serial results exactly") {
    rng r(45);
    const int m = 80, k = 70, n = 60;  // above the parallel threshold
    auto A = random_vec(r, m * k, real(1));
    auto B = random_vec(r, k * n, real(1));
    std::vector<real> Cs(m * n), Ca(m * n);
    matmul_nn_serial(A.data(), B.data(), Cs.data(), m, k, n, false);
    matmul_nn_auto(A.data(), B.data(), Ca.data(), m, k, n, false);
    CHECK(std::memcmp(Cs.data(), Ca.data(), Cs.size() * sizeof(real)) == 0);
}

TEST_CASE("nearest code search matches brute scan and breaks ties low") {
    rng r(46);
    const int P = 29, N = 17, C = 6;
    auto Q = random_vec(r, P * C, real(1));
    auto Z = random_vec(r, N * C, real(1));
    std::vector<int32_t> idx_s(P), idx_p(P);
    nearest_code_serial(Q.data(), Z.data(), idx_s.data(), P, N, C);
    nearest_code_omp(Q.data(), Z.data(), idx_p.data(), P, N, C);
    CHECK(idx_s == idx_p);
    for (int p = 0; p < P; ++p) {
        double best = 1e300;
        int best_i = -1;
        for (int i = 0; i < N; ++i) {
            double dist = 0;
            for (int c = 0; c < C; ++c) {
                double diff = double(Q[p * C + c]) - double(Z[i * C + c]);
                dist += diff * diff;
            }
            if (dist < best) {
                best = dist;
                best_i = i;
            }
        }
        CHECK(idx_s[p] == best_i);
    }

    // duplicate rows: the lower index must win
    std::vector<real> Zdup = {real(1), real(0), real(1), real(0), real(5), real(5)};
    std::vector<real> q = {real(0.9), real(0.1)};
    int32_t out = -1;
    nearest_code_serial(q.data(), Zdup.data(), &out, 1, 3, 2);
    CHECK(out == 0);
    nearest_code_omp(q.data(), Zdup.data(), &out, 1, 3, 2);
    CHECK(out == 0);
}

TEST_CASE("attention pair counter accumulates only inside a scope") {
    reset_attention_pair_counter();
    CHECK(attention_pair_count() == 0);
    {
        attention_pair_scope scope;
        // counting is driven by the attention layer; the raw counter API just
        // has to be monotone and scoped
        CHECK(attention_pair_count() == 0);
    }
}
