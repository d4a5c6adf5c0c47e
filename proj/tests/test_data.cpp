// Synthetic data and frozen teacher tests: determinism, scene invariants,
// the latent-recoverability regression oracle, and teacher immutability.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "hiergen/container.hpp"
#include "hiergen/rng.hpp"
#include "hiergen/synth.hpp"
#include "hiergen/teacher.hpp"

using namespace hiergen;

namespace {

// solves (G + lambda I) W = B for SPD G via Cholesky, G: [n,n], B: [n,m]
std::vector<double> cholesky_solve(std::vector<double> G, std::vector<double> B, int n, int m,
                                   double lambda) {
    for (int i = 0; i < n; ++i) G[size_t(i) * n + i] += lambda;
    // in-place lower factor
    for (int j = 0; j < n; ++j) {
        double d = G[size_t(j) * n + j];
        for (int k = 0; k < j; ++k) d -= G[size_t(j) * n + k] * G[size_t(j) * n + k];
        REQUIRE(d > 0.0);
        d = std::sqrt(d);
        G[size_t(j) * n + j] = d;
        for (int i = j + 1; i < n; ++i) {
            double s = G[size_t(i) * n + j];
            for (int k = 0; k < j; ++k) s -= G[size_t(i) * n + k] * G[size_t(j) * n + k];
            G[size_t(i) * n + j] = s / d;
        }
    }
    // forward then back substitution for every column of B
    for (int c = 0; c < m; ++c) {
        for (int i = 0; i < n; ++i) {
            double s = B[size_t(i) * m + c];
            for (int k = 0; k < i; ++k) s -= G[size_t(i) * n + k] * B[size_t(k) * m + c];
            B[size_t(i) * m + c] = s / G[size_t(i) * n + i];
        }
        for (int i = n - 1; i >= 0; --i) {
            double s = B[size_t(i) * m + c];
            for (int k = i + 1; k < n; ++k) s -= G[size_t(k) * n + i] * B[size_t(k) * m + c];
            B[size_t(i) * m + c] = s / G[size_t(i) * n + i];
        }
    }
    return B;
}

} // namespace

TEST_CASE("same seed gives a byte-identical dataset, other seeds differ") {
    dataset a = synth_generate(24, 99);
    dataset b = synth_generate(24, 99);
    CHECK(a.signals == b.signals);
    CHECK(a.images == b.images);
    CHECK(a.labels == b.labels);

    dataset c = synth_generate(24, 100);
    CHECK(a.signals != c.signals);
}

TEST_CASE("dataset container round trip and entry names") {
    dataset d = synth_generate(6, 5);
    container c = dataset_to_container(d);
    CHECK(c.find("signals") != nullptr);
    CHECK(c.find("images") != nullptr);
    CHECK(c.find("labels") != nullptr);
    CHECK(c.find("meta.seed") != nullptr);

    dataset back = dataset_from_container(c);
    CHECK(back.count == d.count);
    CHECK(back.seed == d.seed);
    CHECK(back.signals == d.signals);
    CHECK(back.images == d.images);
    CHECK(back.labels == d.labels);
}

TEST_CASE("generated values live in their domains") {
    dataset d = synth_generate(32, 3);
    for (real v : d.images) {
        CHECK(v >= real(0));
        CHECK(v <= real(1));
    }
    for (int32_t l : d.labels) {
        CHECK(l >= 0);
        CHECK(l < k_label_count);
    }
    for (real v : d.signals) CHECK(std::isfinite(double(v)));
    CHECK_THROWS_AS(synth_generate(0, 1), config_error&);
}

TEST_CASE("sigma zero makes the signal an exact function of the scene") {
    rng r(41);
    synthetic_scene s = sample_scene(r, 7);
    std::vector<real> z = s.latents();
    signal_mixer mixer(123);

    std::vector<real> x1(k_signal_dim), x2(k_signal_dim);
    rng n1(1), n2(999);  // noise streams must be inert at sigma = 0
    mixer.mix(z, n1, real(0), x1.data());
    mixer.mix(z, n2, real(0), x2.data());
    CHECK(x1 == x2);

    std::vector<real> noisy(k_signal_dim);
    rng n3(1);
    mixer.mix(z, n3, real(0.05), noisy.data());
    CHECK(x1 != noisy);
}

TEST_CASE("scene sampling respects label domain and canvas bounds") {
    rng r(17);
    CHECK_THROWS_AS(sample_scene(r, -1), data_error&);
    CHECK_THROWS_AS(sample_scene(r, k_label_count), data_error&);

    // objects stay inside the canvas, so border pixels are background
    for (int trial = 0; trial < 24; ++trial) {
        synthetic_scene s = sample_scene(r, trial % k_label_count);
        CHECK(s.count >= 1);
        CHECK(s.count <= k_max_objects);
        std::vector<real> img(size_t(k_canvas) * k_canvas * 3);
        render_scene(s, img.data());
        for (int i = 0; i < k_canvas; ++i) {
            for (int ch = 0; ch < 3; ++ch) {
                const real top = img[(size_t(0) * k_canvas + i) * 3 + ch];
                const real left = img[(size_t(i) * k_canvas + 0) * 3 + ch];
                CHECK(std::abs(double(top - s.bg[ch])) < 0.05);
                CHECK(std::abs(double(left - s.bg[ch])) < 0.05);
            }
        }
    }
}

TEST_CASE("linear regression recovers scene latents from the signal") {
    constexpr int n = 1024;
    constexpr int V = k_signal_dim;
    constexpr int L = k_latent_dim;
    signal_mixer mixer(derive_seed(123, 999));

    std::vector<double> X(size_t(n) * V), Z(size_t(n) * L);
    std::vector<real> x(V);
    for (int i = 0; i < n; ++i) {
        rng r(derive_seed(123, uint64_t(i)));
        synthetic_scene s = sample_scene(r, i % k_label_count);
        std::vector<real> z = s.latents();
        rng noise(derive_seed(123, uint64_t(5000 + i)));
        mixer.mix(z, noise, real(0.05), x.data());
        for (int j = 0; j < V; ++j) X[size_t(i) * V + j] = double(x[j]);
        for (int j = 0; j < L; ++j) Z[size_t(i) * L + j] = double(z[j]);
    }

    // center both sides, then solve the normal equations
    for (int j = 0; j < V; ++j) {
        double m = 0;
        for (int i = 0; i < n; ++i) m += X[size_t(i) * V + j];
        m /= n;
        for (int i = 0; i < n; ++i) X[size_t(i) * V + j] -= m;
    }
    double ss_tot = 0;
    for (int j = 0; j < L; ++j) {
        double m = 0;
        for (int i = 0; i < n; ++i) m += Z[size_t(i) * L + j];
        m /= n;
        for (int i = 0; i < n; ++i) {
            Z[size_t(i) * L + j] -= m;
            ss_tot += Z[size_t(i) * L + j] * Z[size_t(i) * L + j];
        }
    }

    std::vector<double> G(size_t(V) * V, 0.0), B(size_t(V) * L, 0.0);
    for (int i = 0; i < n; ++i) {
        const double* xi = &X[size_t(i) * V];
        const double* zi = &Z[size_t(i) * L];
        for (int a = 0; a < V; ++a) {
            for (int b = a; b < V; ++b) G[size_t(a) * V + b] += xi[a] * xi[b];
            for (int b = 0; b < L; ++b) B[size_t(a) * L + b] += xi[a] * zi[b];
        }
    }
    for (int a = 0; a < V; ++a)
        for (int b = 0; b < a; ++b) G[size_t(a) * V + b] = G[size_t(b) * V + a];

    double tr = 0;
    for (int a = 0; a < V; ++a) tr += G[size_t(a) * V + a];
    std::vector<double> W = cholesky_solve(std::move(G), std::move(B), V, L, 1e-10 * tr);

    double ss_res = 0;
    for (int i = 0; i < n; ++i) {
        for (int b = 0; b < L; ++b) {
            double pred = 0;
            for (int a = 0; a < V; ++a) pred += X[size_t(i) * V + a] * W[size_t(a) * L + b];
            const double e = Z[size_t(i) * L + b] - pred;
            ss_res += e * e;
        }
    }
    const double r2 = 1.0 - ss_res / ss_tot;
    INFO("R^2 = " << r2);
    CHECK(r2 > 0.9);
}

TEST_CASE("teacher forward is pure and non-degenerate") {
    teacher_model tm = build_teacher();
    dataset d = synth_generate(16, 8);

    teacher_features f1 = teacher_vision(tm, d.image_tensor(0));
    teacher_features f2 = teacher_vision(tm, d.image_tensor(0));
    REQUIRE(f1.layers.size() == size_t(k_teacher_depth));
    for (size_t l = 0; l < f1.layers.size(); ++l) CHECK(f1.layers[l]->v == f2.layers[l]->v);
    CHECK(f1.embed->v == f2.embed->v);

    double norm = 0;
    for (real v : f1.embed->v) norm += double(v) * double(v);
    CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-5);

    // distinct images spread out in feature space
    std::vector<teacher_features> feats;
    for (int i = 0; i < 16; ++i) feats.push_back(teacher_vision(tm, d.image_tensor(i)));
    double mean_dist = 0;
    int pairs = 0;
    for (int i = 0; i < 16; ++i) {
        for (int j = i + 1; j < 16; ++j) {
            double dist = 0;
            const auto& a = feats[i].layers.back()->v;
            const auto& b = feats[j].layers.back()->v;
            for (size_t p = 0; p < a.size(); ++p) {
                const double diff = double(a[p]) - double(b[p]);
                dist += diff * diff;
            }
            mean_dist += std::sqrt(dist);
            ++pairs;
        }
    }
    mean_dist /= pairs;
    CHECK(mean_dist > 0.0);
}

TEST_CASE("teacher text embeddings are unit, distinct and stable") {
    teacher_model tm = build_teacher();
    CHECK_THROWS_AS(teacher_text(tm, -1), data_error&);
    CHECK_THROWS_AS(teacher_text(tm, k_label_count), data_error&);

    std::vector<tptr> rows;
    for (int l = 0; l < k_label_count; ++l) rows.push_back(teacher_text(tm, l));
    tptr again = teacher_text(tm, 3);
    CHECK(rows[3]->v == again->v);

    for (int i = 0; i < k_label_count; ++i) {
        double n = 0;
        for (real v : rows[i]->v) n += double(v) * double(v);
        CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-5);
        for (int j = i + 1; j < k_label_count; ++j) {
            double dot = 0;
            for (int p = 0; p < k_embed_dim; ++p)
                dot += double(rows[i]->v[p]) * double(rows[j]->v[p]);
            CHECK(std::abs(dot) < 0.9);
        }
    }
}

TEST_CASE("teacher weights are immutable across uses and builds") {
    teacher_model tm = build_teacher();
    const uint64_t h0 = tm.content_hash;
    CHECK(teacher_hash(tm) == h0);

    dataset d = synth_generate(4, 21);
    for (int i = 0; i < 4; ++i) teacher_vision(tm, d.image_tensor(i));
    teacher_text(tm, 5);
    CHECK(teacher_hash(tm) == h0);

    teacher_model tm2 = build_teacher();
    CHECK(teacher_hash(tm2) == h0);
}
