// Tokenizer tests: schedule validation, nearest-code hand cases, the
// residual recursion against a brute-force oracle, the telescoping identity,
// straight-through gradients checked branch by branch, and a short training
// trend.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "hiergen/autodiff.hpp"
#include "hiergen/kernels.hpp"
#include "hiergen/optim.hpp"
#include "hiergen/rng.hpp"
#include "hiergen/synth.hpp"
#include "hiergen/tokenizer.hpp"

using namespace hiergen;

namespace {

tptr random_map(rng& r, std::vector<int> shape, real s) {
    tptr t = make_tensor(std::move(shape));
    for (real& v : t->v) v = static_cast<real>(r.gaussian() * s);
    return t;
}

double pos_norm(const tptr& f, int p, int C) {
    double n = 0;
    for (int c = 0; c < C; ++c) n += double(f->v[p * C + c]) * double(f->v[p * C + c]);
    return std::sqrt(n);
}

} // namespace

TEST_CASE("schedule parsing and validation") {
    scale_schedule s = parse_schedule("1,2,4,8,16");
    CHECK(s.levels() == 5);
    CHECK(s.tokens_at(0) == 1);
    CHECK(s.tokens_at(4) == 256);
    CHECK(s.total_tokens() == 341);
    CHECK(s.final_side() == std::pair<int, int>(16, 16));
    CHECK(default_schedule().sides == s.sides);

    CHECK_THROWS_AS(parse_schedule(""), config_error&);
    CHECK_THROWS_AS(parse_schedule("4,2"), config_error&);  // decreasing
    CHECK_THROWS_AS(parse_schedule("2,2"), config_error&);  // not strictly increasing
    CHECK_THROWS_AS(parse_schedule("0,1"), config_error&);
    CHECK_THROWS_AS(parse_schedule("1,x"), config_error&);
}

TEST_CASE("encode shape, determinism and the zero-image hand check") {
    tokenizer_model t = build_tokenizer(11, default_schedule());
    graph g;
    g.recording = false;

    tptr img = zeros({k_canvas, k_canvas, 3});
    tptr f = encode_image(g, t, img);
    REQUIRE(f->shape == std::vector<int>({16, 16, k_code_dim}));
    // biases are zero at build, so a zero image maps to the zero feature map
    for (real v : f->v) CHECK(v == real(0));

    rng r(3);
    tptr img2 = random_map(r, {k_canvas, k_canvas, 3}, real(0.3));
    tptr fa = encode_image(g, t, img2);
    tptr fb = encode_image(g, t, img2);
    CHECK(fa->v == fb->v);

    tptr odd = zeros({31, 32, 3});
    CHECK_THROWS_AS(encode_image(g, t, odd), config_error&);
    CHECK_THROWS_AS(encode_image(g, t, zeros({32, 32})), config_error&);
}

TEST_CASE("nearest code hand cases") {
    // Z = {(0,0),(1,0)}
    const real Z[4] = {0, 0, 1, 0};
    int32_t idx = -1;

    const real v1[2] = {real(0.9), real(0.1)};
    nearest_code_serial(v1, Z, &idx, 1, 2, 2);
    CHECK(idx == 1);

    const real v2[2] = {real(0.5), 0};  // equidistant, lowest index wins
    nearest_code_serial(v2, Z, &idx, 1, 2, 2);
    CHECK(idx == 0);

    rng r(5);
    tptr table = random_map(r, {5, 4}, real(1));
    nearest_code_serial(table->v.data() + 3 * 4, table->v.data(), &idx, 1, 5, 4);
    CHECK(idx == 3);  // exact row match, distance 0
}

TEST_CASE("two-scale quantization matches a brute-force oracle") {
    const int C = 3;
    scale_schedule sched;
    sched.sides = {{1, 1}, {2, 2}};
    rng r(17);

    for (int trial = 0; trial < 20; ++trial) {
        tptr f = random_map(r, {2, 2, C}, real(1));
        tptr Z = random_map(r, {2, C}, real(1));
        quantize_result q = quantize_multiscale(f, sched, Z);
        REQUIRE(q.pyramid.maps.size() == 2);
        REQUIRE(q.pyramid.maps[0].size() == 1);
        REQUIRE(q.pyramid.maps[1].size() == 4);

        // scale 1: area mean of the 4 positions, nearest of the 2 codes
        double best_d = 0;
        int best = -1;
        std::vector<double> mean(C, 0.0);
        for (int p = 0; p < 4; ++p)
            for (int c = 0; c < C; ++c) mean[c] += double(f->v[p * C + c]) / 4.0;
        for (int n = 0; n < 2; ++n) {
            double d = 0;
            for (int c = 0; c < C; ++c) {
                const double diff = mean[c] - double(Z->v[n * C + c]);
                d += diff * diff;
            }
            if (best < 0 || d < best_d) {
                best_d = d;
                best = n;
            }
        }
        CHECK(q.pyramid.maps[0][0] == best);

        // scale 2: residual after subtracting the constant upsample, then
        // per-position nearest code; the final residual telescopes
        for (int p = 0; p < 4; ++p) {
            std::vector<double> res(C);
            for (int c = 0; c < C; ++c)
                res[c] = double(f->v[p * C + c]) - double(Z->v[best * C + c]);
            int b2 = -1;
            double bd2 = 0;
            for (int n = 0; n < 2; ++n) {
                double d = 0;
                for (int c = 0; c < C; ++c) {
                    const double diff = res[c] - double(Z->v[n * C + c]);
                    d += diff * diff;
                }
                if (b2 < 0 || d < bd2) {
                    bd2 = d;
                    b2 = n;
                }
            }
            CHECK(q.pyramid.maps[1][p] == b2);
            for (int c = 0; c < C; ++c) {
                const double expect = res[c] - double(Z->v[b2 * C + c]);
                CHECK(std::abs(double(q.final_residual->v[p * C + c]) - expect) < 1e-5);
            }
        }
    }
}

TEST_CASE("single full-resolution scale with an exhaustive codebook is exact") {
    const int C = 3;
    scale_schedule sched;
    sched.sides = {{2, 2}};
    rng r(29);
    tptr Z = random_map(r, {4, C}, real(1));
    tptr f = make_tensor({2, 2, C});
    const int perm[4] = {2, 0, 3, 1};
    for (int p = 0; p < 4; ++p)
        for (int c = 0; c < C; ++c) f->v[p * C + c] = Z->v[perm[p] * C + c];

    quantize_result q = quantize_multiscale(f, sched, Z);
    for (int p = 0; p < 4; ++p) CHECK(q.pyramid.maps[0][p] == perm[p]);
    for (real v : q.final_residual->v) CHECK(v == real(0));
}

TEST_CASE("residual norm is non-increasing with the zero code available") {
    // two successive single-scale full-resolution passes realize the
    // fixed-resolution recursion without resampling
    const int C = 3;
    scale_schedule sched;
    sched.sides = {{4, 4}};
    rng r(31);
    tptr Z = random_map(r, {6, C}, real(0.8));
    for (int c = 0; c < C; ++c) Z->v[c] = 0;  // row 0 is the zero code

    tptr f = random_map(r, {4, 4, C}, real(1));
    quantize_result q1 = quantize_multiscale(f, sched, Z);
    quantize_result q2 = quantize_multiscale(q1.final_residual, sched, Z);
    for (int p = 0; p < 16; ++p) {
        CHECK(pos_norm(q1.final_residual, p, C) <= pos_norm(f, p, C) + 1e-6);
        CHECK(pos_norm(q2.final_residual, p, C) <= pos_norm(q1.final_residual, p, C) + 1e-6);
    }
}

TEST_CASE("dequantize identities and index validation") {
    const int C = 3;
    rng r(37);
    graph g;
    g.recording = false;

    scale_schedule one;
    one.sides = {{2, 2}};
    tptr Z = random_map(r, {4, C}, real(1));
    token_pyramid R;
    R.maps = {{3, 1, 0, 2}};
    tptr out = dequantize(g, R, Z, one);
    for (int p = 0; p < 4; ++p)
        for (int c = 0; c < C; ++c)
            CHECK(out->v[p * C + c] == Z->v[R.maps[0][size_t(p)] * C + c]);

    // all tokens on a zero code sum to the zero map
    for (int c = 0; c < C; ++c) Z->v[c] = 0;
    token_pyramid R0;
    R0.maps = {{0, 0, 0, 0}};
    tptr zero_map = dequantize(g, R0, Z, one);
    for (real v : zero_map->v) CHECK(v == real(0));

    token_pyramid bad;
    bad.maps = {{4, 0, 0, 0}};
    CHECK_THROWS_AS(dequantize(g, bad, Z, one), data_error&);
    token_pyramid short_map;
    short_map.maps = {{0, 0}};
    CHECK_THROWS_AS(dequantize(g, short_map, Z, one), config_error&);
    token_pyramid wrong_depth;
    wrong_depth.maps = {{0}, {0, 0, 0, 0}};
    CHECK_THROWS_AS(dequantize(g, wrong_depth, Z, one), config_error&);
}

TEST_CASE("dequantize plus final residual reproduces the feature map") {
    rng r(41);
    graph g;
    g.recording = false;
    scale_schedule sched = default_schedule();
    tptr f = random_map(r, {16, 16, k_code_dim}, real(1));
    tptr Z = random_map(r, {8, k_code_dim}, real(0.7));

    quantize_result q = quantize_multiscale(f, sched, Z);
    for (const auto& m : q.pyramid.maps)
        for (int32_t i : m) {
            CHECK(i >= 0);
            CHECK(i < 8);
        }
    CHECK(q.pyramid.total() == 341);

    tptr fhat = dequantize(g, q.pyramid, Z, sched);
    for (size_t p = 0; p < f->v.size(); ++p)
        CHECK(std::abs(double(fhat->v[p] + q.final_residual->v[p] - f->v[p])) < 1e-5);

    // purity: identical inputs, identical outputs
    quantize_result q2 = quantize_multiscale(f, sched, Z);
    CHECK(q2.pyramid.maps == q.pyramid.maps);
    CHECK(q2.final_residual->v == q.final_residual->v);
}

TEST_CASE("decode stays in range and is deterministic") {
    tokenizer_model t = build_tokenizer(43, default_schedule());
    rng r(44);
    graph g;
    g.recording = false;
    tptr fhat = random_map(r, {16, 16, k_code_dim}, real(2));
    tptr img1 = decode_image(g, t, fhat);
    tptr img2 = decode_image(g, t, fhat);
    REQUIRE(img1->shape == std::vector<int>({32, 32, 3}));
    CHECK(img1->v == img2->v);
    for (real v : img1->v) {
        CHECK(v >= real(0));
        CHECK(v <= real(1));
    }
    CHECK_THROWS_AS(decode_image(g, t, zeros({16, 16, 4})), config_error&);
}

#ifdef HIERGEN_REAL_DOUBLE
constexpr double k_gc_h = 1e-4, k_gc_tol = 1e-5;
#else
constexpr double k_gc_h = 1e-3, k_gc_tol = 1e-2;
#endif

TEST_CASE("straight-through gradients check out branch by branch") {
    scale_schedule small;
    small.sides = {{1, 1}, {2, 2}};
    rng r(47);
    tptr img = random_map(r, {4, 4, 3}, real(0.4));
    for (real& v : img->v) v = real(0.5) + v / 4;  // keep inside (0,1)

    // autoencoder branch without quantization
    {
        tokenizer_model t = build_tokenizer(48, small);
        auto loss = [&](graph& g) {
            return mse(g, decode_image(g, t, encode_image(g, t, img)), img);
        };
        grad_check_report rep = grad_check(loss, t.params, 24, k_gc_h, 49);
        INFO("autoencoder branch max rel err " << rep.max_rel_err);
        CHECK(rep.max_rel_err < k_gc_tol);
    }

    // codebook branch: pyramid held fixed, loss smooth in Z
    {
        tptr f = random_map(r, {2, 2, k_code_dim}, real(1));
        param_store ps;
        tptr Z = ps.add("codebook", random_map(r, {4, k_code_dim}, real(0.8)), false);
        token_pyramid R = quantize_multiscale(f, small, Z).pyramid;
        auto loss = [&](graph& g) { return mse(g, f, dequantize(g, R, Z, small)); };
        grad_check_report rep = grad_check(loss, ps, 24, k_gc_h, 50);
        INFO("codebook branch max rel err " << rep.max_rel_err);
        CHECK(rep.max_rel_err < k_gc_tol);
    }

    // commitment branch: encoder pulled toward a fixed target map
    {
        tokenizer_model t = build_tokenizer(51, small);
        tptr target = random_map(r, {2, 2, k_code_dim}, real(0.5));
        auto loss = [&](graph& g) { return mse(g, encode_image(g, t, img), target); };
        grad_check_report rep = grad_check(loss, t.params, 24, k_gc_h, 52);
        INFO("commitment branch max rel err " << rep.max_rel_err);
        CHECK(rep.max_rel_err < k_gc_tol);
    }
}

TEST_CASE("training loss trends down on a small batch") {
    dataset d = synth_generate(4, 53);
    tokenizer_model t = build_tokenizer(54, default_schedule());
    std::vector<tptr> batch;
    for (int i = 0; i < 4; ++i) batch.push_back(d.image_tensor(i));

    const int steps = 200;
    std::vector<real> losses;
    for (int s = 0; s < steps; ++s) {
        adamw_config cfg;
        cfg.lr = cosine_warmup_lr(s, 10, steps, real(3e-3));
        tokenizer_losses L = tokenizer_train_step(t, batch, cfg);
        CHECK(std::isfinite(double(L.total)));
        losses.push_back(L.total);
    }
    double head = 0, tail = 0;
    for (int s = 0; s < 50; ++s) {
        head += double(losses[size_t(s)]);
        tail += double(losses[size_t(steps - 50 + s)]);
    }
    INFO("smoothed loss " << head / 50 << " -> " << tail / 50);
    CHECK(tail < head * 0.7);

    CHECK_THROWS_AS(tokenizer_train_step(t, {}, adamw_config{}), config_error&);
}

TEST_CASE("tokenizer container round trip preserves behavior") {
    tokenizer_model t = build_tokenizer(57, default_schedule(), 32);
    dataset d = synth_generate(2, 58);
    tptr before = reconstruct_image(t, d.image_tensor(0));

    container c = tokenizer_to_container(t);
    tokenizer_model back = tokenizer_from_container(c);
    CHECK(back.schedule.sides == t.schedule.sides);
    CHECK(back.n_codes == 32);
    CHECK(back.params.values_hash() == t.params.values_hash());

    tptr after = reconstruct_image(back, d.image_tensor(0));
    CHECK(before->v == after->v);
}
