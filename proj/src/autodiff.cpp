#include "hiergen/autodiff.hpp"

#include <cmath>
#include <string>

#include "hiergen/kernels.hpp"

namespace hiergen {

namespace {

constexpr double k_norm_eps = 1e-6;

bool want_grad(const graph& g, std::initializer_list<const tptr*> ins) {
    if (!g.recording) return false;
    for (const tptr* t : ins)
        if (*t && (*t)->requires_grad) return true;
    return false;
}

tptr out_like(std::vector<int> shape, bool rec) {
    auto t = make_tensor(std::move(shape));
    t->requires_grad = rec;
    if (rec) t->ensure_grad();
    return t;
}

void prep(const tptr& t) {
    if (t && t->requires_grad) t->ensure_grad();
}

} // namespace

void graph::backward(const tptr& loss) {
    if (loss->numel() != 1) throw dim_error("backward: loss must be a scalar");
    loss->ensure_grad();
    loss->g[0] = real(1);
    for (auto it = tape.rbegin(); it != tape.rend(); ++it) (*it)();
}

tptr add(graph& g, const tptr& a, const tptr& b) {
    require_same_shape(*a, *b, "add");
    bool rec = want_grad(g, {&a, &b});
    auto out = out_like(a->shape, rec);
    for (int64_t i = 0; i < a->numel(); ++i) out->v[i] = a->v[i] + b->v[i];
    if (rec) {
        prep(a); prep(b);
        g.push([a, b, out] {
            const int64_t n = out->numel();
            if (a->requires_grad)
                for (int64_t i = 0; i < n; ++i) a->g[i] += out->g[i];
            if (b->requires_grad)
                for (int64_t i = 0; i < n; ++i) b->g[i] += out->g[i];
        });
    }
    return out;
}

tptr sub(graph& g, const tptr& a, const tptr& b) {
    require_same_shape(*a, *b, "sub");
    bool rec = want_grad(g, {&a, &b});
    auto out = out_like(a->shape, rec);
    for (int64_t i = 0; i < a->numel(); ++i) out->v[i] = a->v[i] - b->v[i];
    if (rec) {
        prep(a); prep(b);
        g.push([a, b, out] {
            const int64_t n = out->numel();
            if (a->requires_grad)
                for (int64_t i = 0; i < n; ++i) a->g[i] += out->g[i];
            if (b->requires_grad)
                for (int64_t i = 0; i < n; ++i) b->g[i] -= out->g[i];
        });
    }
    return out;
}

tptr mul(graph& g, const tptr& a, const tptr& b) {
    require_same_shape(*a, *b, "mul");
    bool rec = want_grad(g, {&a, &b});
    auto out = out_like(a->shape, rec);
    for (int64_t i = 0; i < a->numel(); ++i) out->v[i] = a->v[i] * b->v[i];
    if (rec) {
        prep(a); prep(b);
        g.push([a, b, out] {
            const int64_t n = out->numel();
            if (a->requires_grad)
                for (int64_t i = 0; i < n; ++i) a->g[i] += out->g[i] * b->v[i];
            if (b->requires_grad)
                for (int64_t i = 0; i < n; ++i) b->g[i] += out->g[i] * a->v[i];
        });
    }
    return out;
}

tptr scale(graph& g, const tptr& a, real c) {
    bool rec = want_grad(g, {&a});
    auto out = out_like(a->shape, rec);
    for (int64_t i = 0; i < a->numel(); ++i) out->v[i] = a->v[i] * c;
    if (rec) {
        prep(a);
        g.push([a, out, c] {
            for (int64_t i = 0; i < out->numel(); ++i) a->g[i] += out->g[i] * c;
        });
    }
    return out;
}

tptr add_row_broadcast(graph& g, const tptr& x, const tptr& row) {
    const int T = x->rows(), d = x->cols();
    if (row->numel() != d) throw dim_error("add_row_broadcast: row width mismatch");
    bool rec = want_grad(g, {&x, &row});
    auto out = out_like(x->shape, rec);
    for (int t = 0; t < T; ++t)
        for (int j = 0; j < d; ++j) out->v[t * d + j] = x->v[t * d + j] + row->v[j];
    if (rec) {
        prep(x); prep(row);
        g.push([x, row, out, T, d] {
            if (x->requires_grad)
                for (int64_t i = 0; i < out->numel(); ++i) x->g[i] += out->g[i];
            if (row->requires_grad)
                for (int t = 0; t < T; ++t)
                    for (int j = 0; j < d; ++j) row->g[j] += out->g[t * d + j];
        });
    }
    return out;
}

tptr linear(graph& g, const tptr& x, const tptr& W, const tptr& b) {
    const int T = x->rows(), di = x->cols();
    if (W->rank() != 2 || W->dim(0) != di)
        throw dim_error("linear: weight is " + std::to_string(W->dim(0)) + "x" +
                        std::to_string(W->rank() > 1 ? W->dim(1) : 0) + ", input has " +
                        std::to_string(di) + " columns");
    const int dout = W->dim(1);
    if (b && b->numel() != dout) throw dim_error("linear: bias width mismatch");
    bool rec = want_grad(g, {&x, &W, &b});
    auto out = out_like({T, dout}, rec);
    matmul_nn_auto(x->v.data(), W->v.data(), out->v.data(), T, di, dout, false);
    if (b)
        for (int t = 0; t < T; ++t)
            for (int j = 0; j < dout; ++j) out->v[t * dout + j] += b->v[j];
    if (rec) {
        prep(x); prep(W); prep(b);
        g.push([x, W, b, out, T, di, dout] {
            if (x->requires_grad)
                matmul_nt_auto(out->g.data(), W->v.data(), x->g.data(), T, dout, di, true);
            if (W->requires_grad)
                matmul_tn_auto(x->v.data(), out->g.data(), W->g.data(), di, T, dout, true);
            if (b && b->requires_grad)
                for (int t = 0; t < T; ++t)
                    for (int j = 0; j < dout; ++j) b->g[j] += out->g[t * dout + j];
        });
    }
    return out;
}

tptr matmul(graph& g, const tptr& a, const tptr& b) {
    const int m = a->rows(), k = a->cols();
    if (b->rows() != k) throw dim_error("matmul: inner extents differ");
    const int n = b->cols();
    bool rec = want_grad(g, {&a, &b});
    auto out = out_like({m, n}, rec);
    matmul_nn_auto(a->v.data(), b->v.data(), out->v.data(), m, k, n, false);
    if (rec) {
        prep(a); prep(b);
        g.push([a, b, out, m, k, n] {
            if (a->requires_grad)
                matmul_nt_auto(out->g.data(), b->v.data(), a->g.data(), m, n, k, true);
            if (b->requires_grad)
                matmul_tn_auto(a->v.data(), out->g.data(), b->g.data(), k, m, n, true);
        });
    }
    return out;
}

tptr matmul_nt(graph& g, const tptr& a, const tptr& b) {
    const int m = a->rows(), k = a->cols();
    if (b->cols() != k) throw dim_error("matmul_nt: inner extents differ");
    const int n = b->rows();
    bool rec = want_grad(g, {&a, &b});
    auto out = out_like({m, n}, rec);
    matmul_nt_auto(a->v.data(), b->v.data(), out->v.data(), m, k, n, false);
    if (rec) {
        prep(a); prep(b);
        g.push([a, b, out, m, k, n] {
            if (a->requires_grad)
                matmul_nn_auto(out->g.data(), b->v.data(), a->g.data(), m, n, k, true);
            if (b->requires_grad)
                matmul_tn_auto(out->g.data(), a->v.data(), b->g.data(), n, m, k, true);
        });
    }
    return out;
}

tptr silu(graph& g, const tptr& x) {
    bool rec = want_grad(g, {&x});
    auto out = out_like(x->shape, rec);
    for (int64_t i = 0; i < x->numel(); ++i) {
        real s = real(1) / (real(1) + std::exp(-x->v[i]));
        out->v[i] = x->v[i] * s;
    }
    if (rec) {
        prep(x);
        g.push([x, out] {
            for (int64_t i = 0; i < x->numel(); ++i) {
                real s = real(1) / (real(1) + std::exp(-x->v[i]));
                x->g[i] += out->g[i] * s * (real(1) + x->v[i] * (real(1) - s));
            }
        });
    }
    return out;
}

tptr sigmoid_op(graph& g, const tptr& x) {
    bool rec = want_grad(g, {&x});
    auto out = out_like(x->shape, rec);
    for (int64_t i = 0; i < x->numel(); ++i)
        out->v[i] = real(1) / (real(1) + std::exp(-x->v[i]));
    if (rec) {
        prep(x);
        g.push([x, out] {
            for (int64_t i = 0; i < x->numel(); ++i)
                x->g[i] += out->g[i] * out->v[i] * (real(1) - out->v[i]);
        });
    }
    return out;
}

tptr rmsnorm(graph& g, const tptr& x, const tptr& gain) {
    const int T = x->rows(), d = x->cols();
    if (gain->numel() != d) throw dim_error("rmsnorm: gain width mismatch");
    bool rec = want_grad(g, {&x, &gain});
    auto out = out_like(x->shape, rec);
    std::vector<real> inv(T);
    for (int t = 0; t < T; ++t) {
        double ms = 0;
        for (int j = 0; j < d; ++j) {
            double xv = x->v[t * d + j];
            ms += xv * xv;
        }
        ms = ms / d + k_norm_eps;
        inv[t] = static_cast<real>(1.0 / std::sqrt(ms));
        for (int j = 0; j < d; ++j)
            out->v[t * d + j] = x->v[t * d + j] * inv[t] * gain->v[j];
    }
    if (rec) {
        prep(x); prep(gain);
        g.push([x, gain, out, inv, T, d] {
            for (int t = 0; t < T; ++t) {
                const real r = inv[t];
                if (x->requires_grad) {
                    double dot = 0;  // sum_i go_i * gain_i * x_i
                    for (int j = 0; j < d; ++j)
                        dot += static_cast<double>(out->g[t * d + j]) * gain->v[j] * x->v[t * d + j];
                    const real coef = static_cast<real>(dot) * r * r * r / d;
                    for (int j = 0; j < d; ++j)
                        x->g[t * d + j] += out->g[t * d + j] * gain->v[j] * r - coef * x->v[t * d + j];
                }
                if (gain->requires_grad)
                    for (int j = 0; j < d; ++j)
                        gain->g[j] += out->g[t * d + j] * x->v[t * d + j] * r;
            }
        });
    }
    return out;
}

tptr layernorm_rows(graph& g, const tptr& x) {
    const int T = x->rows(), d = x->cols();
    bool rec = want_grad(g, {&x});
    auto out = out_like(x->shape, rec);
    std::vector<real> inv(T);
    for (int t = 0; t < T; ++t) {
        double m = 0;
        for (int j = 0; j < d; ++j) m += x->v[t * d + j];
        m /= d;
        double var = 0;
        for (int j = 0; j < d; ++j) {
            double c = x->v[t * d + j] - m;
            var += c * c;
        }
        var = var / d + k_norm_eps;
        inv[t] = static_cast<real>(1.0 / std::sqrt(var));
        for (int j = 0; j < d; ++j)
            out->v[t * d + j] = static_cast<real>((x->v[t * d + j] - m) * inv[t]);
    }
    if (rec) {
        prep(x);
        g.push([x, out, inv, T, d] {
            for (int t = 0; t < T; ++t) {
                double mean_go = 0, mean_goy = 0;
                for (int j = 0; j < d; ++j) {
                    mean_go += out->g[t * d + j];
                    mean_goy += static_cast<double>(out->g[t * d + j]) * out->v[t * d + j];
                }
                mean_go /= d;
                mean_goy /= d;
                for (int j = 0; j < d; ++j)
                    x->g[t * d + j] += inv[t] * static_cast<real>(out->g[t * d + j] - mean_go -
                                                                  out->v[t * d + j] * mean_goy);
            }
        });
    }
    return out;
}

tptr adaln_affine(graph& g, const tptr& ln, const tptr& mod) {
    const int T = ln->rows(), d = ln->cols();
    if (mod->numel() != 2 * d) throw dim_error("adaln_affine: modulation must be 2x row width");
    bool rec = want_grad(g, {&ln, &mod});
    auto out = out_like(ln->shape, rec);
    const real* gamma = mod->v.data();
    const real* beta = mod->v.data() + d;
    for (int t = 0; t < T; ++t)
        for (int j = 0; j < d; ++j)
            out->v[t * d + j] = ln->v[t * d + j] * (real(1) + gamma[j]) + beta[j];
    if (rec) {
        prep(ln); prep(mod);
        g.push([ln, mod, out, T, d] {
            const real* gamma = mod->v.data();
            for (int t = 0; t < T; ++t)
                for (int j = 0; j < d; ++j) {
                    const real go = out->g[t * d + j];
                    if (ln->requires_grad) ln->g[t * d + j] += go * (real(1) + gamma[j]);
                    if (mod->requires_grad) {
                        mod->g[j] += go * ln->v[t * d + j];
                        mod->g[d + j] += go;
                    }
                }
        });
    }
    return out;
}

tptr l2_normalize_rows(graph& g, const tptr& x) {
    const int T = x->rows(), d = x->cols();
    bool rec = want_grad(g, {&x});
    auto out = out_like(x->shape, rec);
    std::vector<real> inv(T);
    for (int t = 0; t < T; ++t) {
        double n2 = 0;
        for (int j = 0; j < d; ++j) {
            double xv = x->v[t * d + j];
            n2 += xv * xv;
        }
        inv[t] = static_cast<real>(1.0 / std::sqrt(n2 + k_norm_eps));
        for (int j = 0; j < d; ++j) out->v[t * d + j] = x->v[t * d + j] * inv[t];
    }
    if (rec) {
        prep(x);
        g.push([x, out, inv, T, d] {
            for (int t = 0; t < T; ++t) {
                double dot = 0;
                for (int j = 0; j < d; ++j)
                    dot += static_cast<double>(out->g[t * d + j]) * x->v[t * d + j];
                const real r = inv[t];
                const real coef = static_cast<real>(dot) * r * r * r;
                for (int j = 0; j < d; ++j)
                    x->g[t * d + j] += out->g[t * d + j] * r - coef * x->v[t * d + j];
            }
        });
    }
    return out;
}

tptr mean_pool_rows(graph& g, const tptr& x) {
    const int T = x->rows(), d = x->cols();
    bool rec = want_grad(g, {&x});
    auto out = out_like({1, d}, rec);
    for (int j = 0; j < d; ++j) {
        double s = 0;
        for (int t = 0; t < T; ++t) s += x->v[t * d + j];
        out->v[j] = static_cast<real>(s / T);
    }
    if (rec) {
        prep(x);
        g.push([x, out, T, d] {
            for (int t = 0; t < T; ++t)
                for (int j = 0; j < d; ++j) x->g[t * d + j] += out->g[j] / T;
        });
    }
    return out;
}

tptr mean_all(graph& g, const tptr& x) {
    const int64_t n = x->numel();
    bool rec = want_grad(g, {&x});
    auto out = out_like({1}, rec);
    double s = 0;
    for (int64_t i = 0; i < n; ++i) s += x->v[i];
    out->v[0] = static_cast<real>(s / static_cast<double>(n));
    if (rec) {
        prep(x);
        g.push([x, out, n] {
            const real go = out->g[0] / static_cast<real>(n);
            for (int64_t i = 0; i < n; ++i) x->g[i] += go;
        });
    }
    return out;
}

tptr sq_diff_sum(graph& g, const tptr& a, const tptr& b) {
    require_same_shape(*a, *b, "sq_diff_sum");
    bool rec = want_grad(g, {&a, &b});
    auto out = out_like({1}, rec);
    double s = 0;
    for (int64_t i = 0; i < a->numel(); ++i) {
        double d = static_cast<double>(a->v[i]) - b->v[i];
        s += d * d;
    }
    out->v[0] = static_cast<real>(s);
    if (rec) {
        prep(a); prep(b);
        g.push([a, b, out] {
            const real go = out->g[0];
            for (int64_t i = 0; i < a->numel(); ++i) {
                const real d = real(2) * (a->v[i] - b->v[i]) * go;
                if (a->requires_grad) a->g[i] += d;
                if (b->requires_grad) b->g[i] -= d;
            }
        });
    }
    return out;
}

tptr mse(graph& g, const tptr& a, const tptr& b) {
    auto s = sq_diff_sum(g, a, b);
    return scale(g, s, real(1) / static_cast<real>(a->numel()));
}

tptr cross_entropy_mean(graph& g, const tptr& logits, const std::vector<int>& targets) {
    const int T = logits->rows(), N = logits->cols();
    if (static_cast<int>(targets.size()) != T)
        throw dim_error("cross_entropy_mean: target count mismatch");
    for (int t : targets)
        if (t < 0 || t >= N) throw data_error("cross_entropy_mean: target out of range");
    bool rec = want_grad(g, {&logits});
    auto out = out_like({1}, rec);
    // probabilities kept for the backward pass
    auto probs = std::make_shared<std::vector<real>>(static_cast<size_t>(T) * N);
    double total = 0;
    for (int t = 0; t < T; ++t) {
        const real* l = logits->v.data() + static_cast<int64_t>(t) * N;
        real m = l[0];
        for (int j = 1; j < N; ++j) m = std::max(m, l[j]);
        double z = 0;
        for (int j = 0; j < N; ++j) z += std::exp(static_cast<double>(l[j] - m));
        const double lse = m + std::log(z);
        total += lse - l[targets[t]];
        for (int j = 0; j < N; ++j)
            (*probs)[static_cast<size_t>(t) * N + j] =
                static_cast<real>(std::exp(static_cast<double>(l[j]) - lse));
    }
    out->v[0] = static_cast<real>(total / T);
    if (rec) {
        prep(logits);
        g.push([logits, out, probs, targets, T, N] {
            const real go = out->g[0] / static_cast<real>(T);
            for (int t = 0; t < T; ++t)
                for (int j = 0; j < N; ++j) {
                    real p = (*probs)[static_cast<size_t>(t) * N + j];
                    if (j == targets[t]) p -= real(1);
                    logits->g[static_cast<int64_t>(t) * N + j] += go * p;
                }
        });
    }
    return out;
}

tptr masked_softmax_rows(graph& g, const tptr& scores, const attn_mask& mask) {
    const int Tq = scores->rows(), Tk = scores->cols();
    if (mask.q_len != Tq || mask.k_len != Tk)
        throw dim_error("masked_softmax_rows: mask extent mismatch");
    bool rec = want_grad(g, {&scores});
    auto out = out_like(scores->shape, rec);
    for (int q = 0; q < Tq; ++q) {
        const real* s = scores->v.data() + static_cast<int64_t>(q) * Tk;
        real* w = out->v.data() + static_cast<int64_t>(q) * Tk;
        real m = real(0);
        bool any = false;
        for (int j = 0; j < Tk; ++j)
            if (mask.allowed(q, j)) {
                m = any ? std::max(m, s[j]) : s[j];
                any = true;
            }
        if (!any)
            throw mask_error("masked_softmax_rows: query row " + std::to_string(q) +
                             " is fully masked");
        double z = 0;
        for (int j = 0; j < Tk; ++j)
            if (mask.allowed(q, j)) z += std::exp(static_cast<double>(s[j] - m));
        for (int j = 0; j < Tk; ++j)
            w[j] = mask.allowed(q, j)
                       ? static_cast<real>(std::exp(static_cast<double>(s[j] - m)) / z)
                       : real(0);
    }
    if (rec) {
        prep(scores);
        // disallowed weights are exactly zero, so the plain softmax backward
        // already sends no gradient to masked scores
        g.push([scores, out, Tq, Tk] {
            for (int q = 0; q < Tq; ++q) {
                const real* w = out->v.data() + static_cast<int64_t>(q) * Tk;
                const real* go = out->g.data() + static_cast<int64_t>(q) * Tk;
                double dot = 0;
                for (int j = 0; j < Tk; ++j) dot += static_cast<double>(go[j]) * w[j];
                for (int j = 0; j < Tk; ++j)
                    scores->g[static_cast<int64_t>(q) * Tk + j] +=
                        w[j] * static_cast<real>(go[j] - dot);
            }
        });
    }
    return out;
}

tptr slice_rows(graph& g, const tptr& x, int r0, int r1) {
    const int T = x->rows(), d = x->cols();
    if (r0 < 0 || r1 > T || r0 >= r1) throw dim_error("slice_rows: bad range");
    bool rec = want_grad(g, {&x});
    auto out = out_like({r1 - r0, d}, rec);
    std::copy(x->v.begin() + static_cast<int64_t>(r0) * d,
              x->v.begin() + static_cast<int64_t>(r1) * d, out->v.begin());
    if (rec) {
        prep(x);
        g.push([x, out, r0, d] {
            for (int64_t i = 0; i < out->numel(); ++i)
                x->g[static_cast<int64_t>(r0) * d + i] += out->g[i];
        });
    }
    return out;
}

tptr concat_rows(graph& g, const std::vector<tptr>& parts) {
    if (parts.empty()) throw dim_error("concat_rows: no parts");
    const int d = parts[0]->cols();
    int T = 0;
    bool any_grad = false;
    for (const auto& p : parts) {
        if (p->cols() != d) throw dim_error("concat_rows: column mismatch");
        T += p->rows();
        any_grad = any_grad || p->requires_grad;
    }
    bool rec = g.recording && any_grad;
    auto out = out_like({T, d}, rec);
    int64_t at = 0;
    for (const auto& p : parts) {
        std::copy(p->v.begin(), p->v.end(), out->v.begin() + at);
        at += p->numel();
    }
    if (rec) {
        for (const auto& p : parts) prep(p);
        g.push([parts, out] {
            int64_t at = 0;
            for (const auto& p : parts) {
                if (p->requires_grad)
                    for (int64_t i = 0; i < p->numel(); ++i) p->g[i] += out->g[at + i];
                at += p->numel();
            }
        });
    }
    return out;
}

tptr slice_cols(graph& g, const tptr& x, int c0, int c1) {
    const int T = x->rows(), d = x->cols();
    if (c0 < 0 || c1 > d || c0 >= c1) throw dim_error("slice_cols: bad range");
    const int w = c1 - c0;
    bool rec = want_grad(g, {&x});
    auto out = out_like({T, w}, rec);
    for (int t = 0; t < T; ++t)
        for (int j = 0; j < w; ++j) out->v[t * w + j] = x->v[static_cast<int64_t>(t) * d + c0 + j];
    if (rec) {
        prep(x);
        g.push([x, out, c0, d, w, T] {
            for (int t = 0; t < T; ++t)
                for (int j = 0; j < w; ++j)
                    x->g[static_cast<int64_t>(t) * d + c0 + j] += out->g[t * w + j];
        });
    }
    return out;
}

tptr concat_cols(graph& g, const std::vector<tptr>& parts) {
    if (parts.empty()) throw dim_error("concat_cols: no parts");
    const int T = parts[0]->rows();
    int d = 0;
    bool any_grad = false;
    for (const auto& p : parts) {
        if (p->rows() != T) throw dim_error("concat_cols: row mismatch");
        d += p->cols();
        any_grad = any_grad || p->requires_grad;
    }
    bool rec = g.recording && any_grad;
    auto out = out_like({T, d}, rec);
    int c0 = 0;
    for (const auto& p : parts) {
        const int w = p->cols();
        for (int t = 0; t < T; ++t)
            for (int j = 0; j < w; ++j) out->v[static_cast<int64_t>(t) * d + c0 + j] = p->v[t * w + j];
        c0 += w;
    }
    if (rec) {
        for (const auto& p : parts) prep(p);
        g.push([parts, out, T, d] {
            int c0 = 0;
            for (const auto& p : parts) {
                const int w = p->cols();
                if (p->requires_grad)
                    for (int t = 0; t < T; ++t)
                        for (int j = 0; j < w; ++j)
                            p->g[t * w + j] += out->g[static_cast<int64_t>(t) * d + c0 + j];
                c0 += w;
            }
        });
    }
    return out;
}

tptr reshape(graph& g, const tptr& x, std::vector<int> shape) {
    if (shape_numel(shape) != x->numel()) throw dim_error("reshape: element count mismatch");
    bool rec = want_grad(g, {&x});
    auto out = out_like(std::move(shape), rec);
    out->v = x->v;
    if (rec) {
        prep(x);
        g.push([x, out] {
            for (int64_t i = 0; i < x->numel(); ++i) x->g[i] += out->g[i];
        });
    }
    return out;
}

tptr embed_rows(graph& g, const tptr& table, const std::vector<int32_t>& idx) {
    const int N = table->rows(), C = table->cols();
    for (int32_t i : idx)
        if (i < 0 || i >= N) throw data_error("embed_rows: index out of range");
    const int T = static_cast<int>(idx.size());
    bool rec = want_grad(g, {&table});
    auto out = out_like({T, C}, rec);
    for (int t = 0; t < T; ++t)
        std::copy(table->v.begin() + static_cast<int64_t>(idx[t]) * C,
                  table->v.begin() + static_cast<int64_t>(idx[t] + 1) * C, out->v.begin() + t * C);
    if (rec) {
        prep(table);
        g.push([table, out, idx, C, T] {
            for (int t = 0; t < T; ++t)
                for (int j = 0; j < C; ++j)
                    table->g[static_cast<int64_t>(idx[t]) * C + j] += out->g[t * C + j];
        });
    }
    return out;
}

tptr rope2d(graph& g, const tptr& x, const pos_list& positions) {
    const int T = x->rows(), d = x->cols();
    if (d % 4 != 0) throw config_error("rope2d: head dim must be divisible by 4");
    if (static_cast<int>(positions.size()) != T)
        throw dim_error("rope2d: one position per token required");
    const int half = d / 2;
    const int pairs = half / 2;
    std::vector<real> freq(pairs);
    for (int i = 0; i < pairs; ++i)
        freq[i] = static_cast<real>(std::pow(10000.0, -2.0 * i / half));
    bool rec = want_grad(g, {&x});
    auto out = out_like(x->shape, rec);
    // cos/sin per (token, axis, pair), kept for the inverse rotation
    auto cs = std::make_shared<std::vector<real>>(static_cast<size_t>(T) * half * 2);
    for (int t = 0; t < T; ++t) {
        for (int axis = 0; axis < 2; ++axis) {
            const real p = axis == 0 ? positions[t].first : positions[t].second;
            for (int i = 0; i < pairs; ++i) {
                const real ang = p * freq[i];
                const real c = std::cos(ang), s = std::sin(ang);
                const int base = axis * half + 2 * i;
                const real x0 = x->v[t * d + base], x1 = x->v[t * d + base + 1];
                out->v[t * d + base] = x0 * c - x1 * s;
                out->v[t * d + base + 1] = x0 * s + x1 * c;
                (*cs)[(static_cast<size_t>(t) * half + axis * pairs + i) * 2] = c;
                (*cs)[(static_cast<size_t>(t) * half + axis * pairs + i) * 2 + 1] = s;
            }
        }
    }
    if (rec) {
        prep(x);
        g.push([x, out, cs, T, d, half, pairs] {
            for (int t = 0; t < T; ++t)
                for (int axis = 0; axis < 2; ++axis)
                    for (int i = 0; i < pairs; ++i) {
                        const real c = (*cs)[(static_cast<size_t>(t) * half + axis * pairs + i) * 2];
                        const real s = (*cs)[(static_cast<size_t>(t) * half + axis * pairs + i) * 2 + 1];
                        const int base = axis * half + 2 * i;
                        const real g0 = out->g[t * d + base], g1 = out->g[t * d + base + 1];
                        x->g[t * d + base] += g0 * c + g1 * s;
                        x->g[t * d + base + 1] += -g0 * s + g1 * c;
                    }
        });
    }
    return out;
}

tptr im2col(graph& g, const tptr& x, int kh, int kw, int stride, int pad, int& oh, int& ow) {
    if (x->rank() != 3) throw dim_error("im2col: input must be [h,w,c]");
    const int h = x->dim(0), w = x->dim(1), c = x->dim(2);
    oh = (h + 2 * pad - kh) / stride + 1;
    ow = (w + 2 * pad - kw) / stride + 1;
    if (oh <= 0 || ow <= 0) throw config_error("im2col: kernel larger than padded input");
    const int cols = kh * kw * c;
    bool rec = want_grad(g, {&x});
    auto out = out_like({oh * ow, cols}, rec);
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
            real* row = out->v.data() + (static_cast<int64_t>(oy) * ow + ox) * cols;
            int at = 0;
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                    const int sy = oy * stride - pad + ky;
                    const int sx = ox * stride - pad + kx;
                    if (sy < 0 || sy >= h || sx < 0 || sx >= w) {
                        for (int cc = 0; cc < c; ++cc) row[at++] = real(0);
                    } else {
                        const real* src = x->v.data() + (static_cast<int64_t>(sy) * w + sx) * c;
                        for (int cc = 0; cc < c; ++cc) row[at++] = src[cc];
                    }
                }
        }
    if (rec) {
        prep(x);
        const int H = h, W = w, C = c, OH = oh, OW = ow;
        g.push([x, out, kh, kw, stride, pad, H, W, C, OH, OW] {
            const int cols = kh * kw * C;
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    const real* row = out->g.data() + (static_cast<int64_t>(oy) * OW + ox) * cols;
                    int at = 0;
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            const int sy = oy * stride - pad + ky;
                            const int sx = ox * stride - pad + kx;
                            if (sy < 0 || sy >= H || sx < 0 || sx >= W) {
                                at += C;
                            } else {
                                real* dst = x->g.data() + (static_cast<int64_t>(sy) * W + sx) * C;
                                for (int cc = 0; cc < C; ++cc) dst[cc] += row[at++];
                            }
                        }
                }
        });
    }
    return out;
}

tptr upsample_nearest2(graph& g, const tptr& x) {
    if (x->rank() != 3) throw dim_error("upsample_nearest2: input must be [h,w,c]");
    const int h = x->dim(0), w = x->dim(1), c = x->dim(2);
    bool rec = want_grad(g, {&x});
    auto out = out_like({2 * h, 2 * w, c}, rec);
    for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx) {
            const real* src = x->v.data() + (static_cast<int64_t>(y / 2) * w + xx / 2) * c;
            real* dst = out->v.data() + (static_cast<int64_t>(y) * 2 * w + xx) * c;
            for (int cc = 0; cc < c; ++cc) dst[cc] = src[cc];
        }
    if (rec) {
        prep(x);
        g.push([x, out, h, w, c] {
            for (int y = 0; y < 2 * h; ++y)
                for (int xx = 0; xx < 2 * w; ++xx) {
                    real* dst = x->g.data() + (static_cast<int64_t>(y / 2) * w + xx / 2) * c;
                    const real* src = out->g.data() + (static_cast<int64_t>(y) * 2 * w + xx) * c;
                    for (int cc = 0; cc < c; ++cc) dst[cc] += src[cc];
                }
        });
    }
    return out;
}

namespace {

struct bilerp_coef {
    int i0, i1;
    real w0, w1;
};

// half-pixel sampling with edge clamping
std::vector<bilerp_coef> bilerp_axis(int src, int dst) {
    std::vector<bilerp_coef> c(static_cast<size_t>(dst));
    for (int o = 0; o < dst; ++o) {
        const double s = (o + 0.5) * static_cast<double>(src) / dst - 0.5;
        int i0 = static_cast<int>(std::floor(s));
        const double f = s - i0;
        int i1 = i0 + 1;
        if (i0 < 0) i0 = 0;
        if (i1 < 0) i1 = 0;
        if (i0 > src - 1) i0 = src - 1;
        if (i1 > src - 1) i1 = src - 1;
        c[static_cast<size_t>(o)] = {i0, i1, static_cast<real>(1.0 - f), static_cast<real>(f)};
    }
    return c;
}

} // namespace

tptr upsample_bilinear(graph& g, const tptr& x, int H, int W) {
    if (x->rank() != 3) throw dim_error("upsample_bilinear: input must be [h,w,c]");
    const int h = x->dim(0), w = x->dim(1), c = x->dim(2);
    bool rec = want_grad(g, {&x});
    auto out = out_like({H, W, c}, rec);
    auto ys = std::make_shared<std::vector<bilerp_coef>>(bilerp_axis(h, H));
    auto xs = std::make_shared<std::vector<bilerp_coef>>(bilerp_axis(w, W));
    for (int y = 0; y < H; ++y) {
        const bilerp_coef& cy = (*ys)[static_cast<size_t>(y)];
        for (int xx = 0; xx < W; ++xx) {
            const bilerp_coef& cx = (*xs)[static_cast<size_t>(xx)];
            real* dst = out->v.data() + (static_cast<int64_t>(y) * W + xx) * c;
            const real* s00 = x->v.data() + (static_cast<int64_t>(cy.i0) * w + cx.i0) * c;
            const real* s01 = x->v.data() + (static_cast<int64_t>(cy.i0) * w + cx.i1) * c;
            const real* s10 = x->v.data() + (static_cast<int64_t>(cy.i1) * w + cx.i0) * c;
            const real* s11 = x->v.data() + (static_cast<int64_t>(cy.i1) * w + cx.i1) * c;
            for (int cc = 0; cc < c; ++cc)
                dst[cc] = cy.w0 * (cx.w0 * s00[cc] + cx.w1 * s01[cc]) +
                          cy.w1 * (cx.w0 * s10[cc] + cx.w1 * s11[cc]);
        }
    }
    if (rec) {
        prep(x);
        g.push([x, out, ys, xs, H, W, w, c] {
            for (int y = 0; y < H; ++y) {
                const bilerp_coef& cy = (*ys)[static_cast<size_t>(y)];
                for (int xx = 0; xx < W; ++xx) {
                    const bilerp_coef& cx = (*xs)[static_cast<size_t>(xx)];
                    const real* go = out->g.data() + (static_cast<int64_t>(y) * W + xx) * c;
                    real* d00 = x->g.data() + (static_cast<int64_t>(cy.i0) * w + cx.i0) * c;
                    real* d01 = x->g.data() + (static_cast<int64_t>(cy.i0) * w + cx.i1) * c;
                    real* d10 = x->g.data() + (static_cast<int64_t>(cy.i1) * w + cx.i0) * c;
                    real* d11 = x->g.data() + (static_cast<int64_t>(cy.i1) * w + cx.i1) * c;
                    for (int cc = 0; cc < c; ++cc) {
                        d00[cc] += cy.w0 * cx.w0 * go[cc];
                        d01[cc] += cy.w0 * cx.w1 * go[cc];
                        d10[cc] += cy.w1 * cx.w0 * go[cc];
                        d11[cc] += cy.w1 * cx.w1 * go[cc];
                    }
                }
            }
        });
    }
    return out;
}

tptr downsample_area(graph& g, const tptr& x, int h2, int w2) {
    if (x->rank() != 3) throw dim_error("downsample_area: input must be [h,w,c]");
    const int h = x->dim(0), w = x->dim(1), c = x->dim(2);
    if (h2 <= 0 || w2 <= 0 || h % h2 != 0 || w % w2 != 0)
        throw config_error("downsample_area: target must divide source extent");
    const int fy = h / h2, fx = w / w2;
    const real inv = real(1) / static_cast<real>(fy * fx);
    bool rec = want_grad(g, {&x});
    auto out = out_like({h2, w2, c}, rec);
    for (int y = 0; y < h2; ++y)
        for (int xx = 0; xx < w2; ++xx) {
            real* dst = out->v.data() + (static_cast<int64_t>(y) * w2 + xx) * c;
            for (int cc = 0; cc < c; ++cc) dst[cc] = real(0);
            for (int dy = 0; dy < fy; ++dy)
                for (int dx = 0; dx < fx; ++dx) {
                    const real* src =
                        x->v.data() + (static_cast<int64_t>(y * fy + dy) * w + xx * fx + dx) * c;
                    for (int cc = 0; cc < c; ++cc) dst[cc] += src[cc];
                }
            for (int cc = 0; cc < c; ++cc) dst[cc] *= inv;
        }
    if (rec) {
        prep(x);
        g.push([x, out, h2, w2, fy, fx, w, c, inv] {
            for (int y = 0; y < h2; ++y)
                for (int xx = 0; xx < w2; ++xx) {
                    const real* go = out->g.data() + (static_cast<int64_t>(y) * w2 + xx) * c;
                    for (int dy = 0; dy < fy; ++dy)
                        for (int dx = 0; dx < fx; ++dx) {
                            real* dst = x->g.data() +
                                        (static_cast<int64_t>(y * fy + dy) * w + xx * fx + dx) * c;
                            for (int cc = 0; cc < c; ++cc) dst[cc] += go[cc] * inv;
                        }
                }
        });
    }
    return out;
}

tptr straight_through(graph& g, const tptr& f, const tptr& fhat) {
    require_same_shape(*f, *fhat, "straight_through");
    bool rec = want_grad(g, {&f});
    auto out = out_like(f->shape, rec);
    out->v = fhat->v;
    if (rec) {
        prep(f);
        g.push([f, out] {
            for (int64_t i = 0; i < f->numel(); ++i) f->g[i] += out->g[i];
        });
    }
    return out;
}

} // namespace hiergen
