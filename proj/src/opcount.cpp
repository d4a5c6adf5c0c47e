// Instrumented attention-pair counting. Probe tensors are tiny (width 8,
// one head); only the mask shapes matter, since the counter adds
// mask.allowed_pairs() per attention call.

#include "hiergen/opcount.hpp"

#include "hiergen/autodiff.hpp"
#include "hiergen/kernels.hpp"
#include "hiergen/mask.hpp"
#include "hiergen/nn.hpp"
#include "hiergen/rng.hpp"

namespace hiergen {

namespace {

constexpr int k_probe_width = 8;

tptr probe_rows(rng& r, int rows) {
    tptr t = make_tensor({rows, k_probe_width});
    for (real& v : t->v) v = static_cast<real>(r.gaussian() * 0.1);
    return t;
}

} // namespace

int64_t scalewise_pairs_closed(const scale_schedule& schedule, int cond_per_scale) {
    int64_t total = 0;
    int64_t prefix = 0;
    for (int k = 0; k < schedule.levels(); ++k) {
        const int64_t n = schedule.tokens_at(k);
        total += n * (prefix + n + cond_per_scale);
        prefix += n;
    }
    return total;
}

int64_t raster_cached_pairs_closed(int tokens, int cond) {
    int64_t total = 0;
    for (int64_t t = 1; t <= tokens; ++t) total += t + cond;
    return total;
}

int64_t raster_recompute_pairs_closed(int tokens, int cond) {
    int64_t total = 0;
    for (int64_t t = 1; t <= tokens; ++t) total += t * (t + 1) / 2 + t * cond;
    return total;
}

opcount_report run_opcount(const scale_schedule& schedule, int raster_side, int tokens_per_level,
                           int levels) {
    schedule.validate();
    if (raster_side < 1 || tokens_per_level < 1 || levels < 1)
        throw config_error("opcount: raster side, tokens per level and levels must be positive");

    opcount_report rep;
    rep.raster_tokens = raster_side * raster_side;
    rep.cond_per_scale = tokens_per_level;
    rep.cond_raster = levels * tokens_per_level;

    rep.scalewise_closed = scalewise_pairs_closed(schedule, rep.cond_per_scale);
    rep.raster_cached_closed = raster_cached_pairs_closed(rep.raster_tokens, rep.cond_raster);
    rep.raster_recompute_closed =
        raster_recompute_pairs_closed(rep.raster_tokens, rep.cond_raster);

    graph g;
    g.recording = false;
    rng r(0x9c07a55e5ull);

    // scale-wise with KV cache: one pass per scale, queries are the new
    // block, keys span prefix + block + per-scale condition
    {
        attention_pair_scope scope;
        int prefix = 0;
        for (int k = 0; k < schedule.levels(); ++k) {
            const int n = schedule.tokens_at(k);
            const int keys = prefix + n + rep.cond_per_scale;
            tptr q = probe_rows(r, n);
            tptr kk = probe_rows(r, keys);
            tptr v = probe_rows(r, keys);
            masked_attention(g, q, kk, v, attn_mask::full(n, keys), 1, false);
            prefix += n;
        }
        rep.scalewise_measured = attention_pair_count();
    }

    // raster with KV cache: one query per step against the grown prefix
    {
        attention_pair_scope scope;
        for (int t = 1; t <= rep.raster_tokens; ++t) {
            const int keys = t + rep.cond_raster;
            tptr q = probe_rows(r, 1);
            tptr kk = probe_rows(r, keys);
            tptr v = probe_rows(r, keys);
            masked_attention(g, q, kk, v, attn_mask::full(1, keys), 1, false);
        }
        rep.raster_cached_measured = attention_pair_count();
    }

    // raster without cache: every step reruns causal attention over the
    // whole prefix, condition keys visible to all rows
    {
        attention_pair_scope scope;
        for (int t = 1; t <= rep.raster_tokens; ++t) {
            const int keys = t + rep.cond_raster;
            attn_mask m(t, keys, false);
            for (int qi = 0; qi < t; ++qi) {
                for (int kj = 0; kj <= qi; ++kj) m.set(qi, kj, true);
                for (int kj = t; kj < keys; ++kj) m.set(qi, kj, true);
            }
            tptr q = probe_rows(r, t);
            tptr kk = probe_rows(r, keys);
            tptr v = probe_rows(r, keys);
            masked_attention(g, q, kk, v, m, 1, false);
        }
        rep.raster_recompute_measured = attention_pair_count();
    }

    return rep;
}

} // namespace hiergen
