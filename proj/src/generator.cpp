#include "hiergen/generator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace hiergen {

int guidance_index(int k, int K, int M) {
    if (M > K) throw config_error("guidance_index: requires M <= K");
    if (k < 1 || k > K) throw config_error("guidance_index: scale out of range");
    return M - (M * (k - 1)) / K;
}

void guidance_route::validate() const {
    if (M < 1 || K < 1 || M > K) throw config_error("guidance route: requires 1 <= M <= K");
}

int guidance_route::level_for(int k) const {
    validate();
    int h = guidance_index(k, K, M);
    return inverted ? M + 1 - h : h;
}

std::vector<int> guidance_route::table() const {
    std::vector<int> t;
    for (int k = 1; k <= K; ++k) t.push_back(level_for(k));
    return t;
}

attn_mask build_guidance_mask(const scale_schedule& schedule, const guidance_route& route,
                              int tokens_per_level) {
    route.validate();
    if (route.K != schedule.levels())
        throw config_error("guidance mask: route K does not match the schedule");
    attn_mask m(schedule.total_tokens(), route.M * tokens_per_level, false);
    int row = 0;
    for (int k = 1; k <= route.K; ++k) {
        int level = route.level_for(k);
        int c0 = (level - 1) * tokens_per_level;
        for (int t = 0; t < schedule.tokens_at(k - 1); ++t, ++row)
            for (int c = 0; c < tokens_per_level; ++c) m.set(row, c0 + c, true);
    }
    m.validate();
    return m;
}

attn_mask build_scale_causal_mask(const scale_schedule& schedule, int upto) {
    if (upto < 1 || upto > schedule.levels())
        throw config_error("scale causal mask: bad scale count");
    int T = 0;
    for (int k = 0; k < upto; ++k) T += schedule.tokens_at(k);
    attn_mask m(T, T, false);
    int row = 0;
    for (int k = 0, block_end = 0; k < upto; ++k) {
        block_end += schedule.tokens_at(k);
        for (int t = 0; t < schedule.tokens_at(k); ++t, ++row)
            for (int c = 0; c < block_end; ++c) m.set(row, c, true);
    }
    return m;
}

generator_model build_generator(uint64_t seed, scale_schedule schedule, int n_codes, int depth) {
    schedule.validate();
    if (n_codes < 2) throw config_error("generator: codebook size must be >= 2");
    if (depth < 1) throw config_error("generator: depth must be >= 1");
    generator_model gm;
    gm.schedule = std::move(schedule);
    gm.n_codes = n_codes;
    gm.depth = depth;
    rng r(seed);
    const int w = k_gen_width;
    auto init = [&](std::vector<int> shape, int fan_in) {
        return randn(r, std::move(shape), real(1) / std::sqrt(real(fan_in)));
    };
    gm.w_start = gm.params.add("w_start", init({k_embed_dim, w}, k_embed_dim));
    gm.w_in = gm.params.add("w_in", init({k_code_dim, w}, k_code_dim));
    gm.w_guide = gm.params.add("w_guide", init({k_teacher_width, w}, k_teacher_width));
    for (int l = 0; l < depth; ++l) {
        gen_layer_params lp;
        std::string p = "layer" + std::to_string(l) + ".";
        lp.mod_sa = gm.params.add(p + "mod_sa", zeros({k_embed_dim, 2 * w}));
        lp.mod_ca = gm.params.add(p + "mod_ca", zeros({k_embed_dim, 2 * w}));
        lp.mod_ffn = gm.params.add(p + "mod_ffn", zeros({k_embed_dim, 2 * w}));
        lp.wq = gm.params.add(p + "wq", init({w, w}, w));
        lp.wk = gm.params.add(p + "wk", init({w, w}, w));
        lp.wv = gm.params.add(p + "wv", init({w, w}, w));
        lp.wo = gm.params.add(p + "wo", init({w, w}, 2 * w * depth));
        lp.cq = gm.params.add(p + "cq", init({w, w}, w));
        lp.ck = gm.params.add(p + "ck", init({w, w}, w));
        lp.cv = gm.params.add(p + "cv", init({w, w}, w));
        lp.co = gm.params.add(p + "co", init({w, w}, 2 * w * depth));
        lp.ffn.w_gate = gm.params.add(p + "wg", init({w, k_gen_ffn}, w));
        lp.ffn.w_up = gm.params.add(p + "wu", init({w, k_gen_ffn}, w));
        lp.ffn.w_down = gm.params.add(p + "wd", init({k_gen_ffn, w}, 2 * k_gen_ffn * depth));
        gm.layers.push_back(lp);
    }
    gm.mod_out = gm.params.add("mod_out", zeros({k_embed_dim, 2 * w}));
    gm.w_head = gm.params.add("w_head", init({w, n_codes}, 4 * w));
    return gm;
}

std::vector<tptr> make_guidance_levels(const feature_hierarchy& h, supervision_mode mode) {
    if (h.levels.empty()) throw config_error("make_guidance_levels: empty hierarchy");
    if (mode != supervision_mode::single) return h.levels;
    return std::vector<tptr>(h.levels.size(), h.levels.back());
}

tptr route_start_embedding(graph& g, const encoder_model& enc, const feature_hierarchy& h,
                           const guidance_route& route) {
    return pooled_level_embedding(g, enc, h, route.level_for(1));
}

namespace {

// token center positions in the final-scale coordinate frame
pos_list block_positions(const scale_schedule& schedule, int upto) {
    auto [fh, fw] = schedule.final_side();
    pos_list pos;
    for (int k = 0; k < upto; ++k) {
        auto [h, w] = schedule.sides[k];
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                pos.push_back({(i + real(0.5)) * fh / h, (j + real(0.5)) * fw / w});
    }
    return pos;
}

// input block for scale k (1-based, k >= 2): prior code grids upsampled to
// scale k's side and summed
tptr prefix_block(graph& g, const generator_model& gm, const tptr& codebook,
                  const token_pyramid& prefix, int k) {
    auto [h, w] = gm.schedule.sides[k - 1];
    const int C = codebook->dim(1);
    tptr sum;
    for (int j = 0; j < k - 1; ++j) {
        auto [hj, wj] = gm.schedule.sides[j];
        auto rows = embed_rows(g, codebook, prefix.maps[j]);
        auto grid = reshape(g, rows, {hj, wj, C});
        auto up = (hj == h && wj == w) ? grid : upsample_bilinear(g, grid, h, w);
        sum = sum ? add(g, sum, up) : up;
    }
    return reshape(g, sum, {h * w, C});
}

} // namespace

tptr scalewise_logits(graph& g, const generator_model& gm, const tptr& codebook,
                      const token_pyramid& prefix, int upto, const tptr& start_emb,
                      const tptr& cond, const std::vector<tptr>& guidance_levels,
                      const guidance_route& route) {
    route.validate();
    if (route.K != gm.schedule.levels())
        throw config_error("scalewise_logits: route does not match the schedule");
    if (upto < 1 || upto > gm.schedule.levels())
        throw config_error("scalewise_logits: scale count out of range");
    if (static_cast<int>(prefix.maps.size()) < upto - 1)
        throw config_error("scalewise_logits: prefix is missing scales");
    for (int j = 0; j < upto - 1; ++j)
        if (static_cast<int>(prefix.maps[j].size()) != gm.schedule.tokens_at(j))
            throw config_error("scalewise_logits: prefix map " + std::to_string(j) +
                               " does not match the schedule");
    if (static_cast<int>(guidance_levels.size()) != route.M)
        throw config_error("scalewise_logits: expected " + std::to_string(route.M) +
                           " guidance levels");

    // input blocks
    std::vector<tptr> blocks;
    blocks.push_back(linear(g, start_emb, gm.w_start));
    for (int k = 2; k <= upto; ++k)
        blocks.push_back(linear(g, prefix_block(g, gm, codebook, prefix, k), gm.w_in));
    auto x = blocks.size() == 1 ? blocks[0] : concat_rows(g, blocks);

    // guidance stack, shared across layers
    auto stack = guidance_levels.size() == 1 ? guidance_levels[0]
                                             : concat_rows(g, guidance_levels);
    auto G = linear(g, stack, gm.w_guide);

    auto self_mask = build_scale_causal_mask(gm.schedule, upto);
    auto full_cross = build_guidance_mask(gm.schedule, route, k_teacher_tokens);
    attn_mask cross_mask(x->dim(0), full_cross.k_len, false);
    for (int r = 0; r < cross_mask.q_len; ++r)
        for (int c = 0; c < cross_mask.k_len; ++c) cross_mask.set(r, c, full_cross.allowed(r, c));
    auto pos = block_positions(gm.schedule, upto);

    for (const auto& L : gm.layers) {
        auto h1 = adaln_modulate(g, x, cond, L.mod_sa);
        auto sa = masked_attention(g, linear(g, h1, L.wq), linear(g, h1, L.wk),
                                   linear(g, h1, L.wv), self_mask, k_gen_heads, true, &pos, &pos);
        x = add(g, x, linear(g, sa, L.wo));
        auto h2 = adaln_modulate(g, x, cond, L.mod_ca);
        auto ca = masked_attention(g, linear(g, h2, L.cq), linear(g, G, L.ck),
                                   linear(g, G, L.cv), cross_mask, k_gen_heads, true);
        x = add(g, x, linear(g, ca, L.co));
        auto h3 = adaln_modulate(g, x, cond, L.mod_ffn);
        x = add(g, x, swiglu_ffn(g, h3, L.ffn.w_gate, L.ffn.w_up, L.ffn.w_down));
    }
    return linear(g, adaln_modulate(g, x, cond, gm.mod_out), gm.w_head);
}

real generator_train_step(generator_model& gm, const tptr& codebook,
                          const std::vector<generator_sample>& batch, const guidance_route& route,
                          const adamw_config& cfg) {
    if (batch.empty()) throw config_error("generator_train_step: empty batch");
    const int K = gm.schedule.levels();
    gm.params.zero_grad();
    graph g;
    tptr loss_sum;
    for (const auto& s : batch) {
        if (static_cast<int>(s.pyramid.maps.size()) != K)
            throw config_error("generator_train_step: pyramid depth mismatch");
        auto logits = scalewise_logits(g, gm, codebook, s.pyramid, K, s.start_emb, s.cond,
                                       s.guidance_levels, route);
        std::vector<int> targets;
        targets.reserve(gm.schedule.total_tokens());
        for (const auto& m : s.pyramid.maps)
            for (int32_t t : m) targets.push_back(t);
        auto ce = cross_entropy_mean(g, logits, targets);
        loss_sum = loss_sum ? add(g, loss_sum, ce) : ce;
    }
    auto loss = scale(g, loss_sum, real(1) / static_cast<real>(batch.size()));
    check_finite(*loss, "generator loss");
    g.backward(loss);
    adamw_step(gm.params, cfg);
    return loss->v[0];
}

namespace {

int argmax_row(const real* row, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i)
        if (row[i] > row[best]) best = i;
    return best;
}

int sample_topk_row(const real* row, int n, int top_k, real temperature, rng& r) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return row[a] > row[b]; });
    const int kk = std::min(top_k, n);
    // stable softmax over the kept logits
    double mx = row[order[0]];
    std::vector<double> p(kk);
    double sum = 0;
    for (int i = 0; i < kk; ++i) {
        p[i] = std::exp((double(row[order[i]]) - mx) / double(temperature));
        sum += p[i];
    }
    double u = r.uniform() * sum;
    double acc = 0;
    for (int i = 0; i < kk; ++i) {
        acc += p[i];
        if (u < acc) return order[i];
    }
    return order[kk - 1];
}

} // namespace

token_pyramid generate(const generator_model& gm, const tptr& codebook, const tptr& start_emb,
                       const tptr& cond, const std::vector<tptr>& guidance_levels,
                       const guidance_route& route, const sampling_config& samp) {
    if (!samp.greedy) {
        if (samp.top_k < 1 || samp.top_k > gm.n_codes)
            throw config_error("generate: top_k out of range");
        if (samp.temperature <= 0) throw config_error("generate: temperature must be positive");
    }
    rng r(samp.seed);
    token_pyramid out;
    const int K = gm.schedule.levels();
    for (int k = 1; k <= K; ++k) {
        graph g;
        g.recording = false;
        auto logits = scalewise_logits(g, gm, codebook, out, k, start_emb, cond,
                                       guidance_levels, route);
        const int n_k = gm.schedule.tokens_at(k - 1);
        const int row0 = logits->dim(0) - n_k;
        std::vector<int32_t> map(n_k);
        for (int t = 0; t < n_k; ++t) {
            const real* row = logits->v.data() + int64_t(row0 + t) * gm.n_codes;
            map[t] = samp.greedy
                         ? argmax_row(row, gm.n_codes)
                         : sample_topk_row(row, gm.n_codes, samp.top_k, samp.temperature, r);
        }
        out.maps.push_back(std::move(map));
    }
    return out;
}

tptr reconstruct_with_selection(const encoder_model& enc, const tokenizer_model& tok,
                                const generator_model& gm, const teacher_model& teacher,
                                const tptr& signal, const guidance_route& route,
                                supervision_mode mode, int n_candidates,
                                const sampling_config& samp, token_pyramid* out_tokens) {
    if (n_candidates < 1) throw config_error("reconstruct: n_candidates must be >= 1");
    graph g;
    g.recording = false;
    auto h = encode_signal(g, enc, signal);
    auto levels = make_guidance_levels(h, mode);
    for (auto& l : levels) l = detach(l);
    auto start = detach(route_start_embedding(g, enc, h, route));
    auto cond = detach(h.emb);

    tptr best_img;
    token_pyramid best_pyr;
    double best_sim = -2;
    for (int c = 0; c < n_candidates; ++c) {
        sampling_config sc = samp;
        sc.seed = derive_seed(samp.seed, static_cast<uint64_t>(c));
        auto pyr = generate(gm, tok.codebook, start, cond, levels, route, sc);
        graph g2;
        g2.recording = false;
        auto fhat = dequantize(g2, pyr, tok.codebook, tok.schedule);
        auto img = decode_image(g2, tok, fhat);
        auto emb = teacher_vision(teacher, img).embed;
        double sim = 0;
        for (int j = 0; j < k_embed_dim; ++j) sim += double(emb->v[j]) * double(cond->v[j]);
        if (sim > best_sim) {
            best_sim = sim;
            best_img = img;
            best_pyr = std::move(pyr);
        }
    }
    if (out_tokens) *out_tokens = std::move(best_pyr);
    return best_img;
}

container generator_to_container(const generator_model& gm) {
    container c = gm.params.to_container();
    std::vector<int32_t> sides;
    for (auto [h, w] : gm.schedule.sides) {
        sides.push_back(h);
        sides.push_back(w);
    }
    c.add_i32("schedule.sides", {gm.schedule.levels(), 2}, sides);
    c.add_i32("meta.depth", {1}, {gm.depth});
    return c;
}

generator_model generator_from_container(const container& c) {
    const auto& s = c.at("schedule.sides");
    scale_schedule sched;
    for (int k = 0; k < s.shape[0]; ++k) sched.sides.push_back({s.i[2 * k], s.i[2 * k + 1]});
    const auto& head = c.at("w_head");
    generator_model gm = build_generator(0, sched, head.shape[1], c.at("meta.depth").i[0]);
    gm.params.load_values(c);
    return gm;
}

} // namespace hiergen
