#include "hiergen/encoder.hpp"

#include <cmath>
#include <string>

#include "hiergen/synth.hpp"

namespace hiergen {

int layer_mapping(int m, mapping_variant variant) {
    if (m < 1 || m > k_enc_blocks)
        throw config_error("layer_mapping: block index " + std::to_string(m) + " out of range");
    switch (variant) {
        case mapping_variant::balanced: return 8 + 4 * m;
        case mapping_variant::late: return 16 + 2 * m;
        case mapping_variant::early: return 6 * m;
    }
    throw config_error("layer_mapping: unknown variant");
}

std::vector<int> mapping_layers(mapping_variant variant) {
    std::vector<int> out;
    for (int m = 1; m <= k_enc_blocks; ++m) out.push_back(layer_mapping(m, variant));
    return out;
}

mapping_variant parse_mapping(const std::string& name) {
    if (name == "balanced") return mapping_variant::balanced;
    if (name == "late") return mapping_variant::late;
    if (name == "early") return mapping_variant::early;
    throw config_error("unknown mapping variant '" + name + "'");
}

supervision_mode parse_supervision(const std::string& name) {
    if (name == "full") return supervision_mode::full;
    if (name == "final") return supervision_mode::final_only;
    if (name == "single") return supervision_mode::single;
    throw config_error("unknown supervision mode '" + name + "'");
}

const char* mapping_name(mapping_variant v) {
    switch (v) {
        case mapping_variant::balanced: return "balanced";
        case mapping_variant::late: return "late";
        case mapping_variant::early: return "early";
    }
    return "?";
}

const char* supervision_name(supervision_mode m) {
    switch (m) {
        case supervision_mode::full: return "full";
        case supervision_mode::final_only: return "final";
        case supervision_mode::single: return "single";
    }
    return "?";
}

encoder_model build_encoder(uint64_t seed) {
    encoder_model e;
    rng r(seed);
    const int tokens = k_teacher_tokens;
    const int w = k_enc_width;
    auto init = [&](std::vector<int> shape, int fan_in) {
        return randn(r, std::move(shape), real(1) / std::sqrt(real(fan_in)));
    };
    e.stem_w = e.params.add("stem_w", init({k_signal_dim, tokens * w}, k_signal_dim));
    e.stem_b = e.params.add("stem_b", zeros({tokens * w}), false);
    for (int l = 0; l < k_enc_blocks; ++l) {
        vit_block_params bp;
        std::string p = "block" + std::to_string(l) + ".";
        bp.norm1_gain = e.params.add(p + "n1", ones({w}), false);
        bp.norm2_gain = e.params.add(p + "n2", ones({w}), false);
        bp.attn.wq = e.params.add(p + "wq", init({w, w}, w));
        bp.attn.wk = e.params.add(p + "wk", init({w, w}, w));
        bp.attn.wv = e.params.add(p + "wv", init({w, w}, w));
        bp.attn.wo = e.params.add(p + "wo", init({w, w}, 2 * w));
        bp.ffn.w_gate = e.params.add(p + "wg", init({w, k_enc_ffn}, w));
        bp.ffn.w_up = e.params.add(p + "wu", init({w, k_enc_ffn}, w));
        bp.ffn.w_down = e.params.add(p + "wd", init({k_enc_ffn, w}, 2 * k_enc_ffn));
        e.blocks.push_back(bp);
        e.tap_w.push_back(
            e.params.add(p + "tap_w", init({w, k_teacher_width}, w)));
        e.tap_b.push_back(e.params.add(p + "tap_b", zeros({k_teacher_width}), false));
    }
    e.w_emb = e.params.add("w_emb", init({k_teacher_width, k_embed_dim}, k_teacher_width));
    e.pos.push_back({real(-1), real(-1)});
    for (int i = 0; i < k_teacher_grid; ++i)
        for (int j = 0; j < k_teacher_grid; ++j)
            e.pos.push_back({static_cast<real>(i), static_cast<real>(j)});
    e.mask = attn_mask::full(tokens, tokens);
    return e;
}

feature_hierarchy encode_signal(graph& g, const encoder_model& m, const tptr& x) {
    if (!x || x->rank() != 2 || x->dim(0) != 1 || x->dim(1) != k_signal_dim)
        throw config_error("encode_signal: expected a [1," + std::to_string(k_signal_dim) +
                           "] signal");
    auto stem = linear(g, x, m.stem_w, m.stem_b);
    auto h = reshape(g, stem, {k_teacher_tokens, k_enc_width});
    feature_hierarchy out;
    for (int l = 0; l < k_enc_blocks; ++l) {
        h = vit_block(g, h, m.blocks[l], m.mask, m.pos, k_enc_heads, true);
        out.levels.push_back(linear(g, h, m.tap_w[l], m.tap_b[l]));
    }
    out.emb = pooled_level_embedding(g, m, out, k_enc_blocks);
    return out;
}

tptr pooled_level_embedding(graph& g, const encoder_model& m, const feature_hierarchy& h,
                            int level) {
    if (level < 1 || level > static_cast<int>(h.levels.size()))
        throw config_error("pooled_level_embedding: level out of range");
    auto pooled = mean_pool_rows(g, h.levels[level - 1]);
    return l2_normalize_rows(g, linear(g, pooled, m.w_emb));
}

tptr cascaded_mse_loss(graph& g, const std::vector<tptr>& pred, const std::vector<tptr>& target,
                       bool final_only) {
    if (pred.size() != target.size() || pred.empty())
        throw config_error("cascaded_mse_loss: level count mismatch");
    tptr loss;
    const size_t first = final_only ? pred.size() - 1 : 0;
    for (size_t m = first; m < pred.size(); ++m) {
        require_same_shape(*pred[m], *target[m], "cascaded_mse_loss");
        auto term = sq_diff_sum(g, l2_normalize_rows(g, pred[m]),
                                l2_normalize_rows(g, target[m]));
        loss = loss ? add(g, loss, term) : term;
    }
    return loss;
}

tptr softclip_loss(graph& g, const tptr& e_hat, const tptr& v_emb, const tptr& t_emb, real tau) {
    if (tau <= 0) throw config_error("softclip_loss: tau must be positive");
    const int B = e_hat->dim(0);
    if (v_emb->dim(0) != B || t_emb->dim(0) != B)
        throw config_error("softclip_loss: batch sizes differ");
    std::vector<int> diag(B);
    for (int i = 0; i < B; ++i) diag[i] = i;
    auto sim_v = scale(g, matmul_nt(g, e_hat, v_emb), real(1) / tau);
    auto sim_t = scale(g, matmul_nt(g, e_hat, t_emb), real(1) / tau);
    return add(g, cross_entropy_mean(g, sim_v, diag), cross_entropy_mean(g, sim_t, diag));
}

encoder_losses encoder_train_step(encoder_model& m, const encoder_batch& batch,
                                  supervision_mode mode, real tau, const adamw_config& cfg) {
    const size_t B = batch.signals.size();
    if (B == 0) throw config_error("encoder_train_step: empty batch");
    if (batch.teacher_levels.size() != B || batch.image_embeds.size() != B ||
        batch.text_embeds.size() != B)
        throw config_error("encoder_train_step: batch field sizes differ");
    m.params.zero_grad();
    graph g;
    tptr mse_sum;
    std::vector<tptr> ehat_rows, v_rows, t_rows;
    const bool final_only = mode != supervision_mode::full;
    for (size_t i = 0; i < B; ++i) {
        auto h = encode_signal(g, m, batch.signals[i]);
        auto term = cascaded_mse_loss(g, h.levels, batch.teacher_levels[i], final_only);
        mse_sum = mse_sum ? add(g, mse_sum, term) : term;
        ehat_rows.push_back(h.emb);
        v_rows.push_back(batch.image_embeds[i]);
        t_rows.push_back(batch.text_embeds[i]);
    }
    auto mse_mean = scale(g, mse_sum, real(1) / static_cast<real>(B));
    auto clip = softclip_loss(g, concat_rows(g, ehat_rows), concat_rows(g, v_rows),
                              concat_rows(g, t_rows), tau);
    auto total = add(g, mse_mean, clip);
    check_finite(*total, "encoder loss");
    g.backward(total);
    adamw_step(m.params, cfg);
    encoder_losses out;
    out.mse = mse_mean->v[0];
    out.softclip = clip->v[0];
    out.total = total->v[0];
    return out;
}

container encoder_to_container(const encoder_model& m) { return m.params.to_container(); }

encoder_model encoder_from_container(const container& c) {
    encoder_model m = build_encoder(0);
    m.params.load_values(c);
    return m;
}

} // namespace hiergen
