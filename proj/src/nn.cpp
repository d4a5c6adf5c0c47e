#include "hiergen/nn.hpp"

#include <cmath>

#include "hiergen/kernels.hpp"

namespace hiergen {

tptr swiglu_ffn(graph& g, const tptr& x, const tptr& w_gate, const tptr& w_up,
                const tptr& w_down) {
    auto gate = silu(g, linear(g, x, w_gate));
    auto up = linear(g, x, w_up);
    return linear(g, mul(g, gate, up), w_down);
}

tptr masked_attention(graph& g, const tptr& q, const tptr& k, const tptr& v,
                      const attn_mask& mask, int heads, bool qk_norm, const pos_list* qpos,
                      const pos_list* kpos) {
    const int Tq = q->rows(), d = q->cols();
    const int Tk = k->rows();
    if (k->cols() != d || v->cols() != d || v->rows() != Tk)
        throw dim_error("masked_attention: q/k/v width mismatch");
    if (heads <= 0 || d % heads != 0)
        throw config_error("masked_attention: width not divisible by head count");
    if (mask.q_len != Tq || mask.k_len != Tk)
        throw dim_error("masked_attention: mask extent mismatch");
    mask.validate();
    const int hd = d / heads;
    const real inv_sqrt = static_cast<real>(1.0 / std::sqrt(static_cast<double>(hd)));

    if (g_count_attention_pairs)
        g_attention_pairs += mask.allowed_pairs();

    tptr unit_gain;
    if (qk_norm) unit_gain = ones({hd});

    std::vector<tptr> head_outs;
    head_outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        auto qh = slice_cols(g, q, h * hd, (h + 1) * hd);
        auto kh = slice_cols(g, k, h * hd, (h + 1) * hd);
        auto vh = slice_cols(g, v, h * hd, (h + 1) * hd);
        if (qk_norm) {
            qh = rmsnorm(g, qh, unit_gain);
            kh = rmsnorm(g, kh, unit_gain);
        }
        if (qpos) qh = rope2d(g, qh, *qpos);
        if (kpos) kh = rope2d(g, kh, *kpos);
        auto scores = scale(g, matmul_nt(g, qh, kh), inv_sqrt);
        auto weights = masked_softmax_rows(g, scores, mask);
        head_outs.push_back(matmul(g, weights, vh));
    }
    return concat_cols(g, head_outs);
}

tptr adaln_modulate(graph& g, const tptr& x, const tptr& cond, const tptr& w_mod) {
    const int d = x->cols();
    if (w_mod->rank() != 2 || w_mod->dim(1) != 2 * d)
        throw dim_error("adaln_modulate: w_mod must map cond to 2x row width");
    auto c2 = cond->rank() == 1 ? reshape(g, cond, {1, cond->dim(0)}) : cond;
    auto mod = linear(g, c2, w_mod);
    return adaln_affine(g, layernorm_rows(g, x), mod);
}

tptr vit_block(graph& g, const tptr& x, const vit_block_params& p, const attn_mask& mask,
               const pos_list& pos, int heads, bool qk_norm) {
    auto h = rmsnorm(g, x, p.norm1_gain);
    auto q = linear(g, h, p.attn.wq);
    auto k = linear(g, h, p.attn.wk);
    auto v = linear(g, h, p.attn.wv);
    auto att = masked_attention(g, q, k, v, mask, heads, qk_norm, &pos, &pos);
    auto x1 = add(g, x, linear(g, att, p.attn.wo));
    auto h2 = rmsnorm(g, x1, p.norm2_gain);
    return add(g, x1, swiglu_ffn(g, h2, p.ffn.w_gate, p.ffn.w_up, p.ffn.w_down));
}

} // namespace hiergen
