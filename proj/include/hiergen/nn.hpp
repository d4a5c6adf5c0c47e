#pragma once

// Transformer building blocks composed from autodiff primitives.

#include "hiergen/autodiff.hpp"

namespace hiergen {

// silu(x @ W_gate) * (x @ W_up) @ W_down
tptr swiglu_ffn(graph& g, const tptr& x, const tptr& w_gate, const tptr& w_up,
                const tptr& w_down);

// Multi-head scaled dot-product attention over projected q/k/v.
//   q: [Tq,d], k,v: [Tk,d], d % heads == 0, scores scaled by 1/sqrt(d/heads).
// qk_norm applies per-head RMS normalization (unit gain) to queries and keys.
// qpos/kpos, when given, apply 2D rotary embedding per head before scoring.
// Disallowed (query,key) pairs get exactly zero weight; a fully masked query
// row raises mask_error.
tptr masked_attention(graph& g, const tptr& q, const tptr& k, const tptr& v,
                      const attn_mask& mask, int heads, bool qk_norm,
                      const pos_list* qpos = nullptr, const pos_list* kpos = nullptr);

// LN(x) * (1 + gamma) + beta with (gamma, beta) = cond @ w_mod split in two.
// cond: [1,dc], w_mod: [dc,2d]. Zero w_mod reduces to plain layer norm.
tptr adaln_modulate(graph& g, const tptr& x, const tptr& cond, const tptr& w_mod);

struct attn_params {
    tptr wq, wk, wv, wo;
};

struct ffn_params {
    tptr w_gate, w_up, w_down;
};

// pre-norm ViT block: x += wo(attn(rms(x))); x += ffn(rms(x))
struct vit_block_params {
    tptr norm1_gain, norm2_gain;
    attn_params attn;
    ffn_params ffn;
};

tptr vit_block(graph& g, const tptr& x, const vit_block_params& p, const attn_mask& mask,
               const pos_list& pos, int heads, bool qk_norm);

} // namespace hiergen
