#include "hiergen/teacher.hpp"

#include <cmath>
#include <string>

#include "hiergen/synth.hpp"

namespace hiergen {

namespace {

constexpr uint64_t k_teacher_seed = 0x7e3a91c45d20f6b1ull;
constexpr int k_patch_in = k_teacher_patch * k_teacher_patch * 3;
constexpr int k_teacher_ffn = 64;

// residual branches are damped so 24 pre-norm blocks stay well scaled
tptr init_param(rng& r, std::vector<int> shape, real scale) {
    return randn(r, std::move(shape), scale);
}

bool text_table_separated(const std::vector<real>& rows) {
    for (int a = 0; a < k_label_count; ++a) {
        for (int b = a + 1; b < k_label_count; ++b) {
            double dot = 0;
            for (int j = 0; j < k_embed_dim; ++j)
                dot += double(rows[a * k_embed_dim + j]) * double(rows[b * k_embed_dim + j]);
            if (std::abs(dot) >= 0.9) return false;
        }
    }
    return true;
}

} // namespace

teacher_model build_teacher() {
    teacher_model t;
    rng r(k_teacher_seed);
    real w = real(1) / std::sqrt(real(k_teacher_width));
    t.patch_w = t.params.add("patch_w", init_param(r, {k_patch_in, k_teacher_width},
                                                   real(1) / std::sqrt(real(k_patch_in))));
    t.patch_b = t.params.add("patch_b", zeros({k_teacher_width}));
    t.slot = t.params.add("slot", init_param(r, {1, k_teacher_width}, real(1)));
    for (int l = 0; l < k_teacher_depth; ++l) {
        vit_block_params bp;
        std::string p = "block" + std::to_string(l) + ".";
        bp.norm1_gain = t.params.add(p + "n1", ones({k_teacher_width}));
        bp.norm2_gain = t.params.add(p + "n2", ones({k_teacher_width}));
        bp.attn.wq = t.params.add(p + "wq", init_param(r, {k_teacher_width, k_teacher_width}, w));
        bp.attn.wk = t.params.add(p + "wk", init_param(r, {k_teacher_width, k_teacher_width}, w));
        bp.attn.wv = t.params.add(p + "wv", init_param(r, {k_teacher_width, k_teacher_width}, w));
        bp.attn.wo =
            t.params.add(p + "wo", init_param(r, {k_teacher_width, k_teacher_width}, w * real(0.4)));
        bp.ffn.w_gate =
            t.params.add(p + "wg", init_param(r, {k_teacher_width, k_teacher_ffn}, w));
        bp.ffn.w_up = t.params.add(p + "wu", init_param(r, {k_teacher_width, k_teacher_ffn}, w));
        bp.ffn.w_down = t.params.add(
            p + "wd", init_param(r, {k_teacher_ffn, k_teacher_width},
                                 real(0.4) / std::sqrt(real(k_teacher_ffn))));
        t.blocks.push_back(bp);
    }
    t.w_proj = t.params.add("w_proj", init_param(r, {k_teacher_width, k_embed_dim}, w));

    // text rows are resampled as a set until all pairs are clearly separated
    rng rt(derive_seed(k_teacher_seed, 7));
    std::vector<real> rows;
    for (int attempt = 0; attempt < 64; ++attempt) {
        rows.assign(size_t(k_label_count) * k_embed_dim, real(0));
        for (int a = 0; a < k_label_count; ++a) {
            double n2 = 0;
            for (int j = 0; j < k_embed_dim; ++j) {
                rows[a * k_embed_dim + j] = rt.gaussian();
                n2 += double(rows[a * k_embed_dim + j]) * double(rows[a * k_embed_dim + j]);
            }
            real inv = static_cast<real>(1.0 / std::sqrt(n2));
            for (int j = 0; j < k_embed_dim; ++j) rows[a * k_embed_dim + j] *= inv;
        }
        if (text_table_separated(rows)) break;
        if (attempt == 63) throw numeric_error("teacher: text table failed separation");
    }
    t.text_table = t.params.add("text_table", from_values({k_label_count, k_embed_dim}, rows));

    t.pos.push_back({real(-1), real(-1)});
    for (int i = 0; i < k_teacher_grid; ++i)
        for (int j = 0; j < k_teacher_grid; ++j)
            t.pos.push_back({static_cast<real>(i), static_cast<real>(j)});
    t.mask = attn_mask::full(k_teacher_tokens, k_teacher_tokens);
    t.content_hash = t.params.values_hash();
    return t;
}

teacher_features teacher_vision(const teacher_model& t, const tptr& image) {
    if (!image || image->shape != std::vector<int>{k_canvas, k_canvas, 3})
        throw config_error("teacher_vision: expected a 32x32x3 image");
    graph g;
    g.recording = false;
    int oh = 0, ow = 0;
    auto patches = im2col(g, image, k_teacher_patch, k_teacher_patch, k_teacher_patch, 0, oh, ow);
    auto grid = linear(g, patches, t.patch_w, t.patch_b);
    auto x = concat_rows(g, {t.slot, grid});
    teacher_features out;
    out.layers.reserve(k_teacher_depth);
    for (const auto& bp : t.blocks) {
        x = vit_block(g, x, bp, t.mask, t.pos, k_teacher_heads, true);
        out.layers.push_back(detach(x));
    }
    auto pooled = slice_rows(g, x, 0, 1);
    out.embed = detach(l2_normalize_rows(g, linear(g, pooled, t.w_proj)));
    return out;
}

tptr teacher_text(const teacher_model& t, int label) {
    if (label < 0 || label >= k_label_count)
        throw data_error("teacher_text: label " + std::to_string(label) + " out of range");
    auto row = make_tensor({1, k_embed_dim});
    for (int j = 0; j < k_embed_dim; ++j) row->v[j] = t.text_table->v[label * k_embed_dim + j];
    return row;
}

uint64_t teacher_hash(const teacher_model& t) { return t.params.values_hash(); }

} // namespace hiergen
