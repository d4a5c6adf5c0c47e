#pragma once

// Hierarchical signal encoder: a linear stem lifts the signal to a token
// grid, M cascaded transformer blocks refine it, and per-block taps emit a
// feature hierarchy shaped like the teacher's hidden layers. Trained to
// align level m with teacher layer g_m (token-wise MSE on normalized tokens)
// plus a symmetric-free contrastive term on the terminal embedding.

#include <cstdint>
#include <vector>

#include "hiergen/nn.hpp"
#include "hiergen/optim.hpp"
#include "hiergen/rng.hpp"
#include "hiergen/teacher.hpp"

namespace hiergen {

constexpr int k_enc_blocks = 4;  // M
constexpr int k_enc_width = 64;
constexpr int k_enc_heads = 4;
constexpr int k_enc_ffn = 128;
constexpr real k_softclip_tau = real(0.07);

enum class mapping_variant { balanced, late, early };
enum class supervision_mode { full, final_only, single };

// teacher layer aligned with encoder block m (1-based); balanced: 8+4m,
// late: 16+2m, early: 6m
int layer_mapping(int m, mapping_variant variant);
std::vector<int> mapping_layers(mapping_variant variant);  // m = 1..M

mapping_variant parse_mapping(const std::string& name);
supervision_mode parse_supervision(const std::string& name);
const char* mapping_name(mapping_variant v);
const char* supervision_name(supervision_mode m);

struct encoder_model {
    param_store params;
    tptr stem_w, stem_b;  // [V, tokens * width]
    std::vector<vit_block_params> blocks;
    std::vector<tptr> tap_w, tap_b;  // per block: [width, teacher_width]
    tptr w_emb;                      // [teacher_width, d_emb]
    pos_list pos;
    attn_mask mask;  // full over the token grid
};

encoder_model build_encoder(uint64_t seed);

struct feature_hierarchy {
    std::vector<tptr> levels;  // M entries of [17, teacher_width]
    tptr emb;                  // [1, d_emb], unit norm (from the final level)
};

// x: [1, k_signal_dim]
feature_hierarchy encode_signal(graph& g, const encoder_model& m, const tptr& x);

// unit-norm projected mean pool of one hierarchy level (1-based); the
// terminal embedding is pooled_level_embedding(M)
tptr pooled_level_embedding(graph& g, const encoder_model& m, const feature_hierarchy& h,
                            int level);

// sum over levels of || l2(pred_m) - l2(target_m) ||^2, token-wise
// normalization; levels beyond the supervised set contribute nothing
tptr cascaded_mse_loss(graph& g, const std::vector<tptr>& pred,
                       const std::vector<tptr>& target, bool final_only);

// -(1/B) sum_i [ log softmax_j(e_i . v_j / tau)_i + log softmax_j(e_i . t_j / tau)_i ]
tptr softclip_loss(graph& g, const tptr& e_hat, const tptr& v_emb, const tptr& t_emb, real tau);

struct encoder_batch {
    std::vector<tptr> signals;                      // each [1, V]
    std::vector<std::vector<tptr>> teacher_levels;  // per sample, M mapped layers
    std::vector<tptr> image_embeds;                 // each [1, d_emb], unit
    std::vector<tptr> text_embeds;                  // each [1, d_emb], unit
};

struct encoder_losses {
    real mse = 0;
    real softclip = 0;
    real total = 0;
};

encoder_losses encoder_train_step(encoder_model& m, const encoder_batch& batch,
                                  supervision_mode mode, real tau, const adamw_config& cfg);

container encoder_to_container(const encoder_model& m);
encoder_model encoder_from_container(const container& c);

} // namespace hiergen
