#pragma once

// Frozen random vision teacher: a seed-built ViT over 32x32 images exposing
// all hidden layers, a projected unit-norm image embedding, and a fixed text
// embedding table keyed by class label. Weights never change after
// construction; content_hash makes that checkable.

#include <cstdint>
#include <vector>

#include "hiergen/nn.hpp"
#include "hiergen/optim.hpp"

namespace hiergen {

constexpr int k_teacher_depth = 24;
constexpr int k_teacher_width = 32;
constexpr int k_teacher_patch = 8;
constexpr int k_teacher_grid = 4;    // 32 / 8 per axis
constexpr int k_teacher_tokens = 17; // pooled slot + 4x4 grid
constexpr int k_teacher_heads = 4;
constexpr int k_embed_dim = 32;      // shared image/text embedding width

struct teacher_model {
    param_store params;  // frozen after build
    tptr patch_w, patch_b;  // [192, 32], [32]
    tptr slot;              // [1, 32] learned-free pooled token seed
    std::vector<vit_block_params> blocks;
    tptr w_proj;            // [32, 32] projection into the shared space
    tptr text_table;        // [16, 32], unit-norm rows
    pos_list pos;           // slot at (-1,-1), grid tokens at their cell
    attn_mask mask;         // full 17x17
    uint64_t content_hash = 0;
};

// deterministic: the seed is internal and fixed
teacher_model build_teacher();

struct teacher_features {
    std::vector<tptr> layers;  // k_teacher_depth entries of [17, 32]
    tptr embed;                // [1, 32], unit norm
};

// pure forward; image is [32,32,3]
teacher_features teacher_vision(const teacher_model& t, const tptr& image);

// label embedding row as [1, 32]; label outside [0,16) raises data_error
tptr teacher_text(const teacher_model& t, int label);

// hash of every parameter value; equals content_hash while the teacher is intact
uint64_t teacher_hash(const teacher_model& t);

} // namespace hiergen
