#pragma once

// Multi-scale residual vector-quantized autoencoder. An image becomes a
// continuous feature map, the map becomes K token grids over one shared
// codebook (coarse to fine, each scale quantizing what the previous scales
// left over), and the summed code grids decode back to an image.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hiergen/autodiff.hpp"
#include "hiergen/optim.hpp"
#include "hiergen/rng.hpp"

namespace hiergen {

constexpr int k_tok_patch = 2;
constexpr int k_code_dim = 16;      // C, channels of the latent map
constexpr int k_codebook_size = 64; // N, default
constexpr int k_tok_hidden = 32;
constexpr real k_commit_weight = real(0.25);

// sides (h_k, w_k) for k = 1..K; token counts h_k*w_k strictly increasing
struct scale_schedule {
    std::vector<std::pair<int, int>> sides;

    int levels() const { return static_cast<int>(sides.size()); }
    int tokens_at(int k) const { return sides[k].first * sides[k].second; }
    int total_tokens() const;
    std::pair<int, int> final_side() const { return sides.back(); }
    void validate() const;  // config_error on violations
};

scale_schedule default_schedule();  // (1,2,4,8,16) squared
// parses "1,2,4,8,16" into square sides
scale_schedule parse_schedule(const std::string& csv);

// maps[k] holds h_k*w_k code indices, row-major
struct token_pyramid {
    std::vector<std::vector<int32_t>> maps;
    int total() const;
};

struct tokenizer_model {
    param_store params;
    tptr enc_w1, enc_b1, enc_w2, enc_b2;
    tptr dec_w1, dec_b1, dec_w2, dec_b2;
    tptr codebook;  // [N, C]
    scale_schedule schedule;
    int n_codes = k_codebook_size;
};

tokenizer_model build_tokenizer(uint64_t seed, scale_schedule schedule,
                                int n_codes = k_codebook_size);

// image [h,w,3] with h,w divisible by the patch size -> [h/2, w/2, C]
tptr encode_image(graph& g, const tokenizer_model& t, const tptr& image);

// latent map -> image [2h, 2w, 3], sigmoid-bounded to (0,1)
tptr decode_image(graph& g, const tokenizer_model& t, const tptr& fhat);

struct quantize_result {
    token_pyramid pyramid;
    tptr final_residual;  // what the K scales failed to explain
};

// pure function of (f, schedule, Z); per scale: area-downsample the running
// residual, snap each position to its nearest code, bilinearly upsample the
// code grid back, subtract
quantize_result quantize_multiscale(const tptr& f, const scale_schedule& schedule,
                                    const tptr& codebook);

// sum over k of the upsampled code-grid lookups, at the schedule's final
// resolution; gradients flow into the codebook
tptr dequantize(graph& g, const token_pyramid& R, const tptr& codebook,
                const scale_schedule& schedule);

struct tokenizer_losses {
    real recon = 0;
    real codebook = 0;
    real commit = 0;
    real total = 0;
};

// one AdamW step on recon + codebook + 0.25 * commitment, straight-through
// through the quantizer
tokenizer_losses tokenizer_train_step(tokenizer_model& t, const std::vector<tptr>& images,
                                      const adamw_config& cfg);

// encode -> quantize -> dequantize -> decode, no gradients
tptr reconstruct_image(const tokenizer_model& t, const tptr& image);

container tokenizer_to_container(const tokenizer_model& t);
tokenizer_model tokenizer_from_container(const container& c);

} // namespace hiergen
