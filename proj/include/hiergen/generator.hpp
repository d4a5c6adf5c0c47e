#pragma once

// Scale-wise autoregressive transformer over the token pyramid. The input
// sequence holds one block per scale: block 1 is a start token built from
// the signal embedding, block k>1 carries the dequantized prefix resampled
// to scale k's grid. Self-attention is block-causal (full within a scale,
// causal across scales); each scale cross-attends to exactly one hierarchy
// level chosen by the guidance index.

#include <cstdint>
#include <string>
#include <vector>

#include "hiergen/encoder.hpp"
#include "hiergen/teacher.hpp"
#include "hiergen/tokenizer.hpp"

namespace hiergen {

constexpr int k_gen_layers = 4;
constexpr int k_gen_width = 64;
constexpr int k_gen_heads = 4;
constexpr int k_gen_ffn = 128;

// h_k = M - floor(M*(k-1)/K); requires 1 <= k <= K and M <= K
int guidance_index(int k, int K, int M);

struct guidance_route {
    int K = 0;
    int M = 0;
    bool inverted = false;  // fine-to-coarse: seed with level 1, end at M

    void validate() const;
    // hierarchy level feeding scale k (1-based)
    int level_for(int k) const;
    std::vector<int> table() const;
};

// cross-attention mask: rows are all schedule tokens in scale order, cols are
// M stacked hierarchy levels of tokens_per_level each; scale k's block may
// attend only to level level_for(k)'s block
attn_mask build_guidance_mask(const scale_schedule& schedule, const guidance_route& route,
                              int tokens_per_level);

// block-causal self mask over the first `upto` scales
attn_mask build_scale_causal_mask(const scale_schedule& schedule, int upto);

struct gen_layer_params {
    tptr mod_sa, mod_ca, mod_ffn;  // AdaLN modulation maps, zero-initialized
    tptr wq, wk, wv, wo;           // self attention
    tptr cq, ck, cv, co;           // cross attention onto the guidance stack
    ffn_params ffn;
};

struct generator_model {
    param_store params;
    tptr w_start;  // [d_emb, width]
    tptr w_in;     // [code_dim, width]
    tptr w_guide;  // [teacher_width, width]
    std::vector<gen_layer_params> layers;
    tptr mod_out;  // final AdaLN before the head
    tptr w_head;   // [width, n_codes]
    scale_schedule schedule;
    int n_codes = k_codebook_size;
    int depth = k_gen_layers;
};

generator_model build_generator(uint64_t seed, scale_schedule schedule,
                                int n_codes = k_codebook_size, int depth = k_gen_layers);

// guidance levels fed to the generator: the hierarchy as-is, or the terminal
// level replicated at every slot in single-feature mode
std::vector<tptr> make_guidance_levels(const feature_hierarchy& h, supervision_mode mode);

// start embedding per route: pooled projection of the level driving scale 1
tptr route_start_embedding(graph& g, const encoder_model& enc, const feature_hierarchy& h,
                           const guidance_route& route);

// Logits for input blocks 1..upto, stacked: [sum_{k<=upto} n_k, n_codes].
// prefix must hold token maps for scales 1..upto-1. Teacher forcing is
// upto == K with the ground-truth pyramid as prefix.
tptr scalewise_logits(graph& g, const generator_model& gm, const tptr& codebook,
                      const token_pyramid& prefix, int upto, const tptr& start_emb,
                      const tptr& cond, const std::vector<tptr>& guidance_levels,
                      const guidance_route& route);

struct generator_sample {
    token_pyramid pyramid;
    std::vector<tptr> guidance_levels;
    tptr start_emb;  // [1, d_emb]
    tptr cond;       // [1, d_emb]
};

// one AdamW step of teacher-forced cross entropy over every token position
real generator_train_step(generator_model& gm, const tptr& codebook,
                          const std::vector<generator_sample>& batch, const guidance_route& route,
                          const adamw_config& cfg);

struct sampling_config {
    bool greedy = true;
    int top_k = 8;
    real temperature = real(1);
    uint64_t seed = 0;
};

// scale-by-scale decoding; greedy mode is a pure function of its inputs
token_pyramid generate(const generator_model& gm, const tptr& codebook, const tptr& start_emb,
                       const tptr& cond, const std::vector<tptr>& guidance_levels,
                       const guidance_route& route, const sampling_config& samp);

// encode the signal, draw n_candidates pyramids, decode each, return the
// image whose teacher embedding best matches the signal embedding; the
// winning pyramid is copied to out_tokens when non-null
tptr reconstruct_with_selection(const encoder_model& enc, const tokenizer_model& tok,
                                const generator_model& gm, const teacher_model& teacher,
                                const tptr& signal, const guidance_route& route,
                                supervision_mode mode, int n_candidates,
                                const sampling_config& samp,
                                token_pyramid* out_tokens = nullptr);

container generator_to_container(const generator_model& gm);
generator_model generator_from_container(const container& c);

} // namespace hiergen
