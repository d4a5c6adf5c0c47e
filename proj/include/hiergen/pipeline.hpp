#pragma once

// Stage orchestration behind the CLI. Artifacts are content-addressed: each
// stage hashes the config fields its output depends on (including everything
// upstream) and embeds the hash in the artifact name, so runs with different
// configs can never silently mix. Every stage writes a JSON manifest next to
// its artifact recording the config, input hashes and output hashes. No
// timestamps anywhere; rerunning a stage with the same config and inputs
// rewrites byte-identical files.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hiergen/encoder.hpp"
#include "hiergen/synth.hpp"
#include "hiergen/tokenizer.hpp"

namespace hiergen {

struct run_config {
    uint64_t seed = 7;
    std::string out_dir;  // empty resolves via HIERGEN_OUT, then "out"

    // data
    int count = 2304;  // train_count + eval_count by default
    real noise_sigma = k_default_noise_sigma;
    int train_count = 2048;
    int eval_count = 256;

    // model
    std::string schedule_csv = "1,2,4,8,16";
    int n_codes = k_codebook_size;
    real tau = k_softclip_tau;
    int gen_depth = 4;

    // training
    int tok_steps = 700;
    int tok_batch = 8;
    real tok_lr = real(3e-3);
    int tok_warmup = 30;
    int enc_steps = 500;
    int enc_batch = 8;
    real enc_lr = real(1e-3);
    int enc_warmup = 30;
    int gen_steps = 400;
    int gen_batch = 4;
    real gen_lr = real(1e-3);
    int gen_warmup = 40;

    // modes
    std::string supervision = "full";     // full | final | single
    std::string route = "coarse2fine";    // coarse2fine | inverted
    std::string mapping = "balanced";     // balanced | late | early
    bool greedy = true;
    int top_k = 8;
    real temperature = real(1);
    int n_candidates = 1;
    int trials = 64;  // two-way identification trials per sample

    // bench
    int raster_side = 16;
};

// flag value wins, then the HIERGEN_OUT environment variable, then "out"
std::string resolve_out_dir(const std::string& flag_value);

// sorted key=value lines for the config fields governing a stage's output
std::string stage_config_lines(const run_config& c, const std::string& stage);
uint64_t stage_config_hash(const run_config& c, const std::string& stage);
std::string stage_hash_hex(const run_config& c, const std::string& stage);

std::string dataset_path(const run_config& c);
std::string tokenizer_path(const run_config& c);
std::string encoder_path(const run_config& c);
std::string generator_path(const run_config& c);
std::string recons_path(const run_config& c);
std::string report_text_path(const run_config& c);
std::string report_sidecar_path(const run_config& c);
std::string bench_text_path(const run_config& c);

// throws dependency_error naming the artifact and the stage that makes it
void require_artifact(const std::string& path, const std::string& producer);

struct stage_result {
    std::vector<std::string> artifacts;  // files written, manifest last
    std::vector<std::pair<std::string, std::string>> notes;  // printed as key=value
};

stage_result stage_gen_data(const run_config& c);
stage_result stage_train_tokenizer(const run_config& c);
stage_result stage_train_encoder(const run_config& c);
stage_result stage_train_generator(const run_config& c);
stage_result stage_reconstruct(const run_config& c);
stage_result stage_evaluate(const run_config& c);
stage_result stage_bench(const run_config& c);
stage_result stage_gradcheck(const run_config& c);  // throws numeric_error on failure

} // namespace hiergen
