#pragma once

// Reconstruction quality metrics: pixel correlation, SSIM, two-way
// identification over embeddings, and correlation distance, plus the report
// writer that bundles them per evaluation run.

#include <cstdint>
#include <string>
#include <vector>

#include "hiergen/teacher.hpp"
#include "hiergen/tensor.hpp"

namespace hiergen {

// Pearson correlation of two length-n sequences; a zero-variance side makes
// the value 0 and sets *degenerate
double pearson(const real* a, const real* b, int64_t n, bool* degenerate = nullptr);

// Pearson over flattened pixels; zero-variance input gives 0 with the flag set
double pixcorr(const tptr& a, const tptr& b, bool* degenerate = nullptr);

// mean local SSIM, 7x7 Gaussian window (sigma 1.5), C1=0.01^2, C2=0.03^2 on
// unit dynamic range, valid windows only; rgb collapses to the channel mean
double ssim(const tptr& a, const tptr& b);

// fraction of (pair, random distractor) trials where the matched similarity
// wins; ties score 0.5. sim is the n x n matrix sim[i*n+j] = sim(true_i, recon_j).
double two_way_from_sim(const std::vector<double>& sim, int n, int trials, uint64_t seed);

// similarity = Pearson over embedding rows [n, d]
double two_way_identification(const tptr& true_embeds, const tptr& recon_embeds, int trials,
                              uint64_t seed);

// mean over rows of 1 - Pearson(a_i, b_i); zero-variance rows contribute
// distance 1 and count as warnings
double correlation_distance(const tptr& a, const tptr& b, int* warnings = nullptr);

struct eval_report {
    int count = 0;
    double pixcorr_mean = 0;
    double ssim_mean = 0;
    double two_way = 0;
    double corr_distance = 0;
    int warnings = 0;
    uint64_t seed = 0;
    std::vector<real> pixcorr_per;  // per sample
    std::vector<real> ssim_per;
    std::vector<real> corr_distance_per;
};

// truth/recon are aligned [32,32,3] images; embedding metrics run on the
// teacher's shared-space embeddings of both sides
eval_report evaluate_suite(const std::vector<tptr>& truth, const std::vector<tptr>& recon,
                           const teacher_model& teacher, int trials, uint64_t seed);

// report as `metric=value` lines plus free-form metadata lines, and a
// container sidecar with the per-sample values
void write_eval_report(const std::string& text_path, const std::string& sidecar_path,
                       const eval_report& r, const std::vector<std::string>& metadata);

} // namespace hiergen
