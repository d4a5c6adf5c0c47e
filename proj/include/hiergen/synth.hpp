#pragma once

// Synthetic paired data: latent scenes rendered to 32x32 images, signals
// produced by a fixed random mixing of the scene latents. Everything is
// deterministic given the dataset seed; sample i uses a seed derived from
// (seed, i), so generation order never matters.

#include <cstdint>
#include <vector>

#include "hiergen/container.hpp"
#include "hiergen/rng.hpp"
#include "hiergen/tensor.hpp"

namespace hiergen {

constexpr int k_canvas = 32;        // image height and width
constexpr int k_signal_dim = 256;   // synthetic voxel count V
constexpr int k_label_count = 16;
constexpr int k_max_objects = 3;
constexpr int k_object_latent = 15;
// per-object slots plus (count, background rgb)
constexpr int k_latent_dim = k_max_objects * k_object_latent + 4;
constexpr int k_mix_features = 64;  // random cosine features stacked on the latents
constexpr real k_default_noise_sigma = real(0.05);

enum class shape_kind : int { rectangle = 0, disc = 1, cross = 2 };

struct scene_object {
    bool present = false;
    shape_kind shape = shape_kind::rectangle;
    real color[3] = {0, 0, 0};
    real cx = 0, cy = 0;  // center, canvas units in [0,1]
    real size = 0;        // characteristic half extent
    real rot = 0;         // radians
    real aspect = 1;      // axis stretch
    real thickness = 0;   // cross bar width as a fraction of size
    real softness = 0;    // edge smoothing in [0,1]
};

// object 0 is the labeled primary: its shape is label % 3 and its hue is set
// by the label so the class stays visible in pixels; it is drawn last
struct synthetic_scene {
    int label = 0;
    int count = 1;  // objects present, 1..3
    scene_object obj[k_max_objects];
    real bg[3] = {0, 0, 0};

    // flattened latent code of length k_latent_dim; absent object slots are zero
    std::vector<real> latents() const;
};

synthetic_scene sample_scene(rng& r, int label);

// soft-edged SDF compositing; out is [32,32,3] row-major, values in [0,1]
void render_scene(const synthetic_scene& s, real* out);

// x = W_mix . [z; cos(Omega z + b)] + noise. The maps are fixed once built.
struct signal_mixer {
    std::vector<real> w_mix;  // [k_signal_dim, k_latent_dim + k_mix_features]
    std::vector<real> omega;  // [k_mix_features, k_latent_dim]
    std::vector<real> phase;  // [k_mix_features]

    explicit signal_mixer(uint64_t seed);
    // sigma = 0 makes the signal an exact function of the latents
    void mix(const std::vector<real>& z, rng& noise, real sigma, real* out) const;
};

struct dataset {
    int count = 0;
    int64_t seed = 0;
    std::vector<real> signals;    // [count, k_signal_dim]
    std::vector<real> images;     // [count, 32, 32, 3]
    std::vector<int32_t> labels;  // [count]

    const real* signal(int i) const { return signals.data() + int64_t(i) * k_signal_dim; }
    const real* image(int i) const {
        return images.data() + int64_t(i) * k_canvas * k_canvas * 3;
    }
    tptr image_tensor(int i) const;
    tptr signal_row(int i) const;  // [1, k_signal_dim]
};

dataset synth_generate(int count, uint64_t seed, real noise_sigma = k_default_noise_sigma);

container dataset_to_container(const dataset& d);
dataset dataset_from_container(const container& c);

} // namespace hiergen
