#include "hiergen/synth.hpp"

#include <algorithm>
#include <cmath>

namespace hiergen {

namespace {

// hue in [0,1) to rgb, s/v in [0,1]
void hsv_to_rgb(real h, real s, real v, real* rgb) {
    real hh = (h - std::floor(h)) * 6;
    int sector = static_cast<int>(hh) % 6;
    real f = hh - std::floor(hh);
    real p = v * (1 - s);
    real q = v * (1 - s * f);
    real t = v * (1 - s * (1 - f));
    switch (sector) {
        case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
        case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
        case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
        case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
        case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
        default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
    }
}

// signed distance to an axis-aligned box with half extents (hx, hy)
real sdf_box(real x, real y, real hx, real hy) {
    real qx = std::abs(x) - hx;
    real qy = std::abs(y) - hy;
    real ox = std::max(qx, real(0));
    real oy = std::max(qy, real(0));
    real outside = std::sqrt(ox * ox + oy * oy);
    real inside = std::min(std::max(qx, qy), real(0));
    return outside + inside;
}

real object_sdf(const scene_object& o, real px, real py) {
    // rotate into the object frame
    real dx = px - o.cx;
    real dy = py - o.cy;
    real c = std::cos(-o.rot);
    real s = std::sin(-o.rot);
    real x = c * dx - s * dy;
    real y = s * dx + c * dy;
    switch (o.shape) {
        case shape_kind::rectangle:
            return sdf_box(x, y, o.size * o.aspect, o.size / o.aspect);
        case shape_kind::disc: {
            real rx = o.size * o.aspect;
            real ry = o.size / o.aspect;
            real n = std::sqrt((x / rx) * (x / rx) + (y / ry) * (y / ry));
            return (n - 1) * std::min(rx, ry);
        }
        case shape_kind::cross: {
            real t = o.thickness * o.size;
            return std::min(sdf_box(x, y, o.size, t), sdf_box(x, y, t, o.size));
        }
    }
    return real(1);
}

void sample_object(rng& r, scene_object& o, bool primary, int label) {
    o.present = true;
    o.shape = primary ? static_cast<shape_kind>(label % 3)
                      : static_cast<shape_kind>(r.uniform_int(3));
    o.size = r.uniform(real(0.10), real(0.16));
    o.aspect = r.uniform(real(0.75), real(1.35));
    o.rot = r.uniform(real(0), real(3.14159265));
    o.thickness = r.uniform(real(0.25), real(0.40));
    o.softness = r.uniform(real(0), real(1));
    real hue, sat, val;
    if (primary) {
        // hue stays inside the label's bin so the class is readable in pixels
        hue = (real(label) + real(0.25) + real(0.5) * r.uniform()) / k_label_count;
        sat = r.uniform(real(0.65), real(0.85));
        val = r.uniform(real(0.78), real(0.95));
    } else {
        hue = r.uniform();
        sat = r.uniform(real(0.3), real(0.6));
        val = r.uniform(real(0.45), real(0.68));
    }
    hsv_to_rgb(hue, sat, val, o.color);
    // keep the whole object inside the canvas
    real reach = o.size * std::max(o.aspect, 1 / o.aspect) * real(1.45) + real(2.0) / k_canvas;
    real margin = std::min(reach, real(0.45));
    o.cx = r.uniform(margin, 1 - margin);
    o.cy = r.uniform(margin, 1 - margin);
}

} // namespace

std::vector<real> synthetic_scene::latents() const {
    std::vector<real> z(k_latent_dim, real(0));
    for (int i = 0; i < k_max_objects; ++i) {
        const auto& o = obj[i];
        real* p = z.data() + i * k_object_latent;
        if (!o.present) continue;
        p[0] = 1;
        p[1 + static_cast<int>(o.shape)] = 1;
        p[4] = o.color[0];
        p[5] = o.color[1];
        p[6] = o.color[2];
        p[7] = o.cx;
        p[8] = o.cy;
        p[9] = o.size;
        p[10] = std::sin(o.rot);
        p[11] = std::cos(o.rot);
        p[12] = o.aspect;
        p[13] = o.thickness;
        p[14] = o.softness;
    }
    real* tail = z.data() + k_max_objects * k_object_latent;
    tail[0] = real(count) / k_max_objects;
    tail[1] = bg[0];
    tail[2] = bg[1];
    tail[3] = bg[2];
    return z;
}

synthetic_scene sample_scene(rng& r, int label) {
    if (label < 0 || label >= k_label_count)
        throw data_error("sample_scene: label " + std::to_string(label) + " out of range");
    synthetic_scene s;
    s.label = label;
    s.count = 1 + static_cast<int>(r.uniform_int(k_max_objects));
    for (int c = 0; c < 3; ++c) s.bg[c] = r.uniform(real(0.05), real(0.25));
    for (int i = 0; i < s.count; ++i) sample_object(r, s.obj[i], i == 0, label);
    return s;
}

void render_scene(const synthetic_scene& s, real* out) {
    for (int i = 0; i < k_canvas; ++i) {
        for (int j = 0; j < k_canvas; ++j) {
            real* px = out + (int64_t(i) * k_canvas + j) * 3;
            px[0] = s.bg[0];
            px[1] = s.bg[1];
            px[2] = s.bg[2];
        }
    }
    real py_step = real(1) / k_canvas;
    // secondary objects first; the labeled primary is drawn last so it stays visible
    for (int oi = k_max_objects - 1; oi >= 0; --oi) {
        const auto& o = s.obj[oi];
        if (!o.present) continue;
        real soft = (real(0.5) + real(1.5) * o.softness) * py_step;
        for (int i = 0; i < k_canvas; ++i) {
            real py = (i + real(0.5)) * py_step;
            for (int j = 0; j < k_canvas; ++j) {
                real px = (j + real(0.5)) * py_step;
                real d = object_sdf(o, px, py);
                real a = std::clamp(real(0.5) - d / (2 * soft), real(0), real(1));
                if (a <= 0) continue;
                real* q = out + (int64_t(i) * k_canvas + j) * 3;
                for (int c = 0; c < 3; ++c) q[c] = q[c] * (1 - a) + o.color[c] * a;
            }
        }
    }
}

signal_mixer::signal_mixer(uint64_t seed) {
    const int feat = k_latent_dim + k_mix_features;
    rng r(seed);
    w_mix.resize(int64_t(k_signal_dim) * feat);
    real w_scale = real(1) / std::sqrt(real(feat));
    for (auto& w : w_mix) w = r.gaussian() * w_scale;
    omega.resize(int64_t(k_mix_features) * k_latent_dim);
    for (auto& w : omega) w = r.gaussian() * real(0.8);
    phase.resize(k_mix_features);
    for (auto& p : phase) p = r.uniform(real(0), real(6.28318530));
}

void signal_mixer::mix(const std::vector<real>& z, rng& noise, real sigma, real* out) const {
    if (static_cast<int>(z.size()) != k_latent_dim)
        throw dim_error("signal_mixer: latent size " + std::to_string(z.size()));
    const int feat = k_latent_dim + k_mix_features;
    std::vector<real> phi(feat);
    std::copy(z.begin(), z.end(), phi.begin());
    for (int f = 0; f < k_mix_features; ++f) {
        double acc = phase[f];
        for (int j = 0; j < k_latent_dim; ++j)
            acc += double(omega[f * k_latent_dim + j]) * double(z[j]);
        phi[k_latent_dim + f] = static_cast<real>(std::cos(acc));
    }
    for (int v = 0; v < k_signal_dim; ++v) {
        double acc = 0;
        for (int j = 0; j < feat; ++j) acc += double(w_mix[v * feat + j]) * double(phi[j]);
        out[v] = static_cast<real>(acc);
        if (sigma > 0) out[v] += noise.gaussian() * sigma;
    }
}

tptr dataset::image_tensor(int i) const {
    auto t = make_tensor({k_canvas, k_canvas, 3});
    std::copy(image(i), image(i) + t->numel(), t->v.begin());
    return t;
}

tptr dataset::signal_row(int i) const {
    auto t = make_tensor({1, k_signal_dim});
    std::copy(signal(i), signal(i) + k_signal_dim, t->v.begin());
    return t;
}

dataset synth_generate(int count, uint64_t seed, real noise_sigma) {
    if (count < 1) throw config_error("synth_generate: count must be >= 1");
    dataset d;
    d.count = count;
    d.seed = static_cast<int64_t>(seed);
    d.signals.resize(int64_t(count) * k_signal_dim);
    d.images.resize(int64_t(count) * k_canvas * k_canvas * 3);
    d.labels.resize(count);
    signal_mixer mixer(derive_seed(seed, 1000001));
    for (int i = 0; i < count; ++i) {
        rng r(derive_seed(seed, static_cast<uint64_t>(i)));
        int label = static_cast<int>(r.uniform_int(k_label_count));
        auto scene = sample_scene(r, label);
        render_scene(scene, d.images.data() + int64_t(i) * k_canvas * k_canvas * 3);
        auto z = scene.latents();
        mixer.mix(z, r, noise_sigma, d.signals.data() + int64_t(i) * k_signal_dim);
        d.labels[i] = label;
    }
    return d;
}

container dataset_to_container(const dataset& d) {
    container c;
    c.add_f32("signals", {d.count, k_signal_dim}, d.signals);
    c.add_f32("images", {d.count, k_canvas, k_canvas, 3}, d.images);
    c.add_i32("labels", {d.count}, d.labels);
    c.add_i32("meta.seed", {1}, {static_cast<int32_t>(d.seed)});
    return c;
}

dataset dataset_from_container(const container& c) {
    dataset d;
    const auto& sig = c.at("signals");
    const auto& img = c.at("images");
    const auto& lab = c.at("labels");
    if (sig.shape.size() != 2 || sig.shape[1] != k_signal_dim)
        throw data_error("dataset: signals extent mismatch");
    d.count = sig.shape[0];
    if (img.shape != std::vector<int>{d.count, k_canvas, k_canvas, 3})
        throw data_error("dataset: images extent mismatch");
    if (lab.shape != std::vector<int>{d.count}) throw data_error("dataset: labels extent mismatch");
    d.signals.assign(sig.f.begin(), sig.f.end());
    d.images.assign(img.f.begin(), img.f.end());
    d.labels = lab.i;
    d.seed = c.at("meta.seed").i[0];
    for (int32_t l : d.labels)
        if (l < 0 || l >= k_label_count) throw data_error("dataset: label out of range");
    return d;
}

} // namespace hiergen
