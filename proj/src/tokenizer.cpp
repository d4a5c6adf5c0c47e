#include "hiergen/tokenizer.hpp"

#include <cmath>
#include <sstream>

#include "hiergen/kernels.hpp"

namespace hiergen {

int scale_schedule::total_tokens() const {
    int n = 0;
    for (auto [h, w] : sides) n += h * w;
    return n;
}

void scale_schedule::validate() const {
    if (sides.empty()) throw config_error("schedule: needs at least one scale");
    int prev = 0;
    for (auto [h, w] : sides) {
        if (h < 1 || w < 1) throw config_error("schedule: side must be positive");
        int n = h * w;
        if (n <= prev) throw config_error("schedule: token counts must strictly increase");
        prev = n;
    }
}

scale_schedule default_schedule() { return parse_schedule("1,2,4,8,16"); }

scale_schedule parse_schedule(const std::string& csv) {
    scale_schedule s;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        int side = 0;
        try {
            side = std::stoi(item);
        } catch (const std::exception&) {
            throw config_error("schedule: bad side '" + item + "'");
        }
        s.sides.push_back({side, side});
    }
    s.validate();
    return s;
}

int token_pyramid::total() const {
    int n = 0;
    for (const auto& m : maps) n += static_cast<int>(m.size());
    return n;
}

tokenizer_model build_tokenizer(uint64_t seed, scale_schedule schedule, int n_codes) {
    schedule.validate();
    if (n_codes < 2) throw config_error("tokenizer: codebook needs at least 2 codes");
    tokenizer_model t;
    t.schedule = std::move(schedule);
    t.n_codes = n_codes;
    rng r(seed);
    const int p_in = k_tok_patch * k_tok_patch * 3;
    auto init = [&](std::vector<int> shape, int fan_in) {
        return randn(r, std::move(shape), real(1) / std::sqrt(real(fan_in)));
    };
    t.enc_w1 = t.params.add("enc_w1", init({p_in, k_tok_hidden}, p_in));
    t.enc_b1 = t.params.add("enc_b1", zeros({k_tok_hidden}), false);
    t.enc_w2 = t.params.add("enc_w2", init({9 * k_tok_hidden, k_code_dim}, 9 * k_tok_hidden));
    t.enc_b2 = t.params.add("enc_b2", zeros({k_code_dim}), false);
    t.dec_w1 = t.params.add("dec_w1", init({9 * k_code_dim, k_tok_hidden}, 9 * k_code_dim));
    t.dec_b1 = t.params.add("dec_b1", zeros({k_tok_hidden}), false);
    t.dec_w2 = t.params.add("dec_w2", init({9 * k_tok_hidden, 3}, 9 * k_tok_hidden));
    t.dec_b2 = t.params.add("dec_b2", zeros({3}), false);
    t.codebook = t.params.add("codebook", randn(r, {n_codes, k_code_dim}, real(0.5)), false);
    return t;
}

tptr encode_image(graph& g, const tokenizer_model& t, const tptr& image) {
    if (!image || image->rank() != 3 || image->dim(2) != 3)
        throw config_error("encode_image: expected an [h,w,3] image");
    if (image->dim(0) % k_tok_patch != 0 || image->dim(1) % k_tok_patch != 0)
        throw config_error("encode_image: dims must divide by the patch size");
    int oh = 0, ow = 0;
    auto p = im2col(g, image, k_tok_patch, k_tok_patch, k_tok_patch, 0, oh, ow);
    auto h1 = silu(g, linear(g, p, t.enc_w1, t.enc_b1));
    auto m1 = reshape(g, h1, {oh, ow, k_tok_hidden});
    int oh2 = 0, ow2 = 0;
    auto p2 = im2col(g, m1, 3, 3, 1, 1, oh2, ow2);
    auto h2 = linear(g, p2, t.enc_w2, t.enc_b2);
    return reshape(g, h2, {oh2, ow2, k_code_dim});
}

tptr decode_image(graph& g, const tokenizer_model& t, const tptr& fhat) {
    if (!fhat || fhat->rank() != 3 || fhat->dim(2) != k_code_dim)
        throw config_error("decode_image: expected an [h,w,C] latent map");
    int oh = 0, ow = 0;
    auto p = im2col(g, fhat, 3, 3, 1, 1, oh, ow);
    auto h1 = silu(g, linear(g, p, t.dec_w1, t.dec_b1));
    auto m1 = reshape(g, h1, {oh, ow, k_tok_hidden});
    auto up = upsample_nearest2(g, m1);
    int oh2 = 0, ow2 = 0;
    auto p2 = im2col(g, up, 3, 3, 1, 1, oh2, ow2);
    auto h2 = sigmoid_op(g, linear(g, p2, t.dec_w2, t.dec_b2));
    return reshape(g, h2, {oh2, ow2, 3});
}

quantize_result quantize_multiscale(const tptr& f, const scale_schedule& schedule,
                                    const tptr& codebook) {
    schedule.validate();
    if (!f || f->rank() != 3) throw config_error("quantize: feature map must be [h,w,C]");
    auto [fh, fw] = schedule.final_side();
    if (f->dim(0) != fh || f->dim(1) != fw)
        throw config_error("quantize: schedule final side " + std::to_string(fh) + "x" +
                           std::to_string(fw) + " does not match feature map " +
                           std::to_string(f->dim(0)) + "x" + std::to_string(f->dim(1)));
    const int C = f->dim(2);
    if (!codebook || codebook->rank() != 2 || codebook->dim(1) != C)
        throw config_error("quantize: codebook width does not match the feature map");
    const int N = codebook->dim(0);
    if (N < 2) throw config_error("quantize: codebook needs at least 2 codes");

    graph g;
    g.recording = false;
    quantize_result out;
    tptr residual = detach(f);
    for (int k = 0; k < schedule.levels(); ++k) {
        auto [h, w] = schedule.sides[k];
        auto down = downsample_area(g, residual, h, w);
        const int P = h * w;
        std::vector<int32_t> idx(P);
        nearest_code_auto(down->v.data(), codebook->v.data(), idx.data(), P, N, C);
        auto grid = make_tensor({h, w, C});
        for (int p = 0; p < P; ++p)
            for (int c = 0; c < C; ++c) grid->v[p * C + c] = codebook->v[idx[p] * C + c];
        auto up = (h == fh && w == fw) ? grid : upsample_bilinear(g, grid, fh, fw);
        residual = sub(g, residual, up);
        out.pyramid.maps.push_back(std::move(idx));
    }
    out.final_residual = residual;
    return out;
}

tptr dequantize(graph& g, const token_pyramid& R, const tptr& codebook,
                const scale_schedule& schedule) {
    schedule.validate();
    if (static_cast<int>(R.maps.size()) != schedule.levels())
        throw config_error("dequantize: pyramid depth does not match the schedule");
    const int N = codebook->dim(0);
    const int C = codebook->dim(1);
    auto [fh, fw] = schedule.final_side();
    tptr sum;
    for (int k = 0; k < schedule.levels(); ++k) {
        auto [h, w] = schedule.sides[k];
        const auto& m = R.maps[k];
        if (static_cast<int>(m.size()) != h * w)
            throw config_error("dequantize: map " + std::to_string(k) + " has wrong extent");
        for (int32_t i : m)
            if (i < 0 || i >= N)
                throw data_error("dequantize: token index " + std::to_string(i) +
                                 " outside the codebook");
        auto rows = embed_rows(g, codebook, m);
        auto grid = reshape(g, rows, {h, w, C});
        auto up = (h == fh && w == fw) ? grid : upsample_bilinear(g, grid, fh, fw);
        sum = sum ? add(g, sum, up) : up;
    }
    return sum;
}

tokenizer_losses tokenizer_train_step(tokenizer_model& t, const std::vector<tptr>& images,
                                      const adamw_config& cfg) {
    if (images.empty()) throw config_error("tokenizer_train_step: empty batch");
    t.params.zero_grad();
    graph g;
    tptr recon_sum, cb_sum, commit_sum;
    for (const auto& img : images) {
        auto f = encode_image(g, t, img);
        auto q = quantize_multiscale(f, t.schedule, t.codebook);
        auto fhat = dequantize(g, q.pyramid, t.codebook, t.schedule);
        auto st = straight_through(g, f, fhat);
        auto recon = mse(g, decode_image(g, t, st), img);
        auto cb = mse(g, detach(f), fhat);
        auto commit = mse(g, f, detach(fhat));
        recon_sum = recon_sum ? add(g, recon_sum, recon) : recon;
        cb_sum = cb_sum ? add(g, cb_sum, cb) : cb;
        commit_sum = commit_sum ? add(g, commit_sum, commit) : commit;
    }
    real inv_b = real(1) / static_cast<real>(images.size());
    auto recon_mean = scale(g, recon_sum, inv_b);
    auto cb_mean = scale(g, cb_sum, inv_b);
    auto commit_mean = scale(g, commit_sum, inv_b);
    auto total = add(g, recon_mean, add(g, cb_mean, scale(g, commit_mean, k_commit_weight)));
    check_finite(*total, "tokenizer loss");
    g.backward(total);
    adamw_step(t.params, cfg);
    tokenizer_losses out;
    out.recon = recon_mean->v[0];
    out.codebook = cb_mean->v[0];
    out.commit = commit_mean->v[0];
    out.total = total->v[0];
    return out;
}

tptr reconstruct_image(const tokenizer_model& t, const tptr& image) {
    graph g;
    g.recording = false;
    auto f = encode_image(g, t, image);
    auto q = quantize_multiscale(f, t.schedule, t.codebook);
    auto fhat = dequantize(g, q.pyramid, t.codebook, t.schedule);
    return decode_image(g, t, fhat);
}

container tokenizer_to_container(const tokenizer_model& t) {
    container c = t.params.to_container();
    std::vector<int32_t> sides;
    for (auto [h, w] : t.schedule.sides) {
        sides.push_back(h);
        sides.push_back(w);
    }
    c.add_i32("schedule.sides", {t.schedule.levels(), 2}, sides);
    return c;
}

tokenizer_model tokenizer_from_container(const container& c) {
    const auto& s = c.at("schedule.sides");
    scale_schedule sched;
    for (int k = 0; k < s.shape[0]; ++k) sched.sides.push_back({s.i[2 * k], s.i[2 * k + 1]});
    const auto& cb = c.at("codebook");
    tokenizer_model t = build_tokenizer(0, sched, cb.shape[0]);
    t.params.load_values(c);
    return t;
}

} // namespace hiergen
