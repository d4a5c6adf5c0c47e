// Stage orchestration. Each stage loads its inputs by content-addressed
// path, runs deterministically from the run seed, writes its artifact plus a
// JSON manifest, and returns printable notes. Training stages sample batch
// indices from a seed-derived stream, so identical configs retrace the same
// trajectory bit for bit.

#include "hiergen/pipeline.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <unordered_map>

#include "json.hpp"

#include "hiergen/container.hpp"
#include "hiergen/generator.hpp"
#include "hiergen/metrics.hpp"
#include "hiergen/nn.hpp"
#include "hiergen/opcount.hpp"
#include "hiergen/optim.hpp"
#include "hiergen/rng.hpp"
#include "hiergen/teacher.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace hiergen {

namespace {

// seed streams, one per consumer of the run seed
constexpr uint64_t k_stream_tok_init = 0x11;
constexpr uint64_t k_stream_tok_batch = 0x12;
constexpr uint64_t k_stream_enc_init = 0x21;
constexpr uint64_t k_stream_enc_batch = 0x22;
constexpr uint64_t k_stream_gen_init = 0x31;
constexpr uint64_t k_stream_gen_batch = 0x32;
constexpr uint64_t k_stream_recon = 0x51;
constexpr uint64_t k_stream_eval = 0x61;
constexpr uint64_t k_stream_gradcheck = 0x71;

#ifdef HIERGEN_REAL_DOUBLE
constexpr double k_gc_h = 1e-4;
constexpr double k_gc_tol = 1e-5;
#else
constexpr double k_gc_h = 1e-3;
constexpr double k_gc_tol = 1e-2;
#endif

std::string fmt_int(long long v) { return std::to_string(v); }

std::string fmt_real_str(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::string hex16(uint64_t h) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string out_base(const run_config& c) {
    return c.out_dir.empty() ? resolve_out_dir("") : c.out_dir;
}

void ensure_out_dir(const run_config& c) {
    std::error_code ec;
    fs::create_directories(out_base(c), ec);
    if (ec) throw io_error("cannot create output dir " + out_base(c) + ": " + ec.message());
}

using field_map = std::map<std::string, std::string>;

void add_data_fields(const run_config& c, field_map& f) {
    f["seed"] = fmt_int(static_cast<long long>(c.seed));
    f["count"] = fmt_int(c.count);
    f["noise_sigma"] = fmt_real_str(c.noise_sigma);
}

void add_tokenizer_fields(const run_config& c, field_map& f) {
    add_data_fields(c, f);
    f["schedule"] = c.schedule_csv;
    f["n_codes"] = fmt_int(c.n_codes);
    f["train_count"] = fmt_int(c.train_count);
    f["tok_steps"] = fmt_int(c.tok_steps);
    f["tok_batch"] = fmt_int(c.tok_batch);
    f["tok_lr"] = fmt_real_str(c.tok_lr);
    f["tok_warmup"] = fmt_int(c.tok_warmup);
}

void add_encoder_fields(const run_config& c, field_map& f) {
    add_data_fields(c, f);
    // single-feature mode trains the encoder exactly like final-only
    // supervision; collapsing the key lets those arms share the artifact
    f["enc_supervision"] = (c.supervision == "full") ? "full" : "final";
    f["mapping"] = c.mapping;
    f["tau"] = fmt_real_str(c.tau);
    f["train_count"] = fmt_int(c.train_count);
    f["enc_steps"] = fmt_int(c.enc_steps);
    f["enc_batch"] = fmt_int(c.enc_batch);
    f["enc_lr"] = fmt_real_str(c.enc_lr);
    f["enc_warmup"] = fmt_int(c.enc_warmup);
}

void add_generator_fields(const run_config& c, field_map& f) {
    add_tokenizer_fields(c, f);
    add_encoder_fields(c, f);
    f["supervision"] = c.supervision;
    f["route"] = c.route;
    f["gen_depth"] = fmt_int(c.gen_depth);
    f["gen_steps"] = fmt_int(c.gen_steps);
    f["gen_batch"] = fmt_int(c.gen_batch);
    f["gen_lr"] = fmt_real_str(c.gen_lr);
    f["gen_warmup"] = fmt_int(c.gen_warmup);
}

void add_reconstruct_fields(const run_config& c, field_map& f) {
    add_generator_fields(c, f);
    f["eval_count"] = fmt_int(c.eval_count);
    f["greedy"] = c.greedy ? "1" : "0";
    f["top_k"] = fmt_int(c.top_k);
    f["temperature"] = fmt_real_str(c.temperature);
    f["n_candidates"] = fmt_int(c.n_candidates);
}

field_map stage_fields(const run_config& c, const std::string& stage) {
    field_map f;
    if (stage == "gen-data") {
        add_data_fields(c, f);
    } else if (stage == "train-tokenizer") {
        add_tokenizer_fields(c, f);
    } else if (stage == "train-encoder") {
        add_encoder_fields(c, f);
    } else if (stage == "train-generator") {
        add_generator_fields(c, f);
    } else if (stage == "reconstruct") {
        add_reconstruct_fields(c, f);
    } else if (stage == "evaluate") {
        add_reconstruct_fields(c, f);
        f["trials"] = fmt_int(c.trials);
    } else if (stage == "bench") {
        f["schedule"] = c.schedule_csv;
        f["raster_side"] = fmt_int(c.raster_side);
    } else if (stage == "gradcheck") {
        f["seed"] = fmt_int(static_cast<long long>(c.seed));
    } else {
        throw config_error("unknown stage name: " + stage);
    }
    return f;
}

std::string artifact_path(const run_config& c, const std::string& stage, const std::string& base,
                          const std::string& ext) {
    return out_base(c) + "/" + base + "-" + stage_hash_hex(c, stage) + ext;
}

std::string manifest_path(const run_config& c, const std::string& stage,
                          const std::string& base) {
    return out_base(c) + "/" + base + "-" + stage_hash_hex(c, stage) + ".manifest.json";
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot open " + path + " for writing");
    f << text;
    if (!f) throw io_error("write failed for " + path);
}

// manifest: config + config hash + hashes of every input and output file
void write_manifest(const run_config& c, const std::string& stage,
                    const std::string& mpath,
                    const std::vector<std::pair<std::string, std::string>>& inputs,
                    const std::vector<std::pair<std::string, std::string>>& outputs,
                    const json& extra) {
    json m;
    m["stage"] = stage;
    json cfg = json::object();
    for (const auto& [k, v] : stage_fields(c, stage)) cfg[k] = v;
    m["config"] = cfg;
    m["config_hash"] = stage_hash_hex(c, stage);
    json ins = json::object();
    for (const auto& [name, path] : inputs)
        ins[name] = {{"path", path}, {"hash", hex16(hash_file(path))}};
    m["inputs"] = ins;
    json outs = json::object();
    for (const auto& [name, path] : outputs)
        outs[name] = {{"path", path}, {"hash", hex16(hash_file(path))}};
    m["outputs"] = outs;
    if (!extra.is_null()) m["detail"] = extra;
    write_text_file(mpath, m.dump(2) + "\n");
}

dataset load_dataset_checked(const run_config& c) {
    const std::string path = dataset_path(c);
    require_artifact(path, "gen-data");
    return dataset_from_container(load_container(path));
}

void check_split(const run_config& c, const dataset& d) {
    if (c.train_count < 1) throw config_error("train_count must be >= 1");
    if (c.eval_count < 0) throw config_error("eval_count must be >= 0");
    if (c.train_count + c.eval_count > d.count)
        throw config_error("train_count + eval_count = " +
                           fmt_int(c.train_count + c.eval_count) + " exceeds dataset count " +
                           fmt_int(d.count));
}

void check_train_params(int steps, int batch, real lr, const char* which) {
    if (steps < 0) throw config_error(std::string(which) + ": steps must be >= 0");
    if (batch < 1) throw config_error(std::string(which) + ": batch must be >= 1");
    if (!(lr > real(0))) throw config_error(std::string(which) + ": lr must be positive");
}

guidance_route make_route(const run_config& c, const scale_schedule& schedule) {
    if (c.route != "coarse2fine" && c.route != "inverted")
        throw config_error("route must be coarse2fine or inverted, got " + c.route);
    guidance_route r;
    r.K = schedule.levels();
    r.M = k_enc_blocks;
    r.inverted = (c.route == "inverted");
    r.validate();
    return r;
}

} // namespace

std::string resolve_out_dir(const std::string& flag_value) {
    if (!flag_value.empty()) return flag_value;
    const char* env = std::getenv("HIERGEN_OUT");
    if (env != nullptr && env[0] != '\0') return env;
    return "out";
}

std::string stage_config_lines(const run_config& c, const std::string& stage) {
    std::string s;
    for (const auto& [k, v] : stage_fields(c, stage)) {
        s += k;
        s += '=';
        s += v;
        s += '\n';
    }
    return s;
}

uint64_t stage_config_hash(const run_config& c, const std::string& stage) {
    const std::string lines = stage_config_lines(c, stage);
    return fnv1a64(lines.data(), lines.size());
}

std::string stage_hash_hex(const run_config& c, const std::string& stage) {
    return hex16(stage_config_hash(c, stage));
}

std::string dataset_path(const run_config& c) {
    return artifact_path(c, "gen-data", "dataset", ".mndh");
}
std::string tokenizer_path(const run_config& c) {
    return artifact_path(c, "train-tokenizer", "tokenizer", ".mndh");
}
std::string encoder_path(const run_config& c) {
    return artifact_path(c, "train-encoder", "encoder", ".mndh");
}
std::string generator_path(const run_config& c) {
    return artifact_path(c, "train-generator", "generator", ".mndh");
}
std::string recons_path(const run_config& c) {
    return artifact_path(c, "reconstruct", "recons", ".mndh");
}
std::string report_text_path(const run_config& c) {
    return artifact_path(c, "evaluate", "report", ".txt");
}
std::string report_sidecar_path(const run_config& c) {
    return artifact_path(c, "evaluate", "report", ".mndh");
}
std::string bench_text_path(const run_config& c) {
    return artifact_path(c, "bench", "bench", ".txt");
}

void require_artifact(const std::string& path, const std::string& producer) {
    if (!fs::exists(path))
        throw dependency_error("missing artifact " + path + "; run " + producer + " first");
}

stage_result stage_gen_data(const run_config& c) {
    ensure_out_dir(c);
    dataset d = synth_generate(c.count, c.seed, c.noise_sigma);
    const std::string path = dataset_path(c);
    save_container(path, dataset_to_container(d));
    const std::string mpath = manifest_path(c, "gen-data", "dataset");
    write_manifest(c, "gen-data", mpath, {}, {{"dataset", path}}, json{{"samples", d.count}});

    stage_result r;
    r.notes.emplace_back("samples", fmt_int(d.count));
    r.artifacts = {path, mpath};
    return r;
}

stage_result stage_train_tokenizer(const run_config& c) {
    ensure_out_dir(c);
    check_train_params(c.tok_steps, c.tok_batch, c.tok_lr, "train-tokenizer");
    dataset d = load_dataset_checked(c);
    check_split(c, d);

    scale_schedule schedule = parse_schedule(c.schedule_csv);
    tokenizer_model tok = build_tokenizer(derive_seed(c.seed, k_stream_tok_init), schedule,
                                          c.n_codes);
    rng pick(derive_seed(c.seed, k_stream_tok_batch));

    const int tail = std::min(50, std::max(1, c.tok_steps));
    tokenizer_losses tail_sum;
    int tail_n = 0;
    for (int step = 0; step < c.tok_steps; ++step) {
        std::vector<tptr> imgs;
        imgs.reserve(c.tok_batch);
        for (int b = 0; b < c.tok_batch; ++b)
            imgs.push_back(d.image_tensor(static_cast<int>(pick.uniform_int(c.train_count))));
        adamw_config acfg;
        acfg.lr = cosine_warmup_lr(step, c.tok_warmup, c.tok_steps, c.tok_lr);
        acfg.weight_decay = real(1e-4);
        tokenizer_losses L = tokenizer_train_step(tok, imgs, acfg);
        if (step >= c.tok_steps - tail) {
            tail_sum.recon += L.recon;
            tail_sum.codebook += L.codebook;
            tail_sum.commit += L.commit;
            tail_sum.total += L.total;
            ++tail_n;
        }
    }

    const std::string path = tokenizer_path(c);
    save_container(path, tokenizer_to_container(tok));
    const std::string mpath = manifest_path(c, "train-tokenizer", "tokenizer");
    json detail{{"weights_hash", hex16(tok.params.values_hash())}, {"steps", c.tok_steps}};
    if (tail_n > 0) {
        detail["loss"] = {{"recon", tail_sum.recon / tail_n},
                          {"codebook", tail_sum.codebook / tail_n},
                          {"commit", tail_sum.commit / tail_n},
                          {"total", tail_sum.total / tail_n}};
    }
    write_manifest(c, "train-tokenizer", mpath, {{"dataset", dataset_path(c)}},
                   {{"tokenizer", path}}, detail);

    stage_result r;
    if (tail_n > 0) r.notes.emplace_back("recon_loss", fmt_real_str(tail_sum.recon / tail_n));
    r.notes.emplace_back("steps", fmt_int(c.tok_steps));
    r.artifacts = {path, mpath};
    return r;
}

stage_result stage_train_encoder(const run_config& c) {
    ensure_out_dir(c);
    check_train_params(c.enc_steps, c.enc_batch, c.enc_lr, "train-encoder");
    dataset d = load_dataset_checked(c);
    check_split(c, d);

    teacher_model tm = build_teacher();
    const mapping_variant mv = parse_mapping(c.mapping);
    const supervision_mode sm = parse_supervision(c.supervision);
    const std::vector<int> layer_ids = mapping_layers(mv);

    encoder_model enc = build_encoder(derive_seed(c.seed, k_stream_enc_init));
    rng pick(derive_seed(c.seed, k_stream_enc_batch));

    struct feats {
        std::vector<tptr> levels;
        tptr embed;
        tptr text;
    };
    std::unordered_map<int, feats> cache;
    auto features_for = [&](int idx) -> const feats& {
        auto it = cache.find(idx);
        if (it != cache.end()) return it->second;
        teacher_features tf = teacher_vision(tm, d.image_tensor(idx));
        feats f;
        f.levels.reserve(layer_ids.size());
        for (int id : layer_ids) f.levels.push_back(tf.layers[id - 1]);
        f.embed = tf.embed;
        f.text = teacher_text(tm, d.labels[idx]);
        return cache.emplace(idx, std::move(f)).first->second;
    };

    const int tail = std::min(50, std::max(1, c.enc_steps));
    encoder_losses tail_sum;
    int tail_n = 0;
    for (int step = 0; step < c.enc_steps; ++step) {
        encoder_batch batch;
        for (int b = 0; b < c.enc_batch; ++b) {
            const int idx = static_cast<int>(pick.uniform_int(c.train_count));
            const feats& f = features_for(idx);
            batch.signals.push_back(d.signal_row(idx));
            batch.teacher_levels.push_back(f.levels);
            batch.image_embeds.push_back(f.embed);
            batch.text_embeds.push_back(f.text);
        }
        adamw_config acfg;
        acfg.lr = cosine_warmup_lr(step, c.enc_warmup, c.enc_steps, c.enc_lr);
        acfg.weight_decay = real(1e-4);
        encoder_losses L = encoder_train_step(enc, batch, sm, c.tau, acfg);
        if (step >= c.enc_steps - tail) {
            tail_sum.mse += L.mse;
            tail_sum.softclip += L.softclip;
            tail_sum.total += L.total;
            ++tail_n;
        }
    }

    const std::string path = encoder_path(c);
    save_container(path, encoder_to_container(enc));
    const std::string mpath = manifest_path(c, "train-encoder", "encoder");
    json detail{{"weights_hash", hex16(enc.params.values_hash())},
                {"teacher_hash", hex16(teacher_hash(tm))},
                {"steps", c.enc_steps}};
    if (tail_n > 0) {
        detail["loss"] = {{"mse", tail_sum.mse / tail_n},
                          {"softclip", tail_sum.softclip / tail_n},
                          {"total", tail_sum.total / tail_n}};
    }
    write_manifest(c, "train-encoder", mpath, {{"dataset", dataset_path(c)}},
                   {{"encoder", path}}, detail);

    stage_result r;
    if (tail_n > 0) {
        r.notes.emplace_back("mse_loss", fmt_real_str(tail_sum.mse / tail_n));
        r.notes.emplace_back("softclip_loss", fmt_real_str(tail_sum.softclip / tail_n));
    }
    r.notes.emplace_back("steps", fmt_int(c.enc_steps));
    r.artifacts = {path, mpath};
    return r;
}

stage_result stage_train_generator(const run_config& c) {
    ensure_out_dir(c);
    check_train_params(c.gen_steps, c.gen_batch, c.gen_lr, "train-generator");
    dataset d = load_dataset_checked(c);
    check_split(c, d);

    require_artifact(tokenizer_path(c), "train-tokenizer");
    require_artifact(encoder_path(c), "train-encoder");
    tokenizer_model tok = tokenizer_from_container(load_container(tokenizer_path(c)));
    encoder_model enc = encoder_from_container(load_container(encoder_path(c)));

    const scale_schedule wanted = parse_schedule(c.schedule_csv);
    if (wanted.sides != tok.schedule.sides)
        throw config_error("tokenizer artifact schedule differs from --schedule");

    const guidance_route route = make_route(c, tok.schedule);
    const supervision_mode sm = parse_supervision(c.supervision);
    generator_model gm = build_generator(derive_seed(c.seed, k_stream_gen_init), tok.schedule,
                                         c.n_codes, c.gen_depth);
    rng pick(derive_seed(c.seed, k_stream_gen_batch));

    std::unordered_map<int, generator_sample> cache;
    auto sample_for = [&](int idx) -> const generator_sample& {
        auto it = cache.find(idx);
        if (it != cache.end()) return it->second;
        graph g;
        g.recording = false;
        tptr f = encode_image(g, tok, d.image_tensor(idx));
        quantize_result qr = quantize_multiscale(f, tok.schedule, tok.codebook);
        feature_hierarchy h = encode_signal(g, enc, d.signal_row(idx));
        generator_sample s;
        s.pyramid = std::move(qr.pyramid);
        s.guidance_levels = make_guidance_levels(h, sm);
        s.start_emb = route_start_embedding(g, enc, h, route);
        s.cond = h.emb;
        return cache.emplace(idx, std::move(s)).first->second;
    };

    const int tail = std::min(50, std::max(1, c.gen_steps));
    double tail_ce = 0;
    int tail_n = 0;
    for (int step = 0; step < c.gen_steps; ++step) {
        std::vector<generator_sample> batch;
        batch.reserve(c.gen_batch);
        for (int b = 0; b < c.gen_batch; ++b)
            batch.push_back(sample_for(static_cast<int>(pick.uniform_int(c.train_count))));
        adamw_config acfg;
        acfg.lr = cosine_warmup_lr(step, c.gen_warmup, c.gen_steps, c.gen_lr);
        acfg.beta2 = real(0.95);
        acfg.weight_decay = real(1e-4);
        const real ce = generator_train_step(gm, tok.codebook, batch, route, acfg);
        if (step >= c.gen_steps - tail) {
            tail_ce += ce;
            ++tail_n;
        }
    }

    const std::string path = generator_path(c);
    save_container(path, generator_to_container(gm));
    const std::string mpath = manifest_path(c, "train-generator", "generator");
    json detail{{"weights_hash", hex16(gm.params.values_hash())}, {"steps", c.gen_steps}};
    if (tail_n > 0) detail["loss"] = {{"token_ce", tail_ce / tail_n}};
    write_manifest(c, "train-generator", mpath,
                   {{"dataset", dataset_path(c)},
                    {"tokenizer", tokenizer_path(c)},
                    {"encoder", encoder_path(c)}},
                   {{"generator", path}}, detail);

    stage_result r;
    if (tail_n > 0) r.notes.emplace_back("token_ce", fmt_real_str(tail_ce / tail_n));
    r.notes.emplace_back("steps", fmt_int(c.gen_steps));
    r.artifacts = {path, mpath};
    return r;
}

stage_result stage_reconstruct(const run_config& c) {
    ensure_out_dir(c);
    dataset d = load_dataset_checked(c);
    check_split(c, d);
    if (c.eval_count < 1) throw config_error("reconstruct: eval_count must be >= 1");
    if (c.n_candidates < 1) throw config_error("reconstruct: n_candidates must be >= 1");

    require_artifact(tokenizer_path(c), "train-tokenizer");
    require_artifact(encoder_path(c), "train-encoder");
    require_artifact(generator_path(c), "train-generator");
    tokenizer_model tok = tokenizer_from_container(load_container(tokenizer_path(c)));
    encoder_model enc = encoder_from_container(load_container(encoder_path(c)));
    generator_model gm = generator_from_container(load_container(generator_path(c)));
    teacher_model tm = build_teacher();

    const guidance_route route = make_route(c, tok.schedule);
    const supervision_mode sm = parse_supervision(c.supervision);
    const uint64_t recon_seed = derive_seed(c.seed, k_stream_recon);

    const int pixels = k_canvas * k_canvas * 3;
    const int n_tok = tok.schedule.total_tokens();
    std::vector<real> images(static_cast<size_t>(c.eval_count) * pixels);
    std::vector<int32_t> indices(c.eval_count);
    std::vector<int32_t> pyramids(static_cast<size_t>(c.eval_count) * n_tok);
    for (int j = 0; j < c.eval_count; ++j) {
        const int idx = c.train_count + j;
        sampling_config samp;
        samp.greedy = c.greedy;
        samp.top_k = c.top_k;
        samp.temperature = c.temperature;
        samp.seed = derive_seed(recon_seed, static_cast<uint64_t>(idx));
        token_pyramid pyr;
        tptr img = reconstruct_with_selection(enc, tok, gm, tm, d.signal_row(idx), route, sm,
                                              c.n_candidates, samp, &pyr);
        std::copy(img->v.begin(), img->v.end(), images.begin() + static_cast<size_t>(j) * pixels);
        indices[j] = idx;
        auto* row = pyramids.data() + static_cast<size_t>(j) * n_tok;
        for (const auto& m : pyr.maps) row = std::copy(m.begin(), m.end(), row);
    }

    container rc;
    rc.add_f32("images", {c.eval_count, k_canvas, k_canvas, 3}, images);
    rc.add_i32("indices", {c.eval_count}, indices);
    rc.add_i32("pyramids", {c.eval_count, n_tok}, pyramids);
    const std::string path = recons_path(c);
    save_container(path, rc);
    const std::string mpath = manifest_path(c, "reconstruct", "recons");
    write_manifest(c, "reconstruct", mpath,
                   {{"dataset", dataset_path(c)},
                    {"tokenizer", tokenizer_path(c)},
                    {"encoder", encoder_path(c)},
                    {"generator", generator_path(c)}},
                   {{"recons", path}},
                   json{{"samples", c.eval_count}, {"teacher_hash", hex16(teacher_hash(tm))}});

    stage_result r;
    r.notes.emplace_back("samples", fmt_int(c.eval_count));
    r.notes.emplace_back("route", c.route);
    r.artifacts = {path, mpath};
    return r;
}

stage_result stage_evaluate(const run_config& c) {
    ensure_out_dir(c);
    dataset d = load_dataset_checked(c);
    require_artifact(recons_path(c), "reconstruct");
    container rc = load_container(recons_path(c));
    teacher_model tm = build_teacher();

    const container_entry& imgs = rc.at("images");
    const container_entry& idxs = rc.at("indices");
    if (imgs.shape.size() != 4 || imgs.shape[1] != k_canvas || imgs.shape[2] != k_canvas ||
        imgs.shape[3] != 3)
        throw data_error("recons images entry has unexpected shape");
    const int n = imgs.shape[0];
    if (static_cast<int>(idxs.i.size()) != n)
        throw data_error("recons indices entry does not match image count");

    const int pixels = k_canvas * k_canvas * 3;
    std::vector<tptr> truth, recon;
    truth.reserve(n);
    recon.reserve(n);
    for (int j = 0; j < n; ++j) {
        const int idx = idxs.i[j];
        if (idx < 0 || idx >= d.count)
            throw data_error("recons index " + fmt_int(idx) + " outside dataset of " +
                             fmt_int(d.count));
        truth.push_back(d.image_tensor(idx));
        tptr t = make_tensor({k_canvas, k_canvas, 3});
        for (int p = 0; p < pixels; ++p)
            t->v[p] = static_cast<real>(imgs.f[static_cast<size_t>(j) * pixels + p]);
        recon.push_back(t);
    }

    eval_report rep = evaluate_suite(truth, recon, tm, c.trials,
                                     derive_seed(c.seed, k_stream_eval));

    std::vector<std::string> metadata;
    metadata.push_back("config_hash=" + stage_hash_hex(c, "evaluate"));
    metadata.push_back("supervision=" + c.supervision);
    metadata.push_back("route=" + c.route);
    metadata.push_back("mapping=" + c.mapping);
    metadata.push_back("teacher_hash=" + hex16(teacher_hash(tm)));
    const std::string tpath = report_text_path(c);
    const std::string spath = report_sidecar_path(c);
    write_eval_report(tpath, spath, rep, metadata);
    const std::string mpath = manifest_path(c, "evaluate", "report");
    write_manifest(c, "evaluate", mpath,
                   {{"dataset", dataset_path(c)}, {"recons", recons_path(c)}},
                   {{"report", tpath}, {"report_data", spath}},
                   json{{"metrics",
                         {{"pixcorr", rep.pixcorr_mean},
                          {"ssim", rep.ssim_mean},
                          {"two_way", rep.two_way},
                          {"corr_distance", rep.corr_distance},
                          {"warnings", rep.warnings}}}});

    stage_result r;
    r.notes.emplace_back("count", fmt_int(rep.count));
    r.notes.emplace_back("pixcorr", fmt_real_str(rep.pixcorr_mean));
    r.notes.emplace_back("ssim", fmt_real_str(rep.ssim_mean));
    r.notes.emplace_back("two_way", fmt_real_str(rep.two_way));
    r.notes.emplace_back("corr_distance", fmt_real_str(rep.corr_distance));
    r.notes.emplace_back("warnings", fmt_int(rep.warnings));
    r.artifacts = {tpath, spath, mpath};
    return r;
}

stage_result stage_bench(const run_config& c) {
    ensure_out_dir(c);
    const scale_schedule schedule = parse_schedule(c.schedule_csv);
    if (c.raster_side < 1) throw config_error("bench: raster side must be >= 1");
    opcount_report rep = run_opcount(schedule, c.raster_side, k_teacher_tokens, k_enc_blocks);

    stage_result r;
    auto put = [&](const char* k, long long v) { r.notes.emplace_back(k, fmt_int(v)); };
    put("scalewise_pairs", rep.scalewise_measured);
    put("scalewise_closed", rep.scalewise_closed);
    put("raster_cached_pairs", rep.raster_cached_measured);
    put("raster_cached_closed", rep.raster_cached_closed);
    put("raster_recompute_pairs", rep.raster_recompute_measured);
    put("raster_recompute_closed", rep.raster_recompute_closed);
    r.notes.emplace_back("counters_match", rep.all_match() ? "yes" : "no");
    r.notes.emplace_back("scalewise_lt_raster_cached",
                         rep.scalewise_measured < rep.raster_cached_measured ? "yes" : "no");
    r.notes.emplace_back("scalewise_lt_raster_recompute",
                         rep.scalewise_measured < rep.raster_recompute_measured ? "yes" : "no");

    std::string text;
    for (const auto& [k, v] : r.notes) text += k + "=" + v + "\n";
    const std::string path = bench_text_path(c);
    write_text_file(path, text);
    const std::string mpath = manifest_path(c, "bench", "bench");
    json detail{{"scalewise", rep.scalewise_measured},
                {"raster_cached", rep.raster_cached_measured},
                {"raster_recompute", rep.raster_recompute_measured},
                {"counters_match", rep.all_match()}};
    write_manifest(c, "bench", mpath, {}, {{"bench", path}}, detail);
    r.artifacts = {path, mpath};
    return r;
}

stage_result stage_gradcheck(const run_config& c) {
    rng r(derive_seed(c.seed, k_stream_gradcheck));
    stage_result res;
    double worst = 0;

    auto run_probe = [&](const char* name, param_store& ps,
                         const std::function<tptr(graph&)>& loss_fn) {
        grad_check_report rep = grad_check(loss_fn, ps, 25, k_gc_h, derive_seed(c.seed, 0x72));
        res.notes.emplace_back(name, fmt_real_str(rep.max_rel_err));
        worst = std::max(worst, rep.max_rel_err);
    };

    {
        param_store ps;
        tptr w1 = ps.add("w1", randn(r, {8, 16}, real(0.35)));
        tptr b1 = ps.add("b1", randn(r, {16}, real(0.1)), false);
        tptr w2 = ps.add("w2", randn(r, {16, 4}, real(0.3)));
        tptr x = randn(r, {4, 8}, real(1));
        tptr target = randn(r, {4, 4}, real(1));
        run_probe("mlp_max_rel_err", ps, [&](graph& g) {
            return mse(g, linear(g, silu(g, linear(g, x, w1, b1)), w2), target);
        });
    }
    {
        const int w = 16, tokens = 5;
        param_store ps;
        vit_block_params bp;
        bp.norm1_gain = ps.add("n1", ones({w}, false), false);
        bp.norm2_gain = ps.add("n2", ones({w}, false), false);
        bp.attn.wq = ps.add("wq", randn(r, {w, w}, real(0.25)));
        bp.attn.wk = ps.add("wk", randn(r, {w, w}, real(0.25)));
        bp.attn.wv = ps.add("wv", randn(r, {w, w}, real(0.25)));
        bp.attn.wo = ps.add("wo", randn(r, {w, w}, real(0.25)));
        bp.ffn.w_gate = ps.add("wg", randn(r, {w, 2 * w}, real(0.25)));
        bp.ffn.w_up = ps.add("wu", randn(r, {w, 2 * w}, real(0.25)));
        bp.ffn.w_down = ps.add("wd", randn(r, {2 * w, w}, real(0.25)));
        tptr x = randn(r, {tokens, w}, real(0.5));
        pos_list pos;
        for (int i = 0; i < tokens; ++i)
            pos.emplace_back(real(i / 2), real(i % 2));
        attn_mask mask = attn_mask::full(tokens, tokens);
        run_probe("attention_max_rel_err", ps, [&, mask, pos](graph& g) {
            return mean_all(g, vit_block(g, x, bp, mask, pos, 2, true));
        });
    }
    {
        param_store ps;
        tptr w_mod = ps.add("w_mod", randn(r, {4, 16}, real(0.2)));
        tptr w_head = ps.add("w_head", randn(r, {8, 6}, real(0.4)));
        tptr x = randn(r, {3, 8}, real(1));
        tptr cond = randn(r, {1, 4}, real(1));
        std::vector<int> targets = {0, 3, 5};
        run_probe("adaln_ce_max_rel_err", ps, [&, targets](graph& g) {
            return cross_entropy_mean(g, linear(g, adaln_modulate(g, x, cond, w_mod), w_head),
                                      targets);
        });
    }

    res.notes.emplace_back("tolerance", fmt_real_str(k_gc_tol));
    if (worst > k_gc_tol)
        throw numeric_error("gradient check failed: max relative error " + fmt_real_str(worst) +
                            " exceeds " + fmt_real_str(k_gc_tol));
    res.notes.emplace_back("status", "ok");

    ensure_out_dir(c);
    const std::string mpath = manifest_path(c, "gradcheck", "gradcheck");
    json detail = json::object();
    for (const auto& [k, v] : res.notes) detail[k] = v;
    write_manifest(c, "gradcheck", mpath, {}, {}, detail);
    res.artifacts = {mpath};
    return res;
}

} // namespace hiergen
