#include "hiergen/optim.hpp"

#include <cmath>

#include "hiergen/rng.hpp"

namespace hiergen {

tptr param_store::add(const std::string& name, tptr p, bool decay) {
    if (index.count(name)) throw data_error("parameter '" + name + "' already registered");
    p->requires_grad = true;
    p->ensure_grad();
    entry e;
    e.name = name;
    e.p = p;
    e.m.assign(p->v.size(), real(0));
    e.v.assign(p->v.size(), real(0));
    e.decay = decay;
    index[name] = items.size();
    items.push_back(std::move(e));
    return p;
}

param_store::entry& param_store::at(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw key_error("unknown parameter '" + name + "'");
    return items[it->second];
}

const param_store::entry& param_store::at(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw key_error("unknown parameter '" + name + "'");
    return items[it->second];
}

void param_store::zero_grad() {
    for (auto& e : items) e.p->zero_grad();
}

int64_t param_store::scalar_count() const {
    int64_t n = 0;
    for (const auto& e : items) n += e.p->numel();
    return n;
}

container param_store::to_container() const {
    container c;
    for (const auto& e : items) c.add_f32(e.name, e.p->shape, e.p->v);
    return c;
}

void param_store::load_values(const container& c) {
    for (auto& e : items) {
        const container_entry& src = c.at(e.name);
        if (src.shape != e.p->shape)
            throw dim_error("parameter '" + e.name + "': stored shape differs");
        for (size_t i = 0; i < e.p->v.size(); ++i) e.p->v[i] = static_cast<real>(src.f[i]);
    }
}

uint64_t param_store::values_hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& e : items) {
        h = fnv1a64(e.name.data(), e.name.size(), h);
        for (real x : e.p->v) {
            float f = static_cast<float>(x);
            h = fnv1a64(&f, sizeof(f), h);
        }
    }
    return h;
}

void adamw_step(param_store& ps, const adamw_config& cfg) {
    for (auto& e : ps.items) {
        e.t += 1;
        const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), static_cast<double>(e.t));
        const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), static_cast<double>(e.t));
        const bool has_grad = !e.p->g.empty();
        for (size_t i = 0; i < e.p->v.size(); ++i) {
            const real gr = has_grad ? e.p->g[i] : real(0);
            e.m[i] = cfg.beta1 * e.m[i] + (real(1) - cfg.beta1) * gr;
            e.v[i] = cfg.beta2 * e.v[i] + (real(1) - cfg.beta2) * gr * gr;
            const real mhat = e.m[i] / static_cast<real>(bc1);
            const real vhat = e.v[i] / static_cast<real>(bc2);
            real upd = mhat / (std::sqrt(vhat) + cfg.eps);
            if (e.decay) upd += cfg.weight_decay * e.p->v[i];
            e.p->v[i] -= cfg.lr * upd;
        }
    }
}

real cosine_warmup_lr(int64_t step, int64_t warmup, int64_t total, real base_lr) {
    if (total <= 0) throw config_error("cosine_warmup_lr: total must be positive");
    if (step < 0) step = 0;
    if (warmup > 0 && step < warmup)
        return base_lr * static_cast<real>(step) / static_cast<real>(warmup);
    const int64_t span = total - warmup > 0 ? total - warmup : 1;
    double progress = static_cast<double>(step - warmup) / static_cast<double>(span);
    if (progress > 1.0) progress = 1.0;
    if (progress < 0.0) progress = 0.0;
    return base_lr * static_cast<real>(0.5 * (1.0 + std::cos(3.14159265358979323846 * progress)));
}

grad_check_report grad_check(const std::function<tptr(graph&)>& build_loss, param_store& ps,
                             int probe_count, double h, uint64_t seed) {
    ps.zero_grad();
    graph g;
    tptr loss = build_loss(g);
    if (loss->numel() != 1) throw dim_error("grad_check: loss must be a scalar");
    if (!std::isfinite(static_cast<double>(loss->v[0])))
        throw numeric_error("grad_check: non-finite loss");
    g.backward(loss);
    const double loss_mag = std::abs(static_cast<double>(loss->v[0]));

    // analytic gradients frozen before perturbation
    std::vector<std::vector<real>> saved;
    saved.reserve(ps.items.size());
    for (auto& e : ps.items) {
        e.p->ensure_grad();
        saved.push_back(e.p->g);
    }

    auto eval = [&]() {
        graph quiet;
        quiet.recording = false;
        tptr l = build_loss(quiet);
        double v = static_cast<double>(l->v[0]);
        if (!std::isfinite(v)) throw numeric_error("grad_check: non-finite loss at probe");
        return v;
    };

    rng r(seed);
    grad_check_report rep;
    rep.probes = probe_count;
    const double floor = 0.01 * std::max(1.0, loss_mag);
    for (int probe = 0; probe < probe_count; ++probe) {
        const size_t item = static_cast<size_t>(r.uniform_int(static_cast<int64_t>(ps.items.size())));
        auto& e = ps.items[item];
        const int64_t j = r.uniform_int(e.p->numel());
        const real keep = e.p->v[j];
        e.p->v[j] = keep + static_cast<real>(h);
        const double lp = eval();
        e.p->v[j] = keep - static_cast<real>(h);
        const double lm = eval();
        e.p->v[j] = keep;
        const double fd = (lp - lm) / (2.0 * h);
        const double an = static_cast<double>(saved[item][static_cast<size_t>(j)]);
        const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), floor});
        if (rel > rep.max_rel_err) rep.max_rel_err = rel;
    }
    return rep;
}

} // namespace hiergen
