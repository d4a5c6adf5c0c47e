#pragma once

// Named parameter registry with AdamW state, the learning-rate schedule and
// the finite-difference gradient checker.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "hiergen/autodiff.hpp"
#include "hiergen/container.hpp"

namespace hiergen {

struct param_store {
    struct entry {
        std::string name;
        tptr p;
        std::vector<real> m;  // first moment, same extent as p
        std::vector<real> v;  // second moment
        int64_t t = 0;        // steps taken for this parameter
        bool decay = true;    // participates in weight decay
    };

    std::vector<entry> items;  // insertion order drives update order
    std::map<std::string, size_t> index;

    tptr add(const std::string& name, tptr p, bool decay = true);
    entry& at(const std::string& name);
    const entry& at(const std::string& name) const;
    bool has(const std::string& name) const { return index.count(name) != 0; }

    void zero_grad();
    int64_t scalar_count() const;

    container to_container() const;
    void load_values(const container& c);
    uint64_t values_hash() const;
};

struct adamw_config {
    real lr = real(1e-3);
    real beta1 = real(0.9);
    real beta2 = real(0.999);
    real eps = real(1e-8);
    real weight_decay = real(0);
};

// decoupled weight decay, bias-corrected moments; decay skipped for entries
// flagged decay=false
void adamw_step(param_store& ps, const adamw_config& cfg);

// linear ramp to base_lr over warmup steps, then cosine decay to zero at
// total; clamped outside [0, total]
real cosine_warmup_lr(int64_t step, int64_t warmup, int64_t total, real base_lr);

struct grad_check_report {
    double max_rel_err = 0;
    int probes = 0;
};

// Compares tape gradients against central differences at probe_count
// randomly chosen parameter scalars. build_loss must rebuild the loss from
// current parameter values on every call. Relative error is measured against
// max(|analytic|, |fd|, 0.01 * max(1, |loss|)) to keep the comparison
// meaningful where the true gradient is tiny.
grad_check_report grad_check(const std::function<tptr(graph&)>& build_loss, param_store& ps,
                             int probe_count, double h, uint64_t seed);

} // namespace hiergen
