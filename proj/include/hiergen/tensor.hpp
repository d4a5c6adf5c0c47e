#pragma once

// Dense row-major tensor of `real` scalars. Gradient storage lives alongside
// the values and is allocated lazily when a tensor participates in a
// recorded computation. Values are expected to stay finite; boundaries that
// can produce NaN/Inf call check_finite and raise numeric_error.

#include <cstdint>
#include <memory>
#include <vector>

#include "hiergen/error.hpp"
#include "hiergen/rng.hpp"

namespace hiergen {

#ifdef HIERGEN_REAL_DOUBLE
using real = double;
#else
using real = float;
#endif

int64_t shape_numel(const std::vector<int>& shape);

struct tensor {
    std::vector<int> shape;
    std::vector<real> v;  // values, row-major
    std::vector<real> g;  // gradient, same extent as v when allocated
    bool requires_grad = false;

    int64_t numel() const { return static_cast<int64_t>(v.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    // rows/cols view of a rank >= 1 tensor: last axis is the column axis
    int cols() const { return shape.empty() ? 1 : shape.back(); }
    int rows() const { return static_cast<int>(numel() / cols()); }

    void ensure_grad() {
        if (g.size() != v.size()) g.assign(v.size(), real(0));
    }
    void zero_grad() {
        if (!g.empty()) g.assign(g.size(), real(0));
    }
};

using tptr = std::shared_ptr<tensor>;

tptr make_tensor(std::vector<int> shape, bool requires_grad = false);
tptr full(std::vector<int> shape, real value, bool requires_grad = false);
tptr zeros(std::vector<int> shape, bool requires_grad = false);
tptr ones(std::vector<int> shape, bool requires_grad = false);
tptr from_values(std::vector<int> shape, std::vector<real> values, bool requires_grad = false);
// i.i.d. N(0, scale^2) entries
tptr randn(rng& r, std::vector<int> shape, real scale, bool requires_grad = false);

// copy of values only; never requires grad
tptr detach(const tptr& x);

void require_same_shape(const tensor& a, const tensor& b, const char* where);
void check_finite(const tensor& t, const char* where);

} // namespace hiergen
