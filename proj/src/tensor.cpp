#include "hiergen/tensor.hpp"

#include <cmath>
#include <string>

namespace hiergen {

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw dim_error("negative extent in shape");
        n *= d;
    }
    return n;
}

tptr make_tensor(std::vector<int> shape, bool requires_grad) {
    auto t = std::make_shared<tensor>();
    int64_t n = shape_numel(shape);
    t->shape = std::move(shape);
    t->v.assign(static_cast<size_t>(n), real(0));
    t->requires_grad = requires_grad;
    if (requires_grad) t->ensure_grad();
    return t;
}

tptr full(std::vector<int> shape, real value, bool requires_grad) {
    auto t = make_tensor(std::move(shape), requires_grad);
    for (auto& x : t->v) x = value;
    return t;
}

tptr zeros(std::vector<int> shape, bool requires_grad) {
    return make_tensor(std::move(shape), requires_grad);
}

tptr ones(std::vector<int> shape, bool requires_grad) {
    return full(std::move(shape), real(1), requires_grad);
}

tptr from_values(std::vector<int> shape, std::vector<real> values, bool requires_grad) {
    int64_t n = shape_numel(shape);
    if (n != static_cast<int64_t>(values.size()))
        throw dim_error("from_values: " + std::to_string(values.size()) + " values for shape of " +
                        std::to_string(n));
    auto t = std::make_shared<tensor>();
    t->shape = std::move(shape);
    t->v = std::move(values);
    t->requires_grad = requires_grad;
    if (requires_grad) t->ensure_grad();
    return t;
}

tptr randn(rng& r, std::vector<int> shape, real scale, bool requires_grad) {
    auto t = make_tensor(std::move(shape), requires_grad);
    for (auto& x : t->v) x = static_cast<real>(r.gaussian()) * scale;
    return t;
}

tptr detach(const tptr& x) {
    auto t = std::make_shared<tensor>();
    t->shape = x->shape;
    t->v = x->v;
    t->requires_grad = false;
    return t;
}

void require_same_shape(const tensor& a, const tensor& b, const char* where) {
    if (a.shape != b.shape) throw dim_error(std::string(where) + ": shape mismatch");
}

void check_finite(const tensor& t, const char* where) {
    for (real x : t.v)
        if (!std::isfinite(static_cast<double>(x)))
            throw numeric_error(std::string(where) + ": non-finite value");
}

} // namespace hiergen
