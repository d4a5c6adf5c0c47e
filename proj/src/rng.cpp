#include "hiergen/rng.hpp"

#include <cmath>

namespace hiergen {

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

double rng::uniform() {
    // 53 mantissa bits from the top of the 64-bit draw
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
}

double rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double rng::gaussian() {
    // Box-Muller; u clamped away from 0 so log stays finite
    double u = uniform();
    if (u < 1e-300) u = 1e-300;
    double v = uniform();
    return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * 3.14159265358979323846 * v);
}

int64_t rng::uniform_int(int64_t n) {
    return static_cast<int64_t>(uniform() * static_cast<double>(n)) % n;
}

} // namespace hiergen
