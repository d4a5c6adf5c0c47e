#pragma once

// Deterministic randomness. All stochastic behavior in the project flows
// through this wrapper so results are reproducible bit-for-bit across runs.
// Gaussian draws use Box-Muller on top of mt19937_64 instead of
// std::normal_distribution, whose output is implementation-defined.

#include <cstdint>
#include <random>

namespace hiergen {

// SplitMix64 finalizer; used to derive independent stream seeds.
uint64_t splitmix64(uint64_t x);

// Seed for a per-item stream (sample index, candidate index, ...).
inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
    return splitmix64(base + 0x9e3779b97f4a7c15ull * (stream + 1));
}

class rng {
public:
    explicit rng(uint64_t seed) : gen_(seed) {}

    // uniform in [0, 1)
    double uniform();
    // uniform in [lo, hi)
    double uniform(double lo, double hi);
    // standard normal
    double gaussian();
    // uniform integer in [0, n), n > 0
    int64_t uniform_int(int64_t n);

private:
    std::mt19937_64 gen_;
};

} // namespace hiergen
