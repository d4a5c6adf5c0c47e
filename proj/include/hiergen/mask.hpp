#pragma once

// Boolean attention mask over (query, key) pairs. A query row with no
// allowed key has no valid softmax and is rejected by validate().

#include <cstdint>
#include <vector>

#include "hiergen/error.hpp"

namespace hiergen {

struct attn_mask {
    int q_len = 0;
    int k_len = 0;
    std::vector<uint8_t> allow;  // q_len * k_len, row-major

    attn_mask() = default;
    attn_mask(int q, int k, bool allowed = false)
        : q_len(q), k_len(k), allow(static_cast<size_t>(q) * k, allowed ? 1 : 0) {}

    static attn_mask full(int q, int k) { return attn_mask(q, k, true); }

    bool allowed(int qi, int kj) const {
        return allow[static_cast<size_t>(qi) * k_len + kj] != 0;
    }
    void set(int qi, int kj, bool a) {
        allow[static_cast<size_t>(qi) * k_len + kj] = a ? 1 : 0;
    }

    int64_t allowed_pairs() const {
        int64_t n = 0;
        for (uint8_t a : allow) n += a;
        return n;
    }

    // every query row must be able to attend somewhere
    void validate() const {
        for (int qi = 0; qi < q_len; ++qi) {
            bool any = false;
            for (int kj = 0; kj < k_len && !any; ++kj) any = allowed(qi, kj);
            if (!any)
                throw mask_error("attention mask: query row " + std::to_string(qi) +
                                 " is fully masked");
        }
    }
};

} // namespace hiergen
