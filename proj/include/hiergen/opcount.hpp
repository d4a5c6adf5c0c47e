#pragma once

// Attention-pair counting for the efficiency comparison. Three regimes are
// measured with instrumented attention calls and checked against closed
// forms:
//   scale-wise, cached: scale k costs n_k * (prefix_k + n_k + c_k)
//   raster, cached:     token t costs (t + c)
//   raster, no cache:   token t costs t*(t+1)/2 + t*c (full recompute)
// The scale-wise decoder conditions on one hierarchy level per scale (c_k);
// a raster decoder has no scale structure, so it sees the whole stacked
// hierarchy (c = levels * tokens_per_level) at every step.

#include <cstdint>

#include "hiergen/tokenizer.hpp"

namespace hiergen {

struct opcount_report {
    int64_t scalewise_measured = 0;
    int64_t scalewise_closed = 0;
    int64_t raster_cached_measured = 0;
    int64_t raster_cached_closed = 0;
    int64_t raster_recompute_measured = 0;
    int64_t raster_recompute_closed = 0;
    int raster_tokens = 0;  // T, the final-resolution token count
    int cond_per_scale = 0; // c_k
    int cond_raster = 0;    // c

    bool all_match() const {
        return scalewise_measured == scalewise_closed &&
               raster_cached_measured == raster_cached_closed &&
               raster_recompute_measured == raster_recompute_closed;
    }
};

int64_t scalewise_pairs_closed(const scale_schedule& schedule, int cond_per_scale);
int64_t raster_cached_pairs_closed(int tokens, int cond);
int64_t raster_recompute_pairs_closed(int tokens, int cond);

// drives instrumented attention probes for all three regimes; raster_side is
// the side of the final square grid (tokens = side * side)
opcount_report run_opcount(const scale_schedule& schedule, int raster_side, int tokens_per_level,
                           int levels);

} // namespace hiergen
