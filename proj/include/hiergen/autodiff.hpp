#pragma once

// Reverse-mode differentiation over a dynamic tape. Ops compute values
// eagerly and, while the graph is recording, push a closure that propagates
// output gradients to input gradients. backward() replays the tape in
// reverse. Gradients accumulate in a fixed order, so repeated runs of the
// same program produce identical results.

#include <functional>
#include <utility>
#include <vector>

#include "hiergen/mask.hpp"
#include "hiergen/tensor.hpp"

namespace hiergen {

struct graph {
    std::vector<std::function<void()>> tape;
    bool recording = true;

    void push(std::function<void()> f) { tape.push_back(std::move(f)); }

    // seeds d(loss)/d(loss) = 1 and replays the tape in reverse
    void backward(const tptr& loss);
};

// positions for 2D rotary embedding: (row, col) per token
using pos2d = std::pair<real, real>;
using pos_list = std::vector<pos2d>;

// elementwise, shapes must match
tptr add(graph& g, const tptr& a, const tptr& b);
tptr sub(graph& g, const tptr& a, const tptr& b);
tptr mul(graph& g, const tptr& a, const tptr& b);
tptr scale(graph& g, const tptr& a, real c);

// x: [T,d], row: [1,d] or [d]; adds row to every row of x
tptr add_row_broadcast(graph& g, const tptr& x, const tptr& row);

// y = x @ W (+ b); x: [T,di], W: [di,do], b: [do] or empty
tptr linear(graph& g, const tptr& x, const tptr& W, const tptr& b = nullptr);

tptr matmul(graph& g, const tptr& a, const tptr& b);     // [m,k]x[k,n]
tptr matmul_nt(graph& g, const tptr& a, const tptr& b);  // [m,k]x[n,k]^T -> [m,n]

tptr silu(graph& g, const tptr& x);
tptr sigmoid_op(graph& g, const tptr& x);

// per-row RMS normalization with learned gain; eps = 1e-6
tptr rmsnorm(graph& g, const tptr& x, const tptr& gain);
// per-row standardization, no affine; eps = 1e-6
tptr layernorm_rows(graph& g, const tptr& x);
// out = ln * (1 + mod[0,0:d]) + mod[0,d:2d]; ln: [T,d], mod: [1,2d]
tptr adaln_affine(graph& g, const tptr& ln, const tptr& mod);
// rows scaled to unit norm; zero rows pass through (eps inside the sqrt)
tptr l2_normalize_rows(graph& g, const tptr& x);

tptr mean_pool_rows(graph& g, const tptr& x);  // [T,d] -> [1,d]
tptr mean_all(graph& g, const tptr& x);        // -> [1]
// sum of squared differences over all elements -> [1]
tptr sq_diff_sum(graph& g, const tptr& a, const tptr& b);
// mean of squared differences -> [1]
tptr mse(graph& g, const tptr& a, const tptr& b);

// mean_t [ -log softmax(logits[t,:])[target[t]] ] -> [1]
tptr cross_entropy_mean(graph& g, const tptr& logits, const std::vector<int>& targets);

// row softmax; disallowed keys get exactly zero weight
tptr masked_softmax_rows(graph& g, const tptr& scores, const attn_mask& mask);

tptr slice_rows(graph& g, const tptr& x, int r0, int r1);
tptr concat_rows(graph& g, const std::vector<tptr>& parts);
tptr slice_cols(graph& g, const tptr& x, int c0, int c1);
tptr concat_cols(graph& g, const std::vector<tptr>& parts);
tptr reshape(graph& g, const tptr& x, std::vector<int> shape);

// rows of table selected by index; gradient scatter-adds into the table
tptr embed_rows(graph& g, const tptr& table, const std::vector<int32_t>& idx);

// 2D rotary embedding, axial: first half of each head dim rotates with the
// row coordinate, second half with the column coordinate; base 10000.
// x: [T,d], d divisible by 4, positions.size() == T
tptr rope2d(graph& g, const tptr& x, const pos_list& positions);

// image ops; feature maps are [h,w,c] row-major
tptr im2col(graph& g, const tptr& x, int kh, int kw, int stride, int pad, int& oh, int& ow);
tptr upsample_nearest2(graph& g, const tptr& x);
tptr upsample_bilinear(graph& g, const tptr& x, int H, int W);
// integer-factor box average; h % h2 == 0 and w % w2 == 0
tptr downsample_area(graph& g, const tptr& x, int h2, int w2);

// value path follows fhat, gradient path follows f
tptr straight_through(graph& g, const tptr& f, const tptr& fhat);

} // namespace hiergen
