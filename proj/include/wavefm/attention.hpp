#pragma once

// Multi-head attention built from the tensor primitives. Sequences are
// [L, E] row major; heads partition the feature axis contiguously.

#include <cmath>

#include "wavefm/common.hpp"
#include "wavefm/tensor.hpp"

namespace wavefm {

// Scaled dot-product attention; q is [Lq, E], k and v are [Lk, E].
template <typename S>
Tensor<S> multihead_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                              size_t n_heads) {
    require(q.shape().size() == 2 && k.shape().size() == 2 && v.shape().size() == 2,
            "ShapeMismatch", "attention wants 2-D inputs");
    const size_t E = q.dim(1);
    require(k.dim(1) == E && v.dim(1) == E, "ShapeMismatch", "attention width mismatch");
    require(k.dim(0) == v.dim(0), "ShapeMismatch", "key/value length mismatch");
    require(E % n_heads == 0, "ShapeMismatch", "width not divisible by heads");
    const size_t hd = E / n_heads;
    const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(double(hd)));

    std::vector<Tensor<S>> outs;
    outs.reserve(n_heads);
    for (size_t h = 0; h < n_heads; ++h) {
        auto qh = slice_cols(q, h * hd, (h + 1) * hd);
        auto kh = slice_cols(k, h * hd, (h + 1) * hd);
        auto vh = slice_cols(v, h * hd, (h + 1) * hd);
        auto scores = scale(matmul(qh, transpose2d(kh)), inv_sqrt);
        outs.push_back(matmul(softmax_rows(scores), vh));
    }
    return concat_cols(outs);
}

// Per-head RMS normalization with a learnable per-dimension gain [E].
template <typename S>
Tensor<S> qk_head_norm(const Tensor<S>& x, size_t n_heads, const Tensor<S>& gain) {
    require(x.shape().size() == 2, "ShapeMismatch", "qk norm wants [L, E]");
    const size_t E = x.dim(1);
    require(E % n_heads == 0, "ShapeMismatch", "width not divisible by heads");
    require(gain.shape() == Shape{E}, "ShapeMismatch", "qk gain must be [E]");
    const size_t hd = E / n_heads;
    std::vector<Tensor<S>> parts;
    parts.reserve(n_heads);
    for (size_t h = 0; h < n_heads; ++h)
        parts.push_back(rms_norm_rows(slice_cols(x, h * hd, (h + 1) * hd), S(1e-6)));
    return bcast_mul_cols(concat_cols(parts), gain);
}

}  // namespace wavefm
