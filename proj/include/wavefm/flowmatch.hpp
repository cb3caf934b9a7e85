#pragma once

// Training-side flow matching: linear interpolation between noise and clean
// latents, contiguous span masks, context construction, joint condition
// dropout, the masked velocity regression loss, and the feature-alignment
// auxiliary loss.

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "wavefm/common.hpp"
#include "wavefm/rng.hpp"
#include "wavefm/tensor.hpp"

namespace wavefm {

struct SpanMask {
    std::vector<uint8_t> m;  // per frame, 1 = visible context, 0 = target

    size_t size() const { return m.size(); }
    size_t masked_count() const {
        size_t n = 0;
        for (uint8_t b : m) n += (b == 0);
        return n;
    }
    double masked_fraction() const { return double(masked_count()) / double(m.size()); }
};

// Mask a single contiguous span covering round(r*T) frames.
inline SpanMask make_span_mask_with_ratio(size_t T, double r, Rng& rng) {
    require(T >= 1, "ShapeMismatch", "mask needs at least one frame");
    require(r >= 0.0 && r <= 1.0, "OutOfRange", "mask ratio outside [0,1]");
    size_t span = std::min<size_t>(T, size_t(std::llround(r * double(T))));
    SpanMask sm;
    sm.m.assign(T, 1);
    const size_t start = rng.below(T - span + 1);
    for (size_t i = start; i < start + span; ++i) sm.m[i] = 0;
    return sm;
}

inline SpanMask make_span_mask(size_t T, Rng& rng, double r_lo = 0.7, double r_hi = 1.0) {
    require(0.0 <= r_lo && r_lo <= r_hi && r_hi <= 1.0, "OutOfRange", "bad mask ratio range");
    const double r = rng.uniform(r_lo, r_hi);
    return make_span_mask_with_ratio(T, r, rng);
}

// true = drop both the audio context and the text condition for this item.
inline bool cond_dropout(Rng& rng, double p = 0.1) {
    require(p >= 0.0 && p <= 1.0, "OutOfRange", "dropout probability outside [0,1]");
    return rng.bernoulli(p);
}

// z_t = (1-t) z0 + t z1
template <typename S>
Tensor<S> interpolate(const Tensor<S>& z0, const Tensor<S>& z1, double t) {
    require(z0.shape() == z1.shape(), "ShapeMismatch", "interpolate endpoint shapes differ");
    require(t >= 0.0 && t <= 1.0, "OutOfRange", "interpolation time outside [0,1]");
    return add(scale(z0, S(1.0 - t)), scale(z1, S(t)));
}

// z_ctx = m ⊙ z1: masked frames zeroed, visible frames copied.
template <typename S>
Tensor<S> make_context(const Tensor<S>& z1, const SpanMask& mask) {
    require(z1.shape().size() == 2, "ShapeMismatch", "latent must be [D, T]");
    const size_t D = z1.dim(0), T = z1.dim(1);
    require(mask.size() == T, "ShapeMismatch", "mask length does not match frames");
    std::vector<S> v(z1.val());
    for (size_t d = 0; d < D; ++d)
        for (size_t f = 0; f < T; ++f)
            if (!mask.m[f]) v[d * T + f] = S(0);
    return Tensor<S>::from(z1.shape(), std::move(v));
}

// Mean squared velocity error over masked frames only; visible frames
// contribute exactly zero regardless of the prediction there.
template <typename S>
Tensor<S> cfm_loss(const Tensor<S>& v_pred, const Tensor<S>& z0, const Tensor<S>& z1,
                   const SpanMask& mask) {
    require(v_pred.shape().size() == 2, "ShapeMismatch", "velocity must be [D, T]");
    require(v_pred.shape() == z0.shape() && v_pred.shape() == z1.shape(), "ShapeMismatch",
            "velocity/endpoint shapes differ");
    const size_t D = v_pred.dim(0), T = v_pred.dim(1);
    require(mask.size() == T, "ShapeMismatch", "mask length does not match frames");
    const size_t n_masked = mask.masked_count();
    require(n_masked > 0, "AllVisible", "mask has no generation frames");

    std::vector<S> tgt(D * T), wt(D * T);
    for (size_t d = 0; d < D; ++d)
        for (size_t f = 0; f < T; ++f) {
            tgt[d * T + f] = z1.val()[d * T + f] - z0.val()[d * T + f];
            wt[d * T + f] = mask.m[f] ? S(0) : S(1);
        }
    auto err = mul(square_t(sub(v_pred, Tensor<S>::from(v_pred.shape(), std::move(tgt)))),
                   Tensor<S>::from(v_pred.shape(), std::move(wt)));
    return scale(sum_all(err), static_cast<S>(1.0 / double(D * n_masked)));
}

// Nearest-frame resampling of [F, T_src] features onto T_dst columns.
template <typename S>
std::vector<S> resample_nearest(const std::vector<S>& src, size_t F, size_t t_src,
                                size_t t_dst) {
    require(src.size() == F * t_src, "ShapeMismatch", "feature buffer size mismatch");
    require(t_src >= 1 && t_dst >= 1, "ShapeMismatch", "empty feature axis");
    std::vector<S> dst(F * t_dst);
    for (size_t j = 0; j < t_dst; ++j) {
        size_t i = std::min<size_t>(t_src - 1, size_t(double(j + 0.5) * double(t_src) /
                                                      double(t_dst)));
        for (size_t f = 0; f < F; ++f) dst[f * t_dst + j] = src[f * t_src + i];
    }
    return dst;
}

// Mean L1 between a learned linear projection of the tapped hidden state
// [W, T] and frame-aligned target features [F, T].
template <typename S>
Tensor<S> repa_loss(const Tensor<S>& repa_hidden, const Tensor<S>& target,
                    const Tensor<S>& proj_w, const Tensor<S>& proj_b) {
    require(repa_hidden.shape().size() == 2 && target.shape().size() == 2, "ShapeMismatch",
            "repa inputs must be 2-D");
    const size_t W = repa_hidden.dim(0), T = repa_hidden.dim(1), F = target.dim(0);
    require(target.dim(1) == T, "ShapeMismatch",
            "target frames " + std::to_string(target.dim(1)) + " vs hidden frames " +
                std::to_string(T));
    require(proj_w.shape() == Shape{W, F} && proj_b.shape() == Shape{F}, "ShapeMismatch",
            "projection must map hidden width to feature count");
    auto proj = bcast_add_cols(matmul(transpose2d(repa_hidden), proj_w), proj_b);  // [T, F]
    return mean_all(abs_t(sub(proj, transpose2d(target))));
}

template <typename S>
struct TrainBatchItem {
    Tensor<S> z1;  // clean latent [D, T]
    Tensor<S> z0;  // recorded noise draw [D, T]
    double t = 0.0;
    SpanMask mask;
    std::optional<Tensor<S>> q;
    bool drop_cond = false;
};

}  // namespace wavefm
