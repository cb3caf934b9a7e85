#pragma once

// Velocity network v(z_t, t, z_ctx, q): DiT-style transformer over latent
// frames with a single global AdaLN modulation head shared by all layers,
// QK-normalized rotary attention, cross-attention to text, a long skip from
// the projected input to the final hidden state, and a feature tap used by
// representation alignment.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "wavefm/attention.hpp"
#include "wavefm/common.hpp"
#include "wavefm/params.hpp"
#include "wavefm/tensor.hpp"

namespace wavefm {

struct DitConfig {
    size_t layers = 4;
    size_t width = 64;
    size_t heads = 4;
    size_t repa_layer = 0;  // 0 resolves to min(8, layers)
    size_t latent_dim = 64;
    size_t text_dim = 64;

    size_t resolved_repa() const { return repa_layer == 0 ? std::min<size_t>(8, layers) : repa_layer; }

    void validate() const {
        require(layers > 0 && width > 0 && heads > 0 && latent_dim > 0 && text_dim > 0,
                "ConfigError", "dit dims must be positive");
        require(width % heads == 0, "ConfigError", "width not divisible by heads");
        require((width / heads) % 2 == 0, "ConfigError", "head dim must be even for rotation");
        require(width % 2 == 0 && width >= 4, "ConfigError", "width must be even and >= 4");
        const size_t rl = resolved_repa();
        require(rl >= 1 && rl <= layers, "ConfigError", "repa layer out of range");
    }
};

template <typename S>
struct ModelInput {
    Tensor<S> z_t;    // [D, T]
    Tensor<S> z_ctx;  // [D, T], zero at generation positions
    double t = 0.0;
    std::optional<Tensor<S>> q;  // [L, E]; absent = unconditional
    bool ctx_present = true;
    // Position offsets exercise the relative-position property; inference
    // leaves both at zero.
    long pos_offset = 0;
    long text_pos_offset = 0;
};

template <typename S>
struct ModelOutput {
    Tensor<S> v;            // [D, T]
    Tensor<S> repa_hidden;  // [width, T]
};

// Sinusoidal embedding of t in [0,1]: half sine, half cosine, geometric
// frequency ladder. t is scaled so the fastest channel sweeps ~1000 radians
// while the slowest stays monotonic on the unit interval.
template <typename S>
std::vector<S> sinusoid_embed(double t, size_t width) {
    require(t >= 0.0 && t <= 1.0, "OutOfRange", "timestep outside [0,1]");
    const size_t half = width / 2;
    std::vector<S> e(width);
    const double x = 1000.0 * t;
    for (size_t i = 0; i < half; ++i) {
        const double freq = std::pow(10000.0, -double(i) / double(half));
        e[i] = static_cast<S>(std::sin(x * freq));
        e[half + i] = static_cast<S>(std::cos(x * freq));
    }
    return e;
}

template <typename S>
class Dit {
public:
    Dit(const DitConfig& cfg, ParamStore<S>& ps, const std::string& prefix = "dit")
        : cfg_(cfg) {
        cfg_.validate();
        const size_t W = cfg_.width, D = cfg_.latent_dim, E = cfg_.text_dim;
        const double ws = 1.0 / std::sqrt(double(W));
        in_w_ = ps.create(prefix + ".in.w", {2 * D, W}, 1.0 / std::sqrt(double(2 * D)));
        in_b_ = ps.create(prefix + ".in.b", {W}, 0.0);
        t_w1_ = ps.create(prefix + ".t.w1", {W, W}, ws);
        t_b1_ = ps.create(prefix + ".t.b1", {W}, 0.0);
        t_w2_ = ps.create(prefix + ".t.w2", {W, W}, ws);
        t_b2_ = ps.create(prefix + ".t.b2", {W}, 0.0);
        // One modulation head for the whole stack: (shift, scale, gate) for
        // each of self-attention, cross-attention and the MLP. Zero-init so
        // every residual branch is gated off at the start.
        adaln_w_ = ps.create(prefix + ".adaln.w", {W, 9 * W}, 0.0);
        adaln_b_ = ps.create(prefix + ".adaln.b", {9 * W}, 0.0);
        for (size_t l = 0; l < cfg_.layers; ++l) {
            const std::string p = prefix + ".l" + std::to_string(l);
            Layer lay;
            lay.wq = ps.create(p + ".wq", {W, W}, ws);
            lay.wk = ps.create(p + ".wk", {W, W}, ws);
            lay.wv = ps.create(p + ".wv", {W, W}, ws);
            lay.wo = ps.create(p + ".wo", {W, W}, ws);
            lay.bq = ps.create(p + ".bq", {W}, 0.0);
            lay.bk = ps.create(p + ".bk", {W}, 0.0);
            lay.bv = ps.create(p + ".bv", {W}, 0.0);
            lay.bo = ps.create(p + ".bo", {W}, 0.0);
            lay.qgain = ps.create_const(p + ".qgain", {W}, S(1));
            lay.kgain = ps.create_const(p + ".kgain", {W}, S(1));
            lay.cwq = ps.create(p + ".cwq", {W, W}, ws);
            lay.cwk = ps.create(p + ".cwk", {E, W}, 1.0 / std::sqrt(double(E)));
            lay.cwv = ps.create(p + ".cwv", {E, W}, 1.0 / std::sqrt(double(E)));
            lay.cwo = ps.create(p + ".cwo", {W, W}, ws);
            lay.cbq = ps.create(p + ".cbq", {W}, 0.0);
            lay.cbk = ps.create(p + ".cbk", {W}, 0.0);
            lay.cbv = ps.create(p + ".cbv", {W}, 0.0);
            lay.cbo = ps.create(p + ".cbo", {W}, 0.0);
            lay.cqgain = ps.create_const(p + ".cqgain", {W}, S(1));
            lay.ckgain = ps.create_const(p + ".ckgain", {W}, S(1));
            lay.mlp_w1 = ps.create(p + ".mlp.w1", {W, 4 * W}, ws);
            lay.mlp_b1 = ps.create(p + ".mlp.b1", {4 * W}, 0.0);
            lay.mlp_w2 = ps.create(p + ".mlp.w2", {4 * W, W}, 1.0 / std::sqrt(double(4 * W)));
            lay.mlp_b2 = ps.create(p + ".mlp.b2", {W}, 0.0);
            layers_.push_back(std::move(lay));
        }
        // Output projection starts at zero: the network is the zero velocity
        // field at initialization.
        out_w_ = ps.create(prefix + ".out.w", {W, D}, 0.0);
        out_b_ = ps.create(prefix + ".out.b", {D}, 0.0);
    }

    Tensor<S> timestep_embed(double t) const {
        auto e = Tensor<S>::from({1, cfg_.width}, sinusoid_embed<S>(t, cfg_.width));
        auto h = silu_t(bcast_add_cols(matmul(e, t_w1_), t_b1_));
        return bcast_add_cols(matmul(h, t_w2_), t_b2_);
    }

    ModelOutput<S> forward(const ModelInput<S>& in) const {
        const size_t D = cfg_.latent_dim, W = cfg_.width;
        require(in.z_t.shape().size() == 2 && in.z_t.dim(0) == D, "ShapeMismatch",
                "z_t must be [D, T]");
        require(in.z_ctx.shape() == in.z_t.shape(), "ShapeMismatch", "z_ctx/z_t shape mismatch");
        if (!in.ctx_present) {
            for (S v : in.z_ctx.val())
                require(v == S(0), "ShapeMismatch", "z_ctx must be zero when ctx is absent");
        }
        if (in.q) {
            require(in.q->shape().size() == 2 && in.q->dim(1) == cfg_.text_dim, "ShapeMismatch",
                    "text rep must be [L, " + std::to_string(cfg_.text_dim) + "]");
        }

        auto tokens = bcast_add_cols(
            matmul(transpose2d(concat_rows<S>({in.z_t, in.z_ctx})), in_w_), in_b_);  // [T, W]

        // Shared modulation vectors, one set for every layer.
        auto temb = timestep_embed(in.t);  // [1, W]
        auto mod = bcast_add_cols(matmul(temb, adaln_w_), adaln_b_);
        auto chunk = [&](size_t i) {
            return reshape(slice_cols(mod, i * W, (i + 1) * W), {W});
        };
        auto sh_sa = chunk(0), sc_sa = chunk(1), g_sa = chunk(2);
        auto sh_ca = chunk(3), sc_ca = chunk(4), g_ca = chunk(5);
        auto sh_ml = chunk(6), sc_ml = chunk(7), g_ml = chunk(8);
        auto modulate = [&](const Tensor<S>& x, const Tensor<S>& sh, const Tensor<S>& sc) {
            return bcast_add_cols(bcast_mul_cols(layer_norm_rows(x, S(1e-6)),
                                                 affine(sc, S(1), S(1))),
                                  sh);
        };

        auto h = tokens;
        Tensor<S> repa;
        const size_t repa_at = cfg_.resolved_repa();
        for (size_t l = 0; l < cfg_.layers; ++l) {
            const auto& L = layers_[l];
            {
                auto a = modulate(h, sh_sa, sc_sa);
                auto q = rope_apply(qk_head_norm(bcast_add_cols(matmul(a, L.wq), L.bq),
                                                 cfg_.heads, L.qgain),
                                    cfg_.heads, in.pos_offset);
                auto k = rope_apply(qk_head_norm(bcast_add_cols(matmul(a, L.wk), L.bk),
                                                 cfg_.heads, L.kgain),
                                    cfg_.heads, in.pos_offset);
                auto v = bcast_add_cols(matmul(a, L.wv), L.bv);
                auto o = bcast_add_cols(
                    matmul(multihead_attention(q, k, v, cfg_.heads), L.wo), L.bo);
                h = add(h, bcast_mul_cols(o, g_sa));
            }
            if (in.q) {
                auto a = modulate(h, sh_ca, sc_ca);
                auto cq = rope_apply(qk_head_norm(bcast_add_cols(matmul(a, L.cwq), L.cbq),
                                                  cfg_.heads, L.cqgain),
                                     cfg_.heads, in.pos_offset);
                auto ck = rope_apply(qk_head_norm(bcast_add_cols(matmul(*in.q, L.cwk), L.cbk),
                                                  cfg_.heads, L.ckgain),
                                     cfg_.heads, in.text_pos_offset);
                auto cv = bcast_add_cols(matmul(*in.q, L.cwv), L.cbv);
                auto o = bcast_add_cols(
                    matmul(multihead_attention(cq, ck, cv, cfg_.heads), L.cwo), L.cbo);
                h = add(h, bcast_mul_cols(o, g_ca));
            }
            {
                auto m = modulate(h, sh_ml, sc_ml);
                m = gelu_t(bcast_add_cols(matmul(m, L.mlp_w1), L.mlp_b1));
                m = bcast_add_cols(matmul(m, L.mlp_w2), L.mlp_b2);
                h = add(h, bcast_mul_cols(m, g_ml));
            }
            if (l + 1 == repa_at) repa = transpose2d(h);
        }

        // Long skip: the projected input joins the final hidden state.
        h = add(h, tokens);
        auto v = transpose2d(bcast_add_cols(matmul(h, out_w_), out_b_));
        return {v, repa};
    }

    const DitConfig& config() const { return cfg_; }

private:
    struct Layer {
        Tensor<S> wq, wk, wv, wo, bq, bk, bv, bo, qgain, kgain;
        Tensor<S> cwq, cwk, cwv, cwo, cbq, cbk, cbv, cbo, cqgain, ckgain;
        Tensor<S> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    };

    DitConfig cfg_;
    Tensor<S> in_w_, in_b_, t_w1_, t_b1_, t_w2_, t_b2_, adaln_w_, adaln_b_, out_w_, out_b_;
    std::vector<Layer> layers_;
};

}  // namespace wavefm
