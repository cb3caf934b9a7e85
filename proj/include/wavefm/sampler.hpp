#pragma once

// Inference: Euler integration of the learned velocity field with
// ground-truth context overwriting, classifier-free guidance, and adaptive
// projection guidance with reverse momentum. Pure double-precision value
// arithmetic; the network sits behind a callable so mock fields can drive
// every contract test.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "wavefm/common.hpp"
#include "wavefm/rng.hpp"

namespace wavefm {

enum class Guidance { kNone, kCfg, kApg };

struct SamplerConfig {
    size_t nfe = 16;
    Guidance guidance = Guidance::kApg;
    double alpha = 4.0;
    double eta = 0.5;
    double beta = -0.3;
    double t_clip = 1e-3;

    void validate() const {
        require(nfe >= 1, "ConfigError", "nfe must be at least 1");
        require(t_clip > 0.0 && t_clip < 0.1, "ConfigError", "t_clip outside (0, 0.1)");
    }
};

// Running average of the guidance displacement; reset per utterance.
struct GuidanceState {
    std::vector<double> momentum;

    void reset(size_t n) { momentum.assign(n, 0.0); }
};

struct InferenceRequest {
    std::vector<double> prompt_latent;  // [D, T_ctx]
    size_t latent_dim = 0;
    size_t ctx_frames = 0;
    size_t total_frames = 0;
    std::vector<double> q;  // [q_len, q_dim], empty = no text condition
    size_t q_len = 0, q_dim = 0;
    uint64_t seed = 0;

    void validate() const {
        require(latent_dim > 0, "ConfigError", "latent dim must be positive");
        require(total_frames > ctx_frames, "EmptyGenRegion",
                "total frames must exceed context frames");
        require(prompt_latent.size() == latent_dim * ctx_frames, "ShapeMismatch",
                "prompt latent size does not match [D, T_ctx]");
        require(q.size() == q_len * q_dim, "ShapeMismatch", "text rep size mismatch");
    }
    size_t gen_frames() const { return total_frames - ctx_frames; }
};

// One velocity-field query. `conditional` distinguishes the full pass (text
// and context channel present) from the truncated unconditional pass.
struct FieldQuery {
    const std::vector<double>& z_t;    // [D, T]
    const std::vector<double>& z_ctx;  // [D, T]
    size_t D = 0, T = 0;
    double t = 0.0;
    bool conditional = true;
    const InferenceRequest* req = nullptr;
};

using FieldFn = std::function<std::vector<double>(const FieldQuery&)>;
using StepObserver = std::function<void(size_t step, double t, const std::vector<double>& z)>;

// T = T_ctx + round(T_ctx * target_chars / prompt_chars); callers may
// override with an explicit frame count instead.
inline size_t estimate_duration(size_t t_ctx, size_t prompt_chars, size_t target_chars) {
    require(prompt_chars > 0, "ConfigError", "prompt character count must be positive");
    return t_ctx + size_t(std::llround(double(t_ctx) * double(target_chars) /
                                       double(prompt_chars)));
}

// Replace frames [0, T_ctx) with t·clean + (1−t)·z0; later frames untouched.
inline void overwrite_ctx(std::vector<double>& z_t, const std::vector<double>& z_ctx_clean,
                          const std::vector<double>& z0_ctx, double t, size_t D, size_t T,
                          size_t t_ctx) {
    require(t_ctx <= T, "ShapeMismatch", "context extends past the sequence");
    require(z_t.size() == D * T, "ShapeMismatch", "z_t size mismatch");
    require(z_ctx_clean.size() == D * t_ctx && z0_ctx.size() == D * t_ctx, "ShapeMismatch",
            "context buffers must be [D, T_ctx]");
    for (size_t d = 0; d < D; ++d)
        for (size_t f = 0; f < t_ctx; ++f)
            z_t[d * T + f] = t * z_ctx_clean[d * t_ctx + f] + (1.0 - t) * z0_ctx[d * t_ctx + f];
}

// Truncate to the generation region: frames [T_ctx, T).
inline std::vector<double> make_uncond_input(const std::vector<double>& z_t, size_t D, size_t T,
                                             size_t t_ctx) {
    require(z_t.size() == D * T, "ShapeMismatch", "z_t size mismatch");
    require(t_ctx < T, "EmptyGenRegion", "no generation frames after the context");
    const size_t G = T - t_ctx;
    std::vector<double> out(D * G);
    for (size_t d = 0; d < D; ++d)
        for (size_t f = 0; f < G; ++f) out[d * G + f] = z_t[d * T + t_ctx + f];
    return out;
}

inline std::vector<double> cfg_velocity(const std::vector<double>& v_c,
                                        const std::vector<double>& v_u, double alpha) {
    require(v_c.size() == v_u.size(), "ShapeMismatch", "guidance velocity sizes differ");
    std::vector<double> v(v_c.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = v_c[i] + alpha * (v_c[i] - v_u[i]);
    return v;
}

// Project the guided displacement in the sample domain: mu = z + (1-t)v,
// momentum-average the displacement, split it against mu_c, rescale the
// parallel part by eta, and map back to a velocity.
inline std::vector<double> apg_velocity(const std::vector<double>& v_c,
                                        const std::vector<double>& v_u,
                                        const std::vector<double>& z_t, double t,
                                        const SamplerConfig& cfg, GuidanceState& state) {
    const size_t n = v_c.size();
    require(v_u.size() == n && z_t.size() == n, "ShapeMismatch", "apg buffer sizes differ");
    require(t < 1.0 - cfg.t_clip, "TDegenerate", "t too close to 1 for the sample-domain map");
    if (state.momentum.size() != n) state.reset(n);

    const double h = 1.0 - t;
    std::vector<double> mu_c(n), dmu(n);
    for (size_t i = 0; i < n; ++i) {
        mu_c[i] = z_t[i] + h * v_c[i];
        const double mu_u = z_t[i] + h * v_u[i];
        dmu[i] = mu_c[i] - mu_u;
    }
    // Reverse momentum applied before the decomposition.
    for (size_t i = 0; i < n; ++i) state.momentum[i] = dmu[i] + cfg.beta * state.momentum[i];
    const std::vector<double>& dbar = state.momentum;

    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < n; ++i) {
        num += dbar[i] * mu_c[i];
        den += mu_c[i] * mu_c[i];
    }
    const double coef = den < 1e-12 ? 0.0 : num / den;  // degenerate mu: no parallel part

    std::vector<double> v(n);
    for (size_t i = 0; i < n; ++i) {
        const double par = coef * mu_c[i];
        const double perp = dbar[i] - par;
        const double mu_apg = mu_c[i] + cfg.alpha * perp + cfg.eta * par;
        v[i] = (mu_apg - z_t[i]) / h;
    }
    return v;
}

// Euler integration on the uniform grid t_i = i/nfe. Context frames advance
// by the overwrite rule only; their predicted velocities are discarded. The
// observer (if any) sees the state right after each overwrite.
inline std::vector<double> euler_solve(const FieldFn& model, const InferenceRequest& req,
                                       const SamplerConfig& cfg,
                                       const StepObserver& observer = nullptr) {
    req.validate();
    cfg.validate();
    const size_t D = req.latent_dim, T = req.total_frames, C = req.ctx_frames;
    const size_t G = req.gen_frames();
    const double dt = 1.0 / double(cfg.nfe);

    // Noise draw for the full sequence; the context slice is kept so the
    // overwrite rule can re-blend it at every step.
    Rng rng(mix_seed(req.seed, "sample-z0"));
    std::vector<double> z(D * T);
    for (auto& v : z) v = rng.normal();
    std::vector<double> z0_ctx(D * C);
    for (size_t d = 0; d < D; ++d)
        for (size_t f = 0; f < C; ++f) z0_ctx[d * C + f] = z[d * T + f];

    // Conditional context channel: prompt at ctx frames, zero elsewhere.
    std::vector<double> ctx_channel(D * T, 0.0);
    for (size_t d = 0; d < D; ++d)
        for (size_t f = 0; f < C; ++f) ctx_channel[d * T + f] = req.prompt_latent[d * C + f];
    const std::vector<double> zeros_gen(D * G, 0.0);

    GuidanceState state;
    state.reset(D * G);

    for (size_t i = 0; i < cfg.nfe; ++i) {
        const double t = double(i) / double(cfg.nfe);
        overwrite_ctx(z, req.prompt_latent, z0_ctx, t, D, T, C);
        if (observer) observer(i, t, z);

        auto v_c = model(FieldQuery{z, ctx_channel, D, T, t, true, &req});
        require(v_c.size() == D * T, "ShapeMismatch", "model returned wrong velocity size");

        std::vector<double> v_gen(D * G);
        for (size_t d = 0; d < D; ++d)
            for (size_t f = 0; f < G; ++f) v_gen[d * G + f] = v_c[d * T + C + f];

        if (cfg.guidance != Guidance::kNone) {
            auto z_gen = make_uncond_input(z, D, T, C);
            auto v_u = model(FieldQuery{z_gen, zeros_gen, D, G, t, false, &req});
            require(v_u.size() == D * G, "ShapeMismatch",
                    "model returned wrong unconditional velocity size");
            v_gen = cfg.guidance == Guidance::kCfg
                        ? cfg_velocity(v_gen, v_u, cfg.alpha)
                        : apg_velocity(v_gen, v_u, z_gen, t, cfg, state);
        }

        for (size_t d = 0; d < D; ++d)
            for (size_t f = 0; f < G; ++f) z[d * T + C + f] += dt * v_gen[d * G + f];
    }
    return make_uncond_input(z, D, T, C);
}

}  // namespace wavefm
