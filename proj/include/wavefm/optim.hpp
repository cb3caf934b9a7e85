#pragma once

// Decoupled-weight-decay Adam with bias correction, plus the linear
// warmup/decay learning-rate schedule. Optimizer moments live in flat
// buffers keyed by parameter name so checkpoints can carry them.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "wavefm/common.hpp"
#include "wavefm/params.hpp"

namespace wavefm {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

template <typename S>
class AdamW {
public:
    AdamW(ParamStore<S>& ps, AdamConfig cfg = {}) : ps_(&ps), cfg_(cfg) {
        for (auto& [name, t] : ps) {
            m_[name].assign(t.numel(), S(0));
            v_[name].assign(t.numel(), S(0));
        }
    }

    // One update over every parameter's accumulated gradient. If any
    // gradient entry is non-finite the whole step is skipped (moments and
    // step count untouched) and false is returned.
    bool step(double lr) {
        for (auto& [name, t] : *ps_)
            if (!all_finite(t.grad())) return false;
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        for (auto& [name, t] : *ps_) {
            auto& m = m_.at(name);
            auto& v = v_.at(name);
            auto& g = t.grad();
            auto& p = t.val();
            for (size_t i = 0; i < p.size(); ++i) {
                m[i] = S(cfg_.beta1) * m[i] + S(1.0 - cfg_.beta1) * g[i];
                v[i] = S(cfg_.beta2) * v[i] + S(1.0 - cfg_.beta2) * g[i] * g[i];
                const double mhat = double(m[i]) / bc1;
                const double vhat = double(v[i]) / bc2;
                p[i] = S(double(p[i]) - lr * (mhat / (std::sqrt(vhat) + cfg_.eps)) -
                         lr * cfg_.weight_decay * double(p[i]));
            }
        }
        return true;
    }

    uint64_t steps_taken() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

    // Checkpoint plumbing: moments exposed as named tensors.
    std::map<std::string, std::vector<S>>& moment1() { return m_; }
    std::map<std::string, std::vector<S>>& moment2() { return v_; }
    void set_steps_taken(uint64_t t) { t_ = t; }

private:
    ParamStore<S>* ps_;
    AdamConfig cfg_;
    uint64_t t_ = 0;
    std::map<std::string, std::vector<S>> m_, v_;
};

// Linear ramp 0 -> lr_hi over `warmup` steps, then linear decay to lr_lo at
// `total_steps`; constant lr_lo afterwards.
inline double lr_schedule(uint64_t step, uint64_t warmup, double lr_hi, double lr_lo,
                          uint64_t total_steps) {
    require(warmup >= 1, "ConfigError", "warmup must be at least one step");
    require(total_steps > warmup, "ConfigError", "total steps must exceed warmup");
    if (step <= warmup) return lr_hi * double(step) / double(warmup);
    if (step >= total_steps) return lr_lo;
    const double f = double(step - warmup) / double(total_steps - warmup);
    return lr_hi + (lr_lo - lr_hi) * f;
}

}  // namespace wavefm
