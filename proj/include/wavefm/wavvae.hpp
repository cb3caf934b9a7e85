#pragma once

// Convolutional waveform autoencoder with a variational bottleneck.
// Each downsampling block adds a parameter-free shortcut that folds time
// into channels and averages channel groups; the decoder mirrors it with
// channel-to-space rearrangement plus channel replication. A multi-scale
// STFT discriminator drives the adversarial stage of training.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "wavefm/common.hpp"
#include "wavefm/params.hpp"
#include "wavefm/rng.hpp"
#include "wavefm/spectral.hpp"
#include "wavefm/tensor.hpp"

namespace wavefm {

// ---------------------------------------------------------------------------
// parameter-free shortcut primitives (autodiff ops)
// ---------------------------------------------------------------------------

// [C, T] -> [C*s, T/s]; out[c*s + j][tau] = in[c][tau*s + j].
template <typename S>
Tensor<S> space_to_channel(const Tensor<S>& x, size_t s) {
    require(x.shape().size() == 2, "ShapeMismatch", "space_to_channel expects [C,T]");
    const size_t C = x.dim(0), T = x.dim(1);
    require(s > 0 && T % s == 0, "Indivisible", "time axis not divisible by stride");
    const size_t To = T / s;
    auto out = detail::make_out<S>({C * s, To}, {x});
    for (size_t c = 0; c < C; ++c)
        for (size_t j = 0; j < s; ++j)
            for (size_t tau = 0; tau < To; ++tau)
                out->val[(c * s + j) * To + tau] = x.val()[c * T + tau * s + j];
    if (out->needs_grad) {
        auto xn = x.node();
        Node<S>* o = out.get();
        out->backprop = [o, xn, C, T, To, s] {
            xn->ensure_grad();
            for (size_t c = 0; c < C; ++c)
                for (size_t j = 0; j < s; ++j)
                    for (size_t tau = 0; tau < To; ++tau)
                        xn->grad[c * T + tau * s + j] += o->grad[(c * s + j) * To + tau];
        };
    }
    return Tensor<S>(out);
}

// [C, T] -> [C/s, T*s]; exact inverse of space_to_channel.
template <typename S>
Tensor<S> channel_to_space(const Tensor<S>& x, size_t s) {
    require(x.shape().size() == 2, "ShapeMismatch", "channel_to_space expects [C,T]");
    const size_t C = x.dim(0), T = x.dim(1);
    require(s > 0 && C % s == 0, "Indivisible", "channel axis not divisible by stride");
    const size_t Co = C / s, To = T * s;
    auto out = detail::make_out<S>({Co, To}, {x});
    for (size_t c = 0; c < Co; ++c)
        for (size_t tau = 0; tau < T; ++tau)
            for (size_t j = 0; j < s; ++j)
                out->val[c * To + tau * s + j] = x.val()[(c * s + j) * T + tau];
    if (out->needs_grad) {
        auto xn = x.node();
        Node<S>* o = out.get();
        out->backprop = [o, xn, Co, T, To, s] {
            xn->ensure_grad();
            for (size_t c = 0; c < Co; ++c)
                for (size_t tau = 0; tau < T; ++tau)
                    for (size_t j = 0; j < s; ++j)
                        xn->grad[(c * s + j) * T + tau] += o->grad[c * To + tau * s + j];
        };
    }
    return Tensor<S>(out);
}

// Average each consecutive group of g rows: [R, C] -> [R/g, C].
template <typename S>
Tensor<S> group_mean_rows(const Tensor<S>& x, size_t g) {
    require(x.shape().size() == 2, "ShapeMismatch", "group_mean_rows expects 2-D");
    const size_t R = x.dim(0), C = x.dim(1);
    require(g > 0 && R % g == 0, "Indivisible", "rows not divisible by group size");
    const size_t Ro = R / g;
    auto out = detail::make_out<S>({Ro, C}, {x});
    const S inv = S(1) / static_cast<S>(g);
    for (size_t r = 0; r < Ro; ++r)
        for (size_t c = 0; c < C; ++c) {
            S acc = 0;
            for (size_t k = 0; k < g; ++k) acc += x.val()[(r * g + k) * C + c];
            out->val[r * C + c] = acc * inv;
        }
    if (out->needs_grad) {
        auto xn = x.node();
        Node<S>* o = out.get();
        out->backprop = [o, xn, Ro, C, g, inv] {
            xn->ensure_grad();
            for (size_t r = 0; r < Ro; ++r)
                for (size_t c = 0; c < C; ++c) {
                    const S gr = o->grad[r * C + c] * inv;
                    for (size_t k = 0; k < g; ++k) xn->grad[(r * g + k) * C + c] += gr;
                }
        };
    }
    return Tensor<S>(out);
}

// Repeat each row f times consecutively: [R, C] -> [R*f, C].
template <typename S>
Tensor<S> tile_rows(const Tensor<S>& x, size_t f) {
    require(x.shape().size() == 2, "ShapeMismatch", "tile_rows expects 2-D");
    require(f > 0, "Indivisible", "tile factor must be positive");
    const size_t R = x.dim(0), C = x.dim(1);
    auto out = detail::make_out<S>({R * f, C}, {x});
    for (size_t r = 0; r < R; ++r)
        for (size_t k = 0; k < f; ++k)
            std::copy(x.val().begin() + r * C, x.val().begin() + (r + 1) * C,
                      out->val.begin() + (r * f + k) * C);
    if (out->needs_grad) {
        auto xn = x.node();
        Node<S>* o = out.get();
        out->backprop = [o, xn, R, C, f] {
            xn->ensure_grad();
            for (size_t r = 0; r < R; ++r)
                for (size_t k = 0; k < f; ++k)
                    for (size_t c = 0; c < C; ++c)
                        xn->grad[r * C + c] += o->grad[(r * f + k) * C + c];
        };
    }
    return Tensor<S>(out);
}

// Fold s time steps into channels, then average consecutive channel groups
// down to c_out. Entirely parameter free.
template <typename S>
Tensor<S> shortcut_down(const Tensor<S>& x, size_t s, size_t c_out) {
    const size_t C = x.dim(0);
    require(c_out > 0 && (C * s) % c_out == 0, "Indivisible",
            "channels*stride must be divisible by output channels");
    auto y = space_to_channel(x, s);
    return group_mean_rows(y, C * s / c_out);
}

// Unfold channels into time, then replicate channels up to c_out.
template <typename S>
Tensor<S> shortcut_up(const Tensor<S>& x, size_t s, size_t c_out) {
    const size_t C = x.dim(0);
    require(C % s == 0, "Indivisible", "channels not divisible by stride");
    require((c_out * s) % C == 0, "Indivisible",
            "replication factor c_out*s/C must be an integer");
    auto y = channel_to_space(x, s);
    return tile_rows(y, c_out * s / C);
}

// ---------------------------------------------------------------------------
// weight-normalized convolution wrappers
// ---------------------------------------------------------------------------

namespace detail {

// Effective weight g * v / ||v||, norms taken per row of the flattened
// direction tensor. A tiny floor inside the sqrt keeps the all-zero
// parameter state well defined (effective weight zero).
template <typename S>
Tensor<S> wn_weight(const Tensor<S>& v, const Tensor<S>& g, const Shape& full_shape) {
    const size_t rows = full_shape[0];
    const size_t cols = shape_numel(full_shape) / rows;
    auto flat = reshape(v, {rows, cols});
    auto norms = sqrt_t(affine(sum_axis1(square_t(flat)), S(1), S(1e-24)));
    auto scaled = bcast_mul_rows(flat, div(g, norms));
    return reshape(scaled, full_shape);
}

}  // namespace detail

template <typename S>
struct WnConv1d {
    Tensor<S> v, g, b;
    Shape wshape;  // [Co, Ci, K]
    size_t stride = 1, dilation = 1, pad_l = 0, pad_r = 0;

    static WnConv1d make(ParamStore<S>& ps, const std::string& name, size_t c_in, size_t c_out,
                         size_t k, size_t stride, size_t dilation, size_t pad_l, size_t pad_r,
                         double gain = 1.0) {
        WnConv1d m;
        m.wshape = {c_out, c_in, k};
        const double stdev = 1.0 / std::sqrt(double(c_in * k));
        m.v = ps.create(name + ".v", m.wshape, stdev);
        // gain initialized to `gain` times the direction norms so the initial
        // effective weight equals gain*v; gain 0 leaves the direction intact
        // while the layer starts as a no-op.
        std::vector<S> gains(c_out);
        for (size_t r = 0; r < c_out; ++r) {
            double acc = 0;
            for (size_t i = 0; i < c_in * k; ++i) {
                double vv = m.v.val()[r * c_in * k + i];
                acc += vv * vv;
            }
            gains[r] = static_cast<S>(std::sqrt(acc) * gain);
        }
        m.g = ps.create_from(name + ".g", {c_out}, std::move(gains));
        m.b = ps.create(name + ".b", {c_out}, 0.0);
        m.stride = stride;
        m.dilation = dilation;
        m.pad_l = pad_l;
        m.pad_r = pad_r;
        return m;
    }

    Tensor<S> operator()(const Tensor<S>& x) const {
        auto w = detail::wn_weight(v, g, wshape);
        return conv1d(x, w, b, stride, dilation, pad_l, pad_r);
    }
};

template <typename S>
struct WnConvT1d {
    Tensor<S> v, g, b;
    Shape wshape;  // [Ci, Co, K]
    size_t stride = 1, pad_l = 0, pad_r = 0;

    static WnConvT1d make(ParamStore<S>& ps, const std::string& name, size_t c_in, size_t c_out,
                          size_t k, size_t stride, size_t pad_l, size_t pad_r,
                          double gain = 1.0) {
        WnConvT1d m;
        m.wshape = {c_in, c_out, k};
        const double stdev = 1.0 / std::sqrt(double(c_in * k));
        m.v = ps.create(name + ".v", m.wshape, stdev);
        std::vector<S> gains(c_in);
        for (size_t r = 0; r < c_in; ++r) {
            double acc = 0;
            for (size_t i = 0; i < c_out * k; ++i) {
                double vv = m.v.val()[r * c_out * k + i];
                acc += vv * vv;
            }
            gains[r] = static_cast<S>(std::sqrt(acc) * gain);
        }
        m.g = ps.create_from(name + ".g", {c_in}, std::move(gains));
        m.b = ps.create(name + ".b", {c_out}, 0.0);
        m.stride = stride;
        m.pad_l = pad_l;
        m.pad_r = pad_r;
        return m;
    }

    Tensor<S> operator()(const Tensor<S>& x) const {
        auto w = detail::wn_weight(v, g, wshape);
        return conv1d_transpose(x, w, b, stride, pad_l, pad_r);
    }
};

// Snake with positivity enforced through alpha = exp(rho); rho is the
// learnable parameter, zero-initialized so alpha starts at 1.
template <typename S>
struct SnakeAct {
    Tensor<S> rho;

    static SnakeAct make(ParamStore<S>& ps, const std::string& name, size_t channels) {
        return SnakeAct{ps.create(name + ".rho", {channels}, 0.0)};
    }
    Tensor<S> operator()(const Tensor<S>& x) const { return snake(x, exp_t(rho)); }
};

// h + Conv1x1(snake(Conv_{k,d}(snake(h)))), shape preserving.
template <typename S>
struct ResidualUnit {
    SnakeAct<S> act1, act2;
    WnConv1d<S> conv_kd, conv_11;

    static ResidualUnit make(ParamStore<S>& ps, const std::string& name, size_t channels,
                             size_t k, size_t d) {
        ResidualUnit u;
        u.act1 = SnakeAct<S>::make(ps, name + ".act1", channels);
        u.act2 = SnakeAct<S>::make(ps, name + ".act2", channels);
        const size_t span = (k - 1) * d;
        u.conv_kd = WnConv1d<S>::make(ps, name + ".conv_kd", channels, channels, k, 1, d,
                                      span / 2, span - span / 2);
        // Zero gain makes the unit an identity map at init; the branch opens
        // up as the gains train away from zero.
        u.conv_11 = WnConv1d<S>::make(ps, name + ".conv_11", channels, channels, 1, 1, 1, 0, 0,
                                      0.0);
        return u;
    }

    Tensor<S> operator()(const Tensor<S>& h) const {
        return add(h, conv_11(act2(conv_kd(act1(h)))));
    }
};

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

struct VaeConfig {
    std::vector<size_t> strides{4, 4, 8, 16};
    std::vector<size_t> channels{4, 8, 16, 32, 64};  // C_1 .. C_{N+1}
    size_t latent_dim = 64;
    size_t kernel = 5;
    std::vector<size_t> dilations{1, 3};
    double sample_rate = 24000.0;

    size_t total_stride() const {
        size_t r = 1;
        for (size_t s : strides) r *= s;
        return r;
    }
    double frame_rate() const { return sample_rate / double(total_stride()); }
    size_t n_blocks() const { return strides.size(); }

    void validate() const {
        require(!strides.empty(), "ConfigError", "need at least one block");
        require(channels.size() == strides.size() + 1, "ConfigError",
                "channels must list C_1..C_{N+1}");
        require(latent_dim > 0, "ConfigError", "latent_dim must be positive");
        require(kernel % 2 == 1, "ConfigError", "residual kernel must be odd");
        require(!dilations.empty(), "ConfigError", "need at least one dilation");
        for (size_t i = 0; i + 1 < channels.size(); ++i)
            require(channels[i] < channels[i + 1], "ConfigError",
                    "encoder channels must be strictly increasing");
        for (size_t i = 0; i < strides.size(); ++i) {
            require((channels[i] * strides[i]) % channels[i + 1] == 0, "ConfigError",
                    "block " + std::to_string(i) + ": channels*stride not divisible by next width");
            require(channels[i + 1] % strides[i] == 0, "ConfigError",
                    "block " + std::to_string(i) + ": decoder shortcut needs channels divisible by stride");
        }
        require(channels.back() % latent_dim == 0, "ConfigError",
                "final width must be a multiple of latent_dim for the projection shortcut");
    }
};

// Right reflect pad up to a multiple of m (bounces at the ends as needed).
inline std::vector<double> pad_to_multiple(const std::vector<double>& x, size_t m) {
    require(!x.empty(), "SignalTooShort", "cannot pad an empty signal");
    const size_t rem = x.size() % m;
    if (rem == 0) return x;
    std::vector<double> out = x;
    const size_t need = m - rem;
    const long T = static_cast<long>(x.size());
    long t = T - 2;
    long step = -1;
    for (size_t i = 0; i < need; ++i) {
        if (T == 1) {
            out.push_back(x[0]);
            continue;
        }
        out.push_back(x[static_cast<size_t>(t)]);
        if (t == 0) step = 1;
        if (t == T - 1) step = -1;
        t += step;
    }
    return out;
}

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

template <typename S>
struct LatentPacket {
    Tensor<S> mu, logvar, z;
    std::vector<S> eps;  // the recorded noise draw
};

template <typename S>
class WavVae {
public:
    WavVae(const VaeConfig& cfg, ParamStore<S>& ps, const std::string& prefix = "vae")
        : cfg_(cfg) {
        cfg_.validate();
        const size_t N = cfg_.n_blocks();
        const size_t k = cfg_.kernel;

        enc_in_ = WnConv1d<S>::make(ps, prefix + ".enc.in", 1, cfg_.channels[0], k, 1, 1,
                                    (k - 1) / 2, (k - 1) / 2);
        for (size_t i = 0; i < N; ++i) {
            const std::string bp = prefix + ".enc.block" + std::to_string(i);
            std::vector<ResidualUnit<S>> units;
            for (size_t u = 0; u < cfg_.dilations.size(); ++u)
                units.push_back(ResidualUnit<S>::make(ps, bp + ".res" + std::to_string(u),
                                                      cfg_.channels[i], k, cfg_.dilations[u]));
            enc_res_.push_back(std::move(units));
            enc_act_.push_back(SnakeAct<S>::make(ps, bp + ".act", cfg_.channels[i]));
            const size_t s = cfg_.strides[i];
            enc_down_.push_back(WnConv1d<S>::make(ps, bp + ".down", cfg_.channels[i],
                                                  cfg_.channels[i + 1], 2 * s, s, 1,
                                                  (s + 1) / 2, s - (s + 1) / 2));
        }
        enc_out_act_ = SnakeAct<S>::make(ps, prefix + ".enc.out_act", cfg_.channels[N]);
        // Small gain keeps logvar near zero at init so sigma starts close to 1.
        enc_out_ = WnConv1d<S>::make(ps, prefix + ".enc.out", cfg_.channels[N],
                                     2 * cfg_.latent_dim, 1, 1, 1, 0, 0, 0.1);

        // The parameter-free shortcuts already carry the latent to the output at
        // full scale; damping the learned decoder path keeps the pre-tanh signal
        // out of the saturated region at init, where gradients vanish.
        dec_in_ = WnConv1d<S>::make(ps, prefix + ".dec.in", cfg_.latent_dim, cfg_.channels[N],
                                    1, 1, 1, 0, 0, 0.3);
        for (size_t i = N; i-- > 0;) {
            const std::string bp = prefix + ".dec.block" + std::to_string(i);
            const size_t s = cfg_.strides[i];
            dec_act_.push_back(SnakeAct<S>::make(ps, bp + ".act", cfg_.channels[i + 1]));
            const size_t pl = (s + 1) / 2;
            dec_up_.push_back(WnConvT1d<S>::make(ps, bp + ".up", cfg_.channels[i + 1],
                                                 cfg_.channels[i], 2 * s, s, pl, s - pl, 0.3));
            std::vector<ResidualUnit<S>> units;
            for (size_t u = 0; u < cfg_.dilations.size(); ++u)
                units.push_back(ResidualUnit<S>::make(ps, bp + ".res" + std::to_string(u),
                                                      cfg_.channels[i], k, cfg_.dilations[u]));
            dec_res_.push_back(std::move(units));
        }
        dec_out_act_ = SnakeAct<S>::make(ps, prefix + ".dec.out_act", cfg_.channels[0]);
        dec_out_ = WnConv1d<S>::make(ps, prefix + ".dec.out", cfg_.channels[0], 1, k, 1, 1,
                                     (k - 1) / 2, (k - 1) / 2, 0.3);
    }

    const VaeConfig& config() const { return cfg_; }

    // Deterministic half of encode: (mu, logvar) from a [1, T] input with T
    // divisible by the total stride.
    std::pair<Tensor<S>, Tensor<S>> encode_stats(const Tensor<S>& x) const {
        require(x.shape().size() == 2 && x.dim(0) == 1, "ShapeMismatch", "encoder wants [1,T]");
        require(x.dim(1) % cfg_.total_stride() == 0, "Indivisible",
                "input length must be a multiple of the total stride");
        auto h = add(enc_in_(x), shortcut_up(x, 1, cfg_.channels[0]));
        for (size_t i = 0; i < cfg_.n_blocks(); ++i) {
            auto inp = h;
            for (auto& u : enc_res_[i]) h = u(h);
            h = enc_down_[i](enc_act_[i](h));
            h = add(h, shortcut_down(inp, cfg_.strides[i], cfg_.channels[i + 1]));
        }
        auto stats = enc_out_(enc_out_act_(h));
        const size_t D = cfg_.latent_dim;
        auto mu = add(slice_rows(stats, 0, D), shortcut_down(h, 1, D));
        // Bounded log-variance keeps exp(logvar) representable in f32 no
        // matter how hot the encoder runs.
        auto logvar = clamp_t(slice_rows(stats, D, 2 * D), S(-30), S(20));
        return {mu, logvar};
    }

    LatentPacket<S> encode(const Tensor<S>& x, Rng& rng) const {
        auto [mu, logvar] = encode_stats(x);
        LatentPacket<S> p;
        p.mu = mu;
        p.logvar = logvar;
        p.eps.resize(mu.numel());
        for (auto& e : p.eps) e = static_cast<S>(rng.normal());
        auto eps_t = Tensor<S>::from(mu.shape(), p.eps);
        p.z = add(mu, mul(exp_t(scale(logvar, S(0.5))), eps_t));
        return p;
    }

    Tensor<S> decode_pretanh(const Tensor<S>& z) const {
        require(z.shape().size() == 2 && z.dim(0) == cfg_.latent_dim, "ShapeMismatch",
                "decoder wants [D, frames]");
        const size_t N = cfg_.n_blocks();
        auto h = add(dec_in_(z), shortcut_up(z, 1, cfg_.channels[N]));
        for (size_t j = 0; j < N; ++j) {
            const size_t i = N - 1 - j;  // mirror order
            auto inp = h;
            h = dec_up_[j](dec_act_[j](h));
            for (auto& u : dec_res_[j]) h = u(h);
            h = add(h, shortcut_up(inp, cfg_.strides[i], cfg_.channels[i]));
        }
        return add(dec_out_(dec_out_act_(h)), shortcut_down(h, 1, 1));
    }

    Tensor<S> decode(const Tensor<S>& z) const { return tanh_t(decode_pretanh(z)); }

private:
    VaeConfig cfg_;
    WnConv1d<S> enc_in_, enc_out_, dec_in_, dec_out_;
    std::vector<std::vector<ResidualUnit<S>>> enc_res_, dec_res_;
    std::vector<SnakeAct<S>> enc_act_, dec_act_;
    std::vector<WnConv1d<S>> enc_down_;
    std::vector<WnConvT1d<S>> dec_up_;
    SnakeAct<S> enc_out_act_, dec_out_act_;
};

// ---------------------------------------------------------------------------
// discriminator
// ---------------------------------------------------------------------------

struct DiscConfig {
    std::vector<StftConfig> scales{{512, 128, 512}, {1024, 256, 1024}, {2048, 512, 2048}};
    size_t width = 8;
    size_t layers = 3;
};

template <typename S>
struct DiscOutput {
    std::vector<Tensor<S>> logits;                 // one score map per scale
    std::vector<std::vector<Tensor<S>>> features;  // intermediate maps per scale
};

template <typename S>
class StftDiscriminator {
public:
    StftDiscriminator(const DiscConfig& cfg, ParamStore<S>& ps, const std::string& prefix = "disc")
        : cfg_(cfg) {
        for (size_t s = 0; s < cfg_.scales.size(); ++s) {
            cfg_.scales[s].validate();
            ScaleNet net;
            size_t c_in = 2;
            for (size_t l = 0; l < cfg_.layers; ++l) {
                net.convs.push_back(make_conv2d(
                    ps, prefix + ".s" + std::to_string(s) + ".conv" + std::to_string(l),
                    c_in, cfg_.width));
                c_in = cfg_.width;
            }
            net.head = make_conv2d(ps, prefix + ".s" + std::to_string(s) + ".head", c_in, 1);
            nets_.push_back(std::move(net));
        }
    }

    DiscOutput<S> operator()(const Tensor<S>& x) const {
        require(x.shape().size() == 1, "ShapeMismatch", "discriminator wants a flat waveform");
        DiscOutput<S> out;
        for (size_t s = 0; s < cfg_.scales.size(); ++s) {
            const auto& sc = cfg_.scales[s];
            auto spec = stft_packed(x, sc.fft_size, sc.hop, sc.win);
            std::vector<Tensor<S>> feats;
            auto h = spec;
            for (size_t l = 0; l < cfg_.layers; ++l) {
                h = leaky_relu_t(conv2d(h, nets_[s].convs[l].w, nets_[s].convs[l].b, 2, 2, 1, 1),
                                 S(0.2));
                feats.push_back(h);
            }
            auto logits = conv2d(h, nets_[s].head.w, nets_[s].head.b, 1, 1, 1, 1);
            out.logits.push_back(logits);
            out.features.push_back(std::move(feats));
        }
        return out;
    }

    const DiscConfig& config() const { return cfg_; }

private:
    struct Conv2dParams {
        Tensor<S> w, b;
    };
    struct ScaleNet {
        std::vector<Conv2dParams> convs;
        Conv2dParams head;
    };

    static Conv2dParams make_conv2d(ParamStore<S>& ps, const std::string& name, size_t c_in,
                                    size_t c_out) {
        Conv2dParams p;
        p.w = ps.create(name + ".w", {c_out, c_in, 3, 3}, 1.0 / std::sqrt(double(c_in * 9)));
        p.b = ps.create(name + ".b", {c_out}, 0.0);
        return p;
    }

    DiscConfig cfg_;
    std::vector<ScaleNet> nets_;
};

// ---------------------------------------------------------------------------
// training objectives
// ---------------------------------------------------------------------------

enum class TrainPhase { kWarmup, kAdversarial };

struct GenLossWeights {
    double spec = 1.0;
    double mel = 1.0;
    double time = 10.0;
    double kl = 0.01;
    double adv = 1.0;
    double fm = 2.0;
};

struct ReconLossConfig {
    std::vector<StftConfig> stft_resolutions{{512, 128, 512}, {1024, 256, 1024}, {2048, 512, 2048}};
    std::vector<MelScale> mel_scales{{{512, 128, 512}, 40},
                                     {{1024, 256, 1024}, 80},
                                     {{2048, 512, 2048}, 160}};
};

template <typename S>
struct GenLossResult {
    Tensor<S> total;
    std::map<std::string, double> terms;  // unweighted per-term values
};

// Weighted generator objective. The adversarial and feature-matching terms
// enter only in the adversarial phase; disc outputs may be omitted in warmup.
template <typename S>
GenLossResult<S> generator_loss(const Tensor<S>& x, const Tensor<S>& xhat,
                                const LatentPacket<S>& packet, const DiscOutput<S>* disc_fake,
                                const DiscOutput<S>* disc_real, const GenLossWeights& lw,
                                const ReconLossConfig& rc, double sample_rate, TrainPhase phase) {
    require(x.shape() == xhat.shape(), "LengthMismatch", "waveform pair lengths differ");
    GenLossResult<S> r;
    auto l_spec = multires_stft_loss(x, xhat, rc.stft_resolutions);
    auto l_mel = multiscale_mel_loss(x, xhat, rc.mel_scales, sample_rate);
    auto l_time = l1_time_loss(x, xhat);
    auto l_kl = kl_loss(packet.mu, packet.logvar);
    r.terms["spec"] = double(l_spec.item());
    r.terms["mel"] = double(l_mel.item());
    r.terms["time"] = double(l_time.item());
    r.terms["kl"] = double(l_kl.item());

    auto total = add(add(scale(l_spec, S(lw.spec)), scale(l_mel, S(lw.mel))),
                     add(scale(l_time, S(lw.time)), scale(l_kl, S(lw.kl))));

    if (phase == TrainPhase::kAdversarial) {
        require(disc_fake && disc_real, "ConfigError",
                "adversarial phase needs discriminator outputs");
        require(disc_fake->logits.size() == disc_real->logits.size(), "ScaleMismatch",
                "discriminator scale counts differ");
        const size_t n_scales = disc_fake->logits.size();
        Tensor<S> adv = Tensor<S>::zeros({1});
        Tensor<S> fm = Tensor<S>::zeros({1});
        size_t fm_terms = 0;
        for (size_t s = 0; s < n_scales; ++s) {
            adv = add(adv, mean_all(relu_t(affine(disc_fake->logits[s], S(-1), S(1)))));
            for (size_t l = 0; l < disc_fake->features[s].size(); ++l) {
                fm = add(fm, mean_all(abs_t(sub(disc_fake->features[s][l],
                                                disc_real->features[s][l].detach()))));
                ++fm_terms;
            }
        }
        adv = scale(adv, S(1.0 / double(n_scales)));
        if (fm_terms) fm = scale(fm, S(1.0 / double(fm_terms)));
        r.terms["adv"] = double(adv.item());
        r.terms["fm"] = double(fm.item());
        total = add(total, add(scale(adv, S(lw.adv)), scale(fm, S(lw.fm))));
    } else {
        r.terms["adv"] = 0.0;
        r.terms["fm"] = 0.0;
    }
    r.total = total;
    return r;
}

// Hinge objective for the discriminator, averaged over scales. The fake
// side must be detached by the caller (pass a forward over xhat.detach()).
template <typename S>
Tensor<S> discriminator_loss(const DiscOutput<S>& disc_real, const DiscOutput<S>& disc_fake) {
    require(disc_real.logits.size() == disc_fake.logits.size(), "ScaleMismatch",
            "discriminator scale counts differ");
    const size_t n = disc_real.logits.size();
    require(n > 0, "ScaleMismatch", "no discriminator scales");
    Tensor<S> total = Tensor<S>::zeros({1});
    for (size_t s = 0; s < n; ++s) {
        auto real_term = mean_all(relu_t(affine(disc_real.logits[s], S(-1), S(1))));
        auto fake_term = mean_all(relu_t(affine(disc_fake.logits[s], S(1), S(1))));
        total = add(total, add(real_term, fake_term));
    }
    return scale(total, S(1.0 / double(n)));
}

}  // namespace wavefm
