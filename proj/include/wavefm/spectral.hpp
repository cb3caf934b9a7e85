#pragma once

// STFT analysis/synthesis, mel filterbanks, and the reconstruction losses
// of the waveform autoencoder objective. The loss functions run on autodiff
// tensors; stft/istft also exist as plain double-precision signal ops for
// round-trip checks and evaluation.

#include <cmath>
#include <complex>
#include <vector>

#include "wavefm/common.hpp"
#include "wavefm/fft.hpp"
#include "wavefm/tensor.hpp"

namespace wavefm {

struct StftConfig {
    size_t fft_size = 1024;
    size_t hop = 256;
    size_t win = 1024;

    void validate() const {
        require(is_pow2(fft_size), "InvalidRange", "fft size must be a power of two");
        require(hop > 0 && hop <= win && win <= fft_size, "InvalidRange",
                "need 0 < hop <= win <= fft_size");
    }
    size_t bins() const { return fft_size / 2 + 1; }
    size_t frames_for(size_t T) const {
        const size_t padded = T + fft_size;  // fft_size/2 reflect pad on both sides
        return (padded - fft_size) / hop + 1;
    }
};

// Periodic Hann of length win, centered in an fft_size buffer.
inline std::vector<double> make_window(const StftConfig& cfg) {
    std::vector<double> w(cfg.fft_size, 0.0);
    const size_t off = (cfg.fft_size - cfg.win) / 2;
    for (size_t i = 0; i < cfg.win; ++i)
        w[off + i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * double(i) / double(cfg.win));
    return w;
}

struct Spectrogram {
    std::vector<std::complex<double>> bins;  // [n_bins, frames] row major
    size_t n_bins = 0;
    size_t frames = 0;
    StftConfig config;
    size_t signal_len = 0;

    std::complex<double>& at(size_t b, size_t f) { return bins[b * frames + f]; }
    const std::complex<double>& at(size_t b, size_t f) const { return bins[b * frames + f]; }
};

// Centered STFT: reflect pad by fft_size/2, frame m starts at m*hop in the
// padded signal. Framing matches the differentiable stft_packed op exactly.
inline Spectrogram stft(const std::vector<double>& x, const StftConfig& cfg) {
    cfg.validate();
    require(x.size() >= cfg.win, "SignalTooShort",
            "signal length " + std::to_string(x.size()) + " < window " + std::to_string(cfg.win));
    const size_t T = x.size();
    const size_t pad = cfg.fft_size / 2;
    auto reflect = [T](long t) -> size_t {
        if (t < 0) t = -t;
        if (t >= long(T)) t = 2 * long(T) - 2 - t;
        return size_t(t);
    };
    auto window = make_window(cfg);
    Spectrogram s;
    s.config = cfg;
    s.signal_len = T;
    s.n_bins = cfg.bins();
    s.frames = cfg.frames_for(T);
    s.bins.resize(s.n_bins * s.frames);
    std::vector<double> frame(cfg.fft_size);
    for (size_t m = 0; m < s.frames; ++m) {
        for (size_t i = 0; i < cfg.fft_size; ++i)
            frame[i] = x[reflect(long(m * cfg.hop + i) - long(pad))] * window[i];
        auto spec = rfft(frame);
        for (size_t b = 0; b < s.n_bins; ++b) s.at(b, m) = spec[b];
    }
    return s;
}

// Window-square normalized overlap-add. Exact inverse of stft wherever the
// squared-window overlap is nonzero, which COLA-suitable hops guarantee
// across the whole unpadded signal.
inline std::vector<double> istft(const Spectrogram& s) {
    const StftConfig& cfg = s.config;
    cfg.validate();
    require(cfg.hop * 2 <= cfg.win, "NonColaWindow",
            "hop must be at most half the window for overlap-add coverage");
    const size_t pad = cfg.fft_size / 2;
    const size_t Tp = s.signal_len + 2 * pad;
    auto window = make_window(cfg);
    std::vector<double> acc(Tp, 0.0), wsum(Tp, 0.0);
    std::vector<std::complex<double>> half(s.n_bins);
    for (size_t m = 0; m < s.frames; ++m) {
        for (size_t b = 0; b < s.n_bins; ++b) half[b] = s.at(b, m);
        auto frame = irfft(half, cfg.fft_size);
        const size_t start = m * cfg.hop;
        for (size_t i = 0; i < cfg.fft_size && start + i < Tp; ++i) {
            acc[start + i] += frame[i] * window[i];
            wsum[start + i] += window[i] * window[i];
        }
    }
    std::vector<double> out(s.signal_len);
    for (size_t t = 0; t < s.signal_len; ++t) {
        const double d = wsum[pad + t];
        require(d > 1e-10, "NonColaWindow", "window overlap vanishes inside the signal");
        out[t] = acc[pad + t] / d;
    }
    return out;
}

// ---------------------------------------------------------------------------
// mel
// ---------------------------------------------------------------------------

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// Triangular filters equally spaced on the mel scale, evaluated at bin
// centers. Rows that would come out empty on a coarse grid fall back to
// their nearest bin so every filter passes some energy.
inline std::vector<double> mel_filterbank(size_t n_mels, double sample_rate, size_t fft_size,
                                          double f_min, double f_max) {
    require(n_mels > 0, "InvalidRange", "need at least one mel band");
    require(f_min >= 0 && f_min < f_max && f_max <= sample_rate / 2, "InvalidRange",
            "need 0 <= f_min < f_max <= nyquist");
    const size_t bins = fft_size / 2 + 1;
    const double m_lo = hz_to_mel(f_min), m_hi = hz_to_mel(f_max);
    std::vector<double> edges(n_mels + 2);
    for (size_t i = 0; i < edges.size(); ++i)
        edges[i] = mel_to_hz(m_lo + (m_hi - m_lo) * double(i) / double(n_mels + 1));

    std::vector<double> fb(n_mels * bins, 0.0);
    for (size_t m = 0; m < n_mels; ++m) {
        const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
        bool any = false;
        for (size_t b = 0; b < bins; ++b) {
            const double f = double(b) * sample_rate / double(fft_size);
            double v = 0.0;
            if (f > lo && f < mid)
                v = (f - lo) / (mid - lo);
            else if (f >= mid && f < hi)
                v = (hi - f) / (hi - mid);
            if (v > 0) any = true;
            fb[m * bins + b] = v;
        }
        if (!any) {
            size_t nearest = static_cast<size_t>(std::llround(mid * fft_size / sample_rate));
            nearest = std::min(nearest, bins - 1);
            fb[m * bins + nearest] = 1.0;
        }
    }
    return fb;
}

// ---------------------------------------------------------------------------
// losses (autodiff)
// ---------------------------------------------------------------------------

// Floor for log-magnitude terms. Sits above the corpus noise floor (per-bin
// magnitude ~0.03-0.07) so the sparse tonal content dominates the loss;
// with a much smaller floor, reproducing the broadband noise in the many
// near-empty bins outweighs placing the tone and training collapses there.
inline constexpr double kLogEps = 5e-2;

namespace detail {

template <typename S>
Tensor<S> frob_norm(const Tensor<S>& m) {
    return sqrt_t(sum_all(square_t(m)));
}

}  // namespace detail

// Per-resolution pieces of the multi-resolution spectral loss, exposed so
// tests can check the norm algebra directly.
template <typename S>
Tensor<S> spectral_convergence(const Tensor<S>& mag_ref, const Tensor<S>& mag_est) {
    auto diff = detail::frob_norm(sub(mag_ref, mag_est));
    return div(diff, detail::frob_norm(mag_ref));
}

template <typename S>
Tensor<S> log_mag_l1(const Tensor<S>& mag_ref, const Tensor<S>& mag_est) {
    auto lr = log_t(affine(mag_ref, S(1), S(kLogEps)));
    auto le = log_t(affine(mag_est, S(1), S(kLogEps)));
    return mean_all(abs_t(sub(lr, le)));
}

template <typename S>
Tensor<S> stft_magnitude(const Tensor<S>& x, const StftConfig& cfg) {
    cfg.validate();
    return complex_mag(stft_packed(x, cfg.fft_size, cfg.hop, cfg.win));
}

// Mean over resolutions of (spectral convergence + log-magnitude L1).
template <typename S>
Tensor<S> multires_stft_loss(const Tensor<S>& x, const Tensor<S>& xhat,
                             const std::vector<StftConfig>& cfgs) {
    require(x.shape() == xhat.shape() && x.shape().size() == 1, "LengthMismatch",
            "waveform tensors must be flat and equal length");
    require(!cfgs.empty(), "InvalidRange", "need at least one resolution");
    Tensor<S> total = Tensor<S>::zeros({1});
    for (const auto& cfg : cfgs) {
        auto mr = stft_magnitude(x, cfg);
        auto me = stft_magnitude(xhat, cfg);
        total = add(total, add(spectral_convergence(mr, me), log_mag_l1(mr, me)));
    }
    return scale(total, static_cast<S>(1.0 / double(cfgs.size())));
}

struct MelScale {
    StftConfig stft;
    size_t n_mels = 80;
    double f_min = 0.0;
    double f_max = 0.0;  // 0 means nyquist
};

// Mean over scales of L1 between log(mel_fb . |S| + eps).
template <typename S>
Tensor<S> multiscale_mel_loss(const Tensor<S>& x, const Tensor<S>& xhat,
                              const std::vector<MelScale>& scales, double sample_rate) {
    require(x.shape() == xhat.shape() && x.shape().size() == 1, "LengthMismatch",
            "waveform tensors must be flat and equal length");
    require(!scales.empty(), "InvalidRange", "need at least one scale");
    Tensor<S> total = Tensor<S>::zeros({1});
    for (const auto& sc : scales) {
        const double fmax = sc.f_max > 0 ? sc.f_max : sample_rate / 2;
        auto fbd = mel_filterbank(sc.n_mels, sample_rate, sc.stft.fft_size, sc.f_min, fmax);
        std::vector<S> fbs(fbd.begin(), fbd.end());
        auto fb = Tensor<S>::from({sc.n_mels, sc.stft.bins()}, std::move(fbs));
        auto mr = matmul(fb, stft_magnitude(x, sc.stft));
        auto me = matmul(fb, stft_magnitude(xhat, sc.stft));
        auto lr = log_t(affine(mr, S(1), S(kLogEps)));
        auto le = log_t(affine(me, S(1), S(kLogEps)));
        total = add(total, mean_all(abs_t(sub(lr, le))));
    }
    return scale(total, static_cast<S>(1.0 / double(scales.size())));
}

template <typename S>
Tensor<S> l1_time_loss(const Tensor<S>& x, const Tensor<S>& xhat) {
    require(x.shape() == xhat.shape(), "LengthMismatch", "waveforms must be equal length");
    return mean_all(abs_t(sub(x, xhat)));
}

// mean(-0.5 (1 + logvar - mu^2 - exp(logvar))), the divergence from a unit
// Gaussian averaged over elements.
template <typename S>
Tensor<S> kl_loss(const Tensor<S>& mu, const Tensor<S>& logvar) {
    require(mu.shape() == logvar.shape(), "ShapeMismatch", "mu/logvar shapes differ");
    require(all_finite(mu.val()) && all_finite(logvar.val()), "NonFinite",
            "kl_loss inputs must be finite");
    auto inner = sub(sub(affine(logvar, S(1), S(1)), square_t(mu)), exp_t(logvar));
    return scale(mean_all(inner), S(-0.5));
}

// Non-autodiff log-mel frames for evaluation and auxiliary targets:
// returns [n_mels, frames] of log(mel . |S| + eps).
inline std::vector<double> log_mel_frames(const std::vector<double>& x, const StftConfig& cfg,
                                          size_t n_mels, double sample_rate, size_t* out_frames) {
    auto s = stft(x, cfg);
    auto fb = mel_filterbank(n_mels, sample_rate, cfg.fft_size, 0.0, sample_rate / 2);
    std::vector<double> out(n_mels * s.frames, 0.0);
    for (size_t m = 0; m < n_mels; ++m)
        for (size_t f = 0; f < s.frames; ++f) {
            double acc = 0;
            for (size_t b = 0; b < s.n_bins; ++b)
                acc += fb[m * s.n_bins + b] * std::abs(s.at(b, f));
            out[m * s.frames + f] = std::log(acc + kLogEps);
        }
    if (out_frames) *out_frames = s.frames;
    return out;
}

}  // namespace wavefm
