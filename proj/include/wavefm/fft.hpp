#pragma once

#include <complex>
#include <vector>

#include "wavefm/common.hpp"

namespace wavefm {

// In-place iterative radix-2 Cooley-Tukey. n must be a power of two.
template <typename S>
void fft_inplace(std::vector<std::complex<S>>& a, bool inverse = false) {
    const size_t n = a.size();
    require(is_pow2(n), "InvalidRange", "fft size must be a power of two, got " + std::to_string(n));
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 2.0 : -2.0) * M_PI / static_cast<double>(len);
        const std::complex<S> wlen(static_cast<S>(std::cos(ang)), static_cast<S>(std::sin(ang)));
        for (size_t i = 0; i < n; i += len) {
            std::complex<S> w(1, 0);
            for (size_t k = 0; k < len / 2; ++k) {
                std::complex<S> u = a[i + k];
                std::complex<S> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
    // No 1/n scaling on the inverse path; callers normalize where needed.
}

// DFT of a real frame; returns the n/2+1 non-redundant bins.
template <typename S>
std::vector<std::complex<S>> rfft(const std::vector<S>& x) {
    const size_t n = x.size();
    std::vector<std::complex<S>> buf(n);
    for (size_t i = 0; i < n; ++i) buf[i] = std::complex<S>(x[i], 0);
    fft_inplace(buf, false);
    buf.resize(n / 2 + 1);
    return buf;
}

// Adjoint of rfft, treating the n/2+1 complex bins as independent real-pair
// outputs: grad_x[t] = sum_k Re(g[k] * exp(+2*pi*i*k*t/n)).
template <typename S>
std::vector<S> rfft_adjoint(const std::vector<std::complex<S>>& g, size_t n) {
    std::vector<std::complex<S>> buf(n, std::complex<S>(0, 0));
    for (size_t k = 0; k < g.size() && k < n / 2 + 1; ++k) buf[k] = g[k];
    fft_inplace(buf, true);
    std::vector<S> out(n);
    for (size_t t = 0; t < n; ++t) out[t] = buf[t].real();
    return out;
}

// Full inverse DFT of a half spectrum assuming conjugate symmetry of a
// real time-domain frame. Returns the length-n real frame.
template <typename S>
std::vector<S> irfft(const std::vector<std::complex<S>>& half, size_t n) {
    std::vector<std::complex<S>> buf(n);
    for (size_t k = 0; k <= n / 2; ++k) buf[k] = half[k];
    for (size_t k = n / 2 + 1; k < n; ++k) buf[k] = std::conj(half[n - k]);
    fft_inplace(buf, true);
    std::vector<S> out(n);
    const S inv_n = static_cast<S>(1.0 / static_cast<double>(n));
    for (size_t t = 0; t < n; ++t) out[t] = buf[t].real() * inv_n;
    return out;
}

}  // namespace wavefm
