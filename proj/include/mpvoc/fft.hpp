#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace mpvoc::fft {

inline constexpr double kPi = 3.14159265358979323846;

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

namespace detail {

// Iterative radix-2 Cooley-Tukey, unscaled. sign = -1 forward, +1 inverse.
inline void radix2(std::vector<double>& re, std::vector<double>& im, double sign) {
    const std::size_t n = re.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) {
            std::swap(re[i], re[j]);
            std::swap(im[i], im[j]);
        }
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = sign * 2.0 * kPi / static_cast<double>(len);
        for (std::size_t i = 0; i < n; i += len) {
            for (std::size_t k = 0; k < len / 2; ++k) {
                const double wr = std::cos(ang * static_cast<double>(k));
                const double wi = std::sin(ang * static_cast<double>(k));
                const std::size_t a = i + k;
                const std::size_t b = i + k + len / 2;
                const double tr = re[b] * wr - im[b] * wi;
                const double ti = re[b] * wi + im[b] * wr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
    }
}

// O(n^2) fallback for non-power-of-two sizes.
inline void naive_dft(std::vector<double>& re, std::vector<double>& im, double sign) {
    const std::size_t n = re.size();
    std::vector<double> or_(n, 0.0), oi(n, 0.0);
    for (std::size_t f = 0; f < n; ++f) {
        double sr = 0.0, si = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            const double ang = sign * 2.0 * kPi * static_cast<double>(f) *
                               static_cast<double>(t) / static_cast<double>(n);
            const double c = std::cos(ang), s = std::sin(ang);
            sr += re[t] * c - im[t] * s;
            si += re[t] * s + im[t] * c;
        }
        or_[f] = sr;
        oi[f] = si;
    }
    re = std::move(or_);
    im = std::move(oi);
}

}  // namespace detail

// In-place complex transform, unscaled (inverse does NOT divide by n).
inline void transform(std::vector<double>& re, std::vector<double>& im, bool inverse) {
    if (re.size() != im.size()) throw std::invalid_argument("fft: re/im size mismatch");
    if (re.size() <= 1) return;
    const double sign = inverse ? 1.0 : -1.0;
    if (is_pow2(re.size()))
        detail::radix2(re, im, sign);
    else
        detail::naive_dft(re, im, sign);
}

inline std::size_t half_bins(std::size_t n) { return n / 2 + 1; }

// Real-input forward transform; keeps bins 0..n/2.
inline void rfft(const std::vector<double>& x, std::vector<double>& re,
                 std::vector<double>& im) {
    const std::size_t n = x.size();
    std::vector<double> cr(x), ci(n, 0.0);
    transform(cr, ci, false);
    const std::size_t f = half_bins(n);
    re.assign(cr.begin(), cr.begin() + static_cast<std::ptrdiff_t>(f));
    im.assign(ci.begin(), ci.begin() + static_cast<std::ptrdiff_t>(f));
}

// Inverse of rfft for a real signal of even or odd length n.
inline void irfft(const std::vector<double>& re, const std::vector<double>& im,
                  std::size_t n, std::vector<double>& x) {
    const std::size_t f = half_bins(n);
    if (re.size() != f || im.size() != f) throw std::invalid_argument("irfft: bad bin count");
    std::vector<double> cr(n, 0.0), ci(n, 0.0);
    for (std::size_t k = 0; k < f; ++k) {
        cr[k] = re[k];
        ci[k] = im[k];
    }
    for (std::size_t k = 1; k < f; ++k) {
        if (2 * k == n) continue;  // Nyquist has no mirror
        cr[n - k] = re[k];
        ci[n - k] = -im[k];
    }
    transform(cr, ci, true);
    x.resize(n);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t t = 0; t < n; ++t) x[t] = cr[t] * inv;
}

// Adjoint of the half-spectrum analysis map x -> (Re X_f, Im X_f), f in [0, n/2]:
// out[t] = sum_f gr[f]*cos(2 pi f t / n) - gi[f]*sin(2 pi f t / n).
inline void half_spectrum_adjoint(const std::vector<double>& gr, const std::vector<double>& gi,
                                  std::size_t n, std::vector<double>& out) {
    const std::size_t f = half_bins(n);
    if (gr.size() != f || gi.size() != f)
        throw std::invalid_argument("half_spectrum_adjoint: bad bin count");
    std::vector<double> cr(n, 0.0), ci(n, 0.0);
    for (std::size_t k = 0; k < f; ++k) {
        cr[k] = gr[k];
        ci[k] = gi[k];
    }
    transform(cr, ci, true);  // unscaled inverse, no hermitian mirror
    out.resize(n);
    for (std::size_t t = 0; t < n; ++t) out[t] = cr[t];
}

// Adjoint of irfft: maps a time-domain gradient to half-spectrum gradients.
inline void irfft_adjoint(const std::vector<double>& gx, std::vector<double>& gr,
                          std::vector<double>& gi) {
    const std::size_t n = gx.size();
    std::vector<double> cr(gx), ci(n, 0.0);
    transform(cr, ci, false);
    const std::size_t f = half_bins(n);
    gr.resize(f);
    gi.resize(f);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t k = 0; k < f; ++k) {
        const double cf = (k == 0 || 2 * k == n) ? 1.0 : 2.0;
        gr[k] = cf * inv * cr[k];
        gi[k] = cf * inv * ci[k];
    }
}

}  // namespace mpvoc::fft
