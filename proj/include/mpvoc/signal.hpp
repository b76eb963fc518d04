#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpvoc/fft.hpp"
#include "mpvoc/matrix.hpp"

namespace mpvoc {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

struct Waveform {
    std::vector<double> samples;
    int sample_rate = 16000;

    void validate() const {
        if (samples.empty()) throw std::invalid_argument("Waveform: empty");
        if (sample_rate <= 0) throw std::invalid_argument("Waveform: sample_rate must be > 0");
        for (double v : samples)
            if (!std::isfinite(v)) throw std::invalid_argument("Waveform: non-finite sample");
    }
};

enum class WindowKind { hann, rect };

struct StftConfig {
    int64_t n_fft = 1024;
    int64_t hop = 256;
    WindowKind window = WindowKind::hann;
    bool center = true;

    void validate() const {
        if (n_fft < 2) throw std::invalid_argument("StftConfig: n_fft must be >= 2");
        if (hop <= 0 || hop > n_fft)
            throw std::invalid_argument("StftConfig: need 0 < hop <= n_fft");
    }
    int64_t bins() const { return n_fft / 2 + 1; }
};

struct ComplexSpectrogram {
    Matrix real;
    Matrix imag;
    StftConfig config;

    void validate() const {
        config.validate();
        if (!real.same_shape(imag))
            throw std::invalid_argument("ComplexSpectrogram: real/imag shape mismatch");
        if (real.rows != config.bins())
            throw std::invalid_argument("ComplexSpectrogram: row count != n_fft/2 + 1");
    }
};

struct MagPhaseSpectrogram {
    Matrix magnitude;
    Matrix phase;
    StftConfig config;
};

// Periodic window of length n_fft.
inline std::vector<double> make_window(const StftConfig& cfg) {
    std::vector<double> w(static_cast<std::size_t>(cfg.n_fft), 1.0);
    if (cfg.window == WindowKind::hann) {
        for (int64_t n = 0; n < cfg.n_fft; ++n)
            w[static_cast<std::size_t>(n)] =
                0.5 - 0.5 * std::cos(kTwoPi * static_cast<double>(n) /
                                     static_cast<double>(cfg.n_fft));
    }
    return w;
}

// Wraps a finite angle into (-pi, pi].
inline double wrap_phase(double x) {
    if (!std::isfinite(x)) throw std::invalid_argument("wrap_phase: non-finite input");
    double r = x - kTwoPi * std::round(x / kTwoPi);
    if (r <= -kPi) r += kTwoPi;
    return r;
}

namespace signal_detail {

// Reflection padding source index (librosa-style, no edge duplication).
inline int64_t reflect_index(int64_t i, int64_t len) {
    if (len == 1) return 0;
    const int64_t period = 2 * (len - 1);
    int64_t k = i % period;
    if (k < 0) k += period;
    return k < len ? k : period - k;
}

inline int64_t num_frames(int64_t length, const StftConfig& cfg) {
    if (cfg.center) return 1 + length / cfg.hop;
    if (length < cfg.n_fft)
        throw std::invalid_argument("stft: signal shorter than one frame with center=false");
    return 1 + (length - cfg.n_fft) / cfg.hop;
}

inline int64_t pad_amount(const StftConfig& cfg) { return cfg.center ? cfg.n_fft / 2 : 0; }

// Forward short-time transform on raw samples. Fills F x T real/imag grids.
inline void stft_core(const double* x, int64_t length, const StftConfig& cfg, Matrix& real,
                      Matrix& imag) {
    const int64_t pad = pad_amount(cfg);
    if (cfg.center && length < 2 && pad > 0)
        throw std::invalid_argument("stft: signal too short for reflect padding");
    const int64_t frames = num_frames(length, cfg);
    const int64_t f_bins = cfg.bins();
    const std::vector<double> win = make_window(cfg);
    real = Matrix(f_bins, frames);
    imag = Matrix(f_bins, frames);
    std::vector<double> seg(static_cast<std::size_t>(cfg.n_fft));
    std::vector<double> re, im;
    for (int64_t t = 0; t < frames; ++t) {
        const int64_t start = t * cfg.hop - pad;
        for (int64_t n = 0; n < cfg.n_fft; ++n) {
            const int64_t src = cfg.center ? reflect_index(start + n, length) : start + n;
            seg[static_cast<std::size_t>(n)] =
                x[src] * win[static_cast<std::size_t>(n)];
        }
        fft::rfft(seg, re, im);
        for (int64_t f = 0; f < f_bins; ++f) {
            real(f, t) = re[static_cast<std::size_t>(f)];
            imag(f, t) = im[static_cast<std::size_t>(f)];
        }
    }
}

// Adjoint of stft_core as a linear map from samples to (real, imag).
inline void stft_adjoint_core(const Matrix& g_real, const Matrix& g_imag, int64_t length,
                              const StftConfig& cfg, std::vector<double>& g_x) {
    const int64_t pad = pad_amount(cfg);
    const int64_t frames = g_real.cols;
    const int64_t f_bins = cfg.bins();
    const std::vector<double> win = make_window(cfg);
    g_x.assign(static_cast<std::size_t>(length), 0.0);
    std::vector<double> gr(static_cast<std::size_t>(f_bins)), gi(static_cast<std::size_t>(f_bins));
    std::vector<double> v;
    for (int64_t t = 0; t < frames; ++t) {
        for (int64_t f = 0; f < f_bins; ++f) {
            gr[static_cast<std::size_t>(f)] = g_real(f, t);
            gi[static_cast<std::size_t>(f)] = g_imag(f, t);
        }
        fft::half_spectrum_adjoint(gr, gi, static_cast<std::size_t>(cfg.n_fft), v);
        const int64_t start = t * cfg.hop - pad;
        for (int64_t n = 0; n < cfg.n_fft; ++n) {
            const int64_t j = start + n;
            const int64_t src = cfg.center ? reflect_index(j, length) : j;
            g_x[static_cast<std::size_t>(src)] +=
                win[static_cast<std::size_t>(n)] * v[static_cast<std::size_t>(n)];
        }
    }
}

constexpr double kWsumTiny = 1e-10;

inline std::vector<double> window_sq_overlap(const StftConfig& cfg, int64_t frames) {
    const std::vector<double> win = make_window(cfg);
    const int64_t full = cfg.n_fft + (frames - 1) * cfg.hop;
    std::vector<double> wsum(static_cast<std::size_t>(full), 0.0);
    for (int64_t t = 0; t < frames; ++t)
        for (int64_t n = 0; n < cfg.n_fft; ++n)
            wsum[static_cast<std::size_t>(t * cfg.hop + n)] +=
                win[static_cast<std::size_t>(n)] * win[static_cast<std::size_t>(n)];
    return wsum;
}

// Least-squares overlap-add inversion. out_len chooses the cropped length.
inline void istft_core(const Matrix& real, const Matrix& imag, const StftConfig& cfg,
                       std::optional<int64_t> length, std::vector<double>& out) {
    const int64_t frames = real.cols;
    const int64_t f_bins = cfg.bins();
    if (frames < 1) throw std::invalid_argument("istft: empty spectrogram");
    const std::vector<double> win = make_window(cfg);
    const int64_t full = cfg.n_fft + (frames - 1) * cfg.hop;
    std::vector<double> acc(static_cast<std::size_t>(full), 0.0);
    std::vector<double> re(static_cast<std::size_t>(f_bins)), im(static_cast<std::size_t>(f_bins));
    std::vector<double> seg;
    for (int64_t t = 0; t < frames; ++t) {
        for (int64_t f = 0; f < f_bins; ++f) {
            re[static_cast<std::size_t>(f)] = real(f, t);
            im[static_cast<std::size_t>(f)] = imag(f, t);
        }
        fft::irfft(re, im, static_cast<std::size_t>(cfg.n_fft), seg);
        for (int64_t n = 0; n < cfg.n_fft; ++n)
            acc[static_cast<std::size_t>(t * cfg.hop + n)] +=
                win[static_cast<std::size_t>(n)] * seg[static_cast<std::size_t>(n)];
    }
    const std::vector<double> wsum = window_sq_overlap(cfg, frames);
    for (int64_t s = cfg.n_fft; s < full - cfg.n_fft; ++s)
        if (wsum[static_cast<std::size_t>(s)] <= kWsumTiny)
            throw std::runtime_error("istft: degenerate overlap, window normalization vanishes");
    for (int64_t s = 0; s < full; ++s)
        acc[static_cast<std::size_t>(s)] = wsum[static_cast<std::size_t>(s)] > kWsumTiny
                                               ? acc[static_cast<std::size_t>(s)] /
                                                     wsum[static_cast<std::size_t>(s)]
                                               : 0.0;
    const int64_t start = cfg.center ? cfg.n_fft / 2 : 0;
    const int64_t dflt = cfg.center ? (frames - 1) * cfg.hop : full;
    const int64_t out_len = length.value_or(dflt);
    if (out_len < 1 || start + out_len > full)
        throw std::invalid_argument("istft: requested length exceeds synthesized range");
    out.assign(acc.begin() + static_cast<std::ptrdiff_t>(start),
               acc.begin() + static_cast<std::ptrdiff_t>(start + out_len));
}

// Adjoint of istft_core as a linear map from (real, imag) to samples.
inline void istft_adjoint_core(const std::vector<double>& g_out, int64_t frames,
                               const StftConfig& cfg, std::optional<int64_t> /*length*/,
                               Matrix& g_real, Matrix& g_imag) {
    const int64_t f_bins = cfg.bins();
    const std::vector<double> win = make_window(cfg);
    const int64_t full = cfg.n_fft + (frames - 1) * cfg.hop;
    const std::vector<double> wsum = window_sq_overlap(cfg, frames);
    const int64_t start = cfg.center ? cfg.n_fft / 2 : 0;
    std::vector<double> g_acc(static_cast<std::size_t>(full), 0.0);
    for (std::size_t s = 0; s < g_out.size(); ++s) {
        const std::size_t j = static_cast<std::size_t>(start) + s;
        g_acc[j] = wsum[j] > kWsumTiny ? g_out[s] / wsum[j] : 0.0;
    }
    g_real = Matrix(f_bins, frames);
    g_imag = Matrix(f_bins, frames);
    std::vector<double> gu(static_cast<std::size_t>(cfg.n_fft));
    std::vector<double> gr, gi;
    for (int64_t t = 0; t < frames; ++t) {
        for (int64_t n = 0; n < cfg.n_fft; ++n)
            gu[static_cast<std::size_t>(n)] = win[static_cast<std::size_t>(n)] *
                                              g_acc[static_cast<std::size_t>(t * cfg.hop + n)];
        fft::irfft_adjoint(gu, gr, gi);
        for (int64_t f = 0; f < f_bins; ++f) {
            g_real(f, t) = gr[static_cast<std::size_t>(f)];
            g_imag(f, t) = gi[static_cast<std::size_t>(f)];
        }
    }
}

}  // namespace signal_detail

inline ComplexSpectrogram stft(const Waveform& wave, const StftConfig& cfg) {
    wave.validate();
    cfg.validate();
    ComplexSpectrogram spec;
    spec.config = cfg;
    signal_detail::stft_core(wave.samples.data(), static_cast<int64_t>(wave.samples.size()),
                             cfg, spec.real, spec.imag);
    return spec;
}

// Least-squares overlap-add inversion. When `length` is absent the output covers
// (T-1)*hop samples with center padding, or n_fft + (T-1)*hop without it.
inline Waveform istft(const ComplexSpectrogram& spec, int sample_rate = 16000,
                      std::optional<int64_t> length = std::nullopt) {
    spec.validate();
    Waveform w;
    w.sample_rate = sample_rate;
    signal_detail::istft_core(spec.real, spec.imag, spec.config, length, w.samples);
    return w;
}

// magnitude = sqrt(R^2 + I^2); phase = atan2(I, R) in (-pi, pi], 0 where magnitude is 0.
inline MagPhaseSpectrogram polar_split(const ComplexSpectrogram& spec) {
    spec.validate();
    MagPhaseSpectrogram mp;
    mp.config = spec.config;
    mp.magnitude = Matrix(spec.real.rows, spec.real.cols);
    mp.phase = Matrix(spec.real.rows, spec.real.cols);
    for (std::size_t i = 0; i < spec.real.a.size(); ++i) {
        const double r = spec.real.a[i], im = spec.imag.a[i];
        const double m = std::sqrt(r * r + im * im);
        mp.magnitude.a[i] = m;
        double ph = m == 0.0 ? 0.0 : std::atan2(im, r);
        if (ph <= -kPi) ph = kPi;
        mp.phase.a[i] = ph;
    }
    return mp;
}

inline ComplexSpectrogram polar_join(const MagPhaseSpectrogram& mp) {
    if (!mp.magnitude.same_shape(mp.phase))
        throw std::invalid_argument("polar_join: magnitude/phase shape mismatch");
    ComplexSpectrogram spec;
    spec.config = mp.config;
    spec.real = Matrix(mp.magnitude.rows, mp.magnitude.cols);
    spec.imag = Matrix(mp.magnitude.rows, mp.magnitude.cols);
    for (std::size_t i = 0; i < mp.magnitude.a.size(); ++i) {
        spec.real.a[i] = mp.magnitude.a[i] * std::cos(mp.phase.a[i]);
        spec.imag.a[i] = mp.magnitude.a[i] * std::sin(mp.phase.a[i]);
    }
    return spec;
}

}  // namespace mpvoc
