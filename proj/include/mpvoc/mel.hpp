#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpvoc/matrix.hpp"

namespace mpvoc {

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

struct MelFilterbank {
    Matrix weights;  // n_mels x bins, nonnegative triangular rows
    int sample_rate = 16000;
    double f_min = 0.0;
    double f_max = 8000.0;
    int64_t n_fft = 1024;

    int64_t n_mels() const { return weights.rows; }
    int64_t bins() const { return weights.cols; }
};

struct PriorSpectrogram {
    Matrix values;  // bins x frames
    int64_t source_mel_bins = 0;
};

// Triangular filters with centers uniformly spaced on the mel scale.
// area_normalize divides each row by its triangle bandwidth (off by default).
inline MelFilterbank build_mel_filterbank(int64_t n_fft, int64_t n_mels, int sample_rate,
                                          double f_min, double f_max,
                                          bool area_normalize = false) {
    if (sample_rate <= 0) throw std::invalid_argument("build_mel_filterbank: bad sample rate");
    if (!(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0))
        throw std::invalid_argument(
            "build_mel_filterbank: need 0 <= f_min < f_max <= sample_rate/2");
    const int64_t bins = n_fft / 2 + 1;
    if (n_mels < 2) throw std::invalid_argument("build_mel_filterbank: n_mels must be >= 2");
    if (n_mels >= bins)
        throw std::invalid_argument("build_mel_filterbank: n_mels must be < n_fft/2 + 1");

    const double mel_lo = hz_to_mel(f_min);
    const double mel_hi = hz_to_mel(f_max);
    std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
    for (std::size_t i = 0; i < edges.size(); ++i)
        edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                          static_cast<double>(n_mels + 1));

    MelFilterbank fb;
    fb.sample_rate = sample_rate;
    fb.f_min = f_min;
    fb.f_max = f_max;
    fb.n_fft = n_fft;
    fb.weights = Matrix(n_mels, bins);
    const double hz_per_bin = static_cast<double>(sample_rate) / static_cast<double>(n_fft);
    for (int64_t m = 0; m < n_mels; ++m) {
        const double lo = edges[static_cast<std::size_t>(m)];
        const double center = edges[static_cast<std::size_t>(m) + 1];
        const double hi = edges[static_cast<std::size_t>(m) + 2];
        bool any = false;
        for (int64_t k = 0; k < bins; ++k) {
            const double f = hz_per_bin * static_cast<double>(k);
            double w = 0.0;
            if (f > lo && f < hi)
                w = f <= center ? (f - lo) / (center - lo) : (hi - f) / (hi - center);
            if (area_normalize) w *= 2.0 / (hi - lo);
            fb.weights(m, k) = w;
            any = any || w > 0.0;
        }
        if (!any)
            throw std::invalid_argument(
                "build_mel_filterbank: mel bin " + std::to_string(m) +
                " has no supporting FFT bin; too many mel bins for this resolution");
    }
    return fb;
}

// S = W_mel * mag, one matrix product across all frames.
inline Matrix mel_spectrogram(const Matrix& mag, const MelFilterbank& fb) {
    if (mag.rows != fb.bins())
        throw std::invalid_argument("mel_spectrogram: magnitude has " + std::to_string(mag.rows) +
                                    " rows, filterbank expects " + std::to_string(fb.bins()));
    return matmul(fb.weights, mag);
}

struct FilterbankPinv {
    Matrix pinv;  // bins x n_mels
    int64_t rank = 0;
    bool rank_deficient = false;
};

// Moore-Penrose pseudo-inverse of the filterbank, SVD with rtol = 1e-10 cutoff.
inline FilterbankPinv pseudo_inverse(const MelFilterbank& fb, double rtol = 1e-10) {
    FilterbankPinv out;
    out.pinv = pseudo_inverse(fb.weights, rtol, &out.rank);
    out.rank_deficient = out.rank < fb.n_mels();
    return out;
}

// S_prior = W_mel^+ * S, optionally clamped to >= 0 (default on).
inline PriorSpectrogram project_prior(const Matrix& mel, const Matrix& pinv,
                                      bool clamp_nonneg = true) {
    if (pinv.cols != mel.rows)
        throw std::invalid_argument("project_prior: pseudo-inverse has " +
                                    std::to_string(pinv.cols) + " columns, mel has " +
                                    std::to_string(mel.rows) + " rows");
    PriorSpectrogram prior;
    prior.source_mel_bins = mel.rows;
    prior.values = matmul(pinv, mel);
    if (clamp_nonneg)
        for (double& v : prior.values.a)
            if (v < 0.0) v = 0.0;
    return prior;
}

inline constexpr double kLogFloor = 1e-5;

// Log compression applied at the model-input boundary: log(x + 1e-5).
inline Matrix log_compress(const Matrix& x, double floor = kLogFloor) {
    Matrix out(x.rows, x.cols);
    for (std::size_t i = 0; i < x.a.size(); ++i) out.a[i] = std::log(x.a[i] + floor);
    return out;
}

// Plain-text export: header "F_m F sample_rate f_min f_max n_fft", then the
// row-major weights with one row per line, space separated, %.17g.
inline void save_filterbank_text(const std::string& path, const MelFilterbank& fb) {
    std::ofstream fs(path);
    if (!fs) throw std::runtime_error("save_filterbank_text: cannot open " + path);
    char buf[64];
    fs << fb.n_mels() << ' ' << fb.bins() << ' ' << fb.sample_rate << ' ';
    std::snprintf(buf, sizeof buf, "%.17g %.17g", fb.f_min, fb.f_max);
    fs << buf << ' ' << fb.n_fft << '\n';
    for (int64_t m = 0; m < fb.n_mels(); ++m) {
        for (int64_t k = 0; k < fb.bins(); ++k) {
            std::snprintf(buf, sizeof buf, "%.17g", fb.weights(m, k));
            fs << (k ? " " : "") << buf;
        }
        fs << '\n';
    }
    if (!fs) throw std::runtime_error("save_filterbank_text: write failed for " + path);
}

inline MelFilterbank load_filterbank_text(const std::string& path) {
    std::ifstream fs(path);
    if (!fs) throw std::runtime_error("load_filterbank_text: cannot open " + path);
    int64_t n_mels = 0, bins = 0, n_fft = 0;
    MelFilterbank fb;
    if (!(fs >> n_mels >> bins >> fb.sample_rate >> fb.f_min >> fb.f_max >> n_fft))
        throw std::runtime_error("load_filterbank_text: malformed header in " + path);
    fb.n_fft = n_fft;
    if (bins != n_fft / 2 + 1)
        throw std::runtime_error("load_filterbank_text: header bins disagree with n_fft");
    fb.weights = Matrix(n_mels, bins);
    for (double& v : fb.weights.a)
        if (!(fs >> v)) throw std::runtime_error("load_filterbank_text: truncated matrix");
    return fb;
}

}  // namespace mpvoc
