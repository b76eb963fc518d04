#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpvoc/losses.hpp"
#include "mpvoc/mel.hpp"
#include "mpvoc/signal.hpp"

namespace mpvoc {

struct McdConfig {
    int64_t n_fft = 1024;
    int64_t hop = 256;
    int64_t n_mels = 40;
    int64_t n_coeffs = 13;     // cepstra 1..13, c0 excluded
    double log_floor = 1e-10;  // inside log of mel energies
};

namespace metric_detail {

// DCT-II cepstra of one log-mel column, coefficients 1..n_coeffs.
inline void mel_cepstra(const std::vector<double>& log_mel, int64_t n_coeffs,
                        std::vector<double>& out) {
    const int64_t m = static_cast<int64_t>(log_mel.size());
    out.assign(static_cast<std::size_t>(n_coeffs), 0.0);
    for (int64_t k = 1; k <= n_coeffs; ++k) {
        double s = 0.0;
        for (int64_t i = 0; i < m; ++i)
            s += log_mel[static_cast<std::size_t>(i)] *
                 std::cos(kPi * static_cast<double>(k) * (2.0 * static_cast<double>(i) + 1.0) /
                          (2.0 * static_cast<double>(m)));
        out[static_cast<std::size_t>(k - 1)] = s;
    }
}

inline Matrix magnitude_of(const Waveform& w, const StftConfig& cfg) {
    return polar_split(stft(w, cfg)).magnitude;
}

}  // namespace metric_detail

// Mel-cepstral distortion in dB: (10 sqrt(2) / ln 10) * mean frame-wise
// Euclidean distance of index-aligned cepstra (no time warping). Uniform gain
// lands in the excluded c0, so scaling either signal leaves the value at 0.
inline double mcd(const Waveform& ref, const Waveform& hyp, const McdConfig& cfg = {}) {
    if (ref.sample_rate != hyp.sample_rate)
        throw std::invalid_argument("mcd: sample rates differ");
    StftConfig scfg;
    scfg.n_fft = cfg.n_fft;
    scfg.hop = cfg.hop;
    Matrix mag_r = metric_detail::magnitude_of(ref, scfg);
    Matrix mag_h = metric_detail::magnitude_of(hyp, scfg);
    const MelFilterbank fb = build_mel_filterbank(cfg.n_fft, cfg.n_mels, ref.sample_rate, 0.0,
                                                  ref.sample_rate / 2.0);
    Matrix mel_r = mel_spectrogram(mag_r, fb);
    Matrix mel_h = mel_spectrogram(mag_h, fb);
    const int64_t frames = std::min(mel_r.cols, mel_h.cols);
    if (frames < 1) throw std::invalid_argument("mcd: no overlapping frames");
    std::vector<double> col(static_cast<std::size_t>(cfg.n_mels));
    std::vector<double> c_ref, c_hyp;
    double acc = 0.0;
    for (int64_t t = 0; t < frames; ++t) {
        for (int64_t m = 0; m < cfg.n_mels; ++m)
            col[static_cast<std::size_t>(m)] = std::log(mel_r(m, t) + cfg.log_floor);
        metric_detail::mel_cepstra(col, cfg.n_coeffs, c_ref);
        for (int64_t m = 0; m < cfg.n_mels; ++m)
            col[static_cast<std::size_t>(m)] = std::log(mel_h(m, t) + cfg.log_floor);
        metric_detail::mel_cepstra(col, cfg.n_coeffs, c_hyp);
        double d2 = 0.0;
        for (std::size_t k = 0; k < c_ref.size(); ++k) {
            const double d = c_ref[k] - c_hyp[k];
            d2 += d * d;
        }
        acc += std::sqrt(d2);
    }
    constexpr double scale = 10.0 * 1.41421356237309504880 / 2.30258509299404568402;
    return scale * acc / static_cast<double>(frames);
}

// Same math as multi_res_stft_loss, evaluated without gradients.
inline double mstft_distance(const Waveform& ref, const Waveform& hyp,
                             const std::vector<StftConfig>& resolutions =
                                 default_mrstft_resolutions()) {
    const std::size_t n = std::min(ref.samples.size(), hyp.samples.size());
    Tape t;
    Tensor rt({static_cast<int64_t>(n)}), ht({static_cast<int64_t>(n)});
    std::copy(ref.samples.begin(), ref.samples.begin() + static_cast<std::ptrdiff_t>(n),
              rt.data.begin());
    std::copy(hyp.samples.begin(), hyp.samples.begin() + static_cast<std::ptrdiff_t>(n),
              ht.data.begin());
    Var loss = multi_res_stft_loss(t, t.constant(std::move(ht)), t.constant(std::move(rt)),
                                   resolutions);
    return t.val(loss).data[0];
}

struct PitchConfig {
    int64_t frame = 1024;
    int64_t hop = 256;
    double f_min = 50.0;
    double f_max = 550.0;
    double voicing_threshold = 0.45;
};

struct PitchTrack {
    std::vector<double> f0;           // Hz, 0 when unvoiced
    std::vector<bool> voiced;
    std::vector<double> periodicity;  // normalized autocorrelation peak in [0, 1]
};

// Normalized-autocorrelation tracker: per frame, the peak over the lag band
// gives periodicity; voiced iff periodicity >= threshold. Parabolic lag
// interpolation refines f0 below the integer-lag resolution.
inline PitchTrack pitch_track(const Waveform& wave, const PitchConfig& cfg = {}) {
    if (static_cast<int64_t>(wave.samples.size()) < cfg.frame)
        throw std::invalid_argument("pitch_track: frame longer than signal");
    if (!(cfg.f_min > 0.0 && cfg.f_min < cfg.f_max))
        throw std::invalid_argument("pitch_track: bad frequency band");
    const double sr = static_cast<double>(wave.sample_rate);
    const int64_t lag_min =
        std::max<int64_t>(2, static_cast<int64_t>(std::floor(sr / cfg.f_max)));
    const int64_t lag_max = std::min<int64_t>(
        cfg.frame - 2, static_cast<int64_t>(std::ceil(sr / cfg.f_min)));
    if (lag_min >= lag_max)
        throw std::invalid_argument("pitch_track: frame too short for the frequency band");

    const int64_t n = static_cast<int64_t>(wave.samples.size());
    const int64_t frames = 1 + (n - cfg.frame) / cfg.hop;
    PitchTrack track;
    track.f0.assign(static_cast<std::size_t>(frames), 0.0);
    track.voiced.assign(static_cast<std::size_t>(frames), false);
    track.periodicity.assign(static_cast<std::size_t>(frames), 0.0);

    std::vector<double> ncc(static_cast<std::size_t>(lag_max + 1), 0.0);
    for (int64_t fi = 0; fi < frames; ++fi) {
        const double* x = wave.samples.data() + fi * cfg.hop;
        std::vector<double> cum2(static_cast<std::size_t>(cfg.frame) + 1, 0.0);
        for (int64_t i = 0; i < cfg.frame; ++i)
            cum2[static_cast<std::size_t>(i) + 1] = cum2[static_cast<std::size_t>(i)] + x[i] * x[i];
        double best = 0.0;
        int64_t best_lag = 0;
        for (int64_t lag = lag_min; lag <= lag_max; ++lag) {
            const int64_t m = cfg.frame - lag;
            double dot = 0.0;
            for (int64_t i = 0; i < m; ++i) dot += x[i] * x[i + lag];
            const double e0 = cum2[static_cast<std::size_t>(m)];
            const double e1 = cum2[static_cast<std::size_t>(cfg.frame)] -
                              cum2[static_cast<std::size_t>(lag)];
            const double denom = std::sqrt(e0 * e1);
            const double v = denom > 1e-12 ? dot / denom : 0.0;
            ncc[static_cast<std::size_t>(lag)] = v;
            if (v > best) {
                best = v;
                best_lag = lag;
            }
        }
        const double periodicity = std::clamp(best, 0.0, 1.0);
        track.periodicity[static_cast<std::size_t>(fi)] = periodicity;
        if (periodicity >= cfg.voicing_threshold && best_lag > 0) {
            double lag_refined = static_cast<double>(best_lag);
            if (best_lag > lag_min && best_lag < lag_max) {
                const double ym = ncc[static_cast<std::size_t>(best_lag - 1)];
                const double y0 = ncc[static_cast<std::size_t>(best_lag)];
                const double yp = ncc[static_cast<std::size_t>(best_lag + 1)];
                const double denom = ym - 2.0 * y0 + yp;
                if (std::abs(denom) > 1e-12) {
                    const double delta = 0.5 * (ym - yp) / denom;
                    if (std::abs(delta) <= 1.0) lag_refined += delta;
                }
            }
            track.voiced[static_cast<std::size_t>(fi)] = true;
            track.f0[static_cast<std::size_t>(fi)] = sr / lag_refined;
        }
    }
    return track;
}

// RMSE over frames voiced in both tracks; absent when no such frame exists.
inline std::optional<double> pitch_rmse(const PitchTrack& ref, const PitchTrack& hyp) {
    if (ref.f0.size() != hyp.f0.size())
        throw std::invalid_argument("pitch_rmse: frame counts differ");
    double acc = 0.0;
    int64_t n = 0;
    for (std::size_t i = 0; i < ref.f0.size(); ++i)
        if (ref.voiced[i] && hyp.voiced[i]) {
            const double d = ref.f0[i] - hyp.f0[i];
            acc += d * d;
            ++n;
        }
    if (n == 0) return std::nullopt;
    return std::sqrt(acc / static_cast<double>(n));
}

inline double periodicity_rmse(const PitchTrack& ref, const PitchTrack& hyp) {
    if (ref.periodicity.size() != hyp.periodicity.size())
        throw std::invalid_argument("periodicity_rmse: frame counts differ");
    if (ref.periodicity.empty()) throw std::invalid_argument("periodicity_rmse: empty tracks");
    double acc = 0.0;
    for (std::size_t i = 0; i < ref.periodicity.size(); ++i) {
        const double d = ref.periodicity[i] - hyp.periodicity[i];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(ref.periodicity.size()));
}

// F1 of hyp's voiced decisions against ref's. Two all-unvoiced tracks agree
// perfectly and score 1.
inline double vuv_f1(const PitchTrack& ref, const PitchTrack& hyp) {
    if (ref.voiced.size() != hyp.voiced.size())
        throw std::invalid_argument("vuv_f1: frame counts differ");
    int64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < ref.voiced.size(); ++i) {
        if (ref.voiced[i] && hyp.voiced[i]) ++tp;
        else if (!ref.voiced[i] && hyp.voiced[i]) ++fp;
        else if (ref.voiced[i] && !hyp.voiced[i]) ++fn;
    }
    if (tp == 0) return fp == 0 && fn == 0 ? 1.0 : 0.0;
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    return 2.0 * precision * recall / (precision + recall);
}

struct UtteranceMetrics {
    std::string utt_id;
    double mcd = 0.0;
    double mstft = 0.0;
    double vuv_f1 = 0.0;
    std::optional<double> pitch_rmse;
    double periodicity_rmse = 0.0;
};

struct MetricReport {
    std::vector<UtteranceMetrics> rows;
};

inline UtteranceMetrics evaluate_pair(const std::string& utt_id, const Waveform& ref,
                                      const Waveform& hyp, const PitchConfig& pitch_cfg = {},
                                      const McdConfig& mcd_cfg = {}) {
    UtteranceMetrics m;
    m.utt_id = utt_id;
    m.mcd = mcd(ref, hyp, mcd_cfg);
    m.mstft = mstft_distance(ref, hyp);
    Waveform hyp_cut = hyp;
    hyp_cut.samples.resize(std::min(ref.samples.size(), hyp.samples.size()));
    Waveform ref_cut = ref;
    ref_cut.samples.resize(hyp_cut.samples.size());
    const PitchTrack tref = pitch_track(ref_cut, pitch_cfg);
    const PitchTrack thyp = pitch_track(hyp_cut, pitch_cfg);
    m.vuv_f1 = vuv_f1(tref, thyp);
    m.pitch_rmse = pitch_rmse(tref, thyp);
    m.periodicity_rmse = periodicity_rmse(tref, thyp);
    return m;
}

namespace metric_detail {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace metric_detail

// One row per utterance plus a final MEAN row; the mean of pitch_rmse covers
// the rows where it exists and is empty when none do. No length weighting.
inline std::string metric_report_csv(const MetricReport& report) {
    using metric_detail::fmt;
    std::string out = "utt_id,mcd,mstft,vuv_f1,pitch_rmse,periodicity_rmse\n";
    double s_mcd = 0.0, s_mstft = 0.0, s_f1 = 0.0, s_per = 0.0, s_pitch = 0.0;
    int64_t n_pitch = 0;
    for (const UtteranceMetrics& m : report.rows) {
        out += m.utt_id + ',' + fmt(m.mcd) + ',' + fmt(m.mstft) + ',' + fmt(m.vuv_f1) + ',';
        if (m.pitch_rmse) {
            out += fmt(*m.pitch_rmse);
            s_pitch += *m.pitch_rmse;
            ++n_pitch;
        }
        out += ',' + fmt(m.periodicity_rmse) + '\n';
        s_mcd += m.mcd;
        s_mstft += m.mstft;
        s_f1 += m.vuv_f1;
        s_per += m.periodicity_rmse;
    }
    if (!report.rows.empty()) {
        const double n = static_cast<double>(report.rows.size());
        out += "MEAN," + fmt(s_mcd / n) + ',' + fmt(s_mstft / n) + ',' + fmt(s_f1 / n) + ',';
        if (n_pitch > 0) out += fmt(s_pitch / static_cast<double>(n_pitch));
        out += ',' + fmt(s_per / n) + '\n';
    }
    return out;
}

}  // namespace mpvoc
