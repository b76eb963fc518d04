#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mpvoc/autodiff.hpp"
#include "mpvoc/mel.hpp"
#include "mpvoc/model.hpp"
#include "mpvoc/signal.hpp"

namespace mpvoc {

// mean((log(amp_hat + eps) - log(amp_ref + eps))^2), eps = 1e-5.
inline Var log_magnitude_loss(Tape& t, Var amp_hat, Var amp_ref) {
    Var lh = t.log(t.add_scalar(amp_hat, kLogFloor));
    Var lr = t.log(t.add_scalar(amp_ref, kLogFloor));
    return t.reduce_mean(t.square(t.sub(lh, lr)));
}

namespace loss_detail {

// f_AW(x) = |x - 2 pi round(x / 2 pi)|, the periodic distance to the lattice.
inline Var anti_wrap(Tape& t, Var x) {
    return t.abs(t.sub(x, t.scale(t.round_nograd(t.scale(x, 1.0 / kTwoPi)), kTwoPi)));
}

inline Var diff_rows(Tape& t, Var x, int64_t rows) {
    return t.sub(t.slice_rows(x, 1, rows - 1), t.slice_rows(x, 0, rows - 1));
}

// |STFT| on the tape with a tiny power floor so the sqrt gradient stays finite.
inline Var stft_magnitude_var(Tape& t, Var wave, const StftConfig& cfg) {
    Var packed = t.stft_complex(wave, cfg);
    Var re = t.plane(packed, 0);
    Var im = t.plane(packed, 1);
    return t.sqrt(t.clamp_min(t.add(t.square(re), t.square(im)), 1e-14));
}

}  // namespace loss_detail

// Mean of three anti-wrapped terms: instantaneous phase, frequency-axis
// difference, time-axis difference. Invariant to 2 pi h shifts of either input.
inline Var anti_wrapping_phase_loss(Tape& t, Var phase_hat, Var phase_ref) {
    // copy dims out: tape growth invalidates references into it
    const std::vector<int64_t> shape = t.val(phase_hat).shape;
    if (shape != t.val(phase_ref).shape)
        throw std::invalid_argument("anti_wrapping_phase_loss: shape mismatch");
    if (shape.size() != 2 || shape[0] < 2 || shape[1] < 2)
        throw std::invalid_argument("anti_wrapping_phase_loss: need at least a 2x2 grid");
    const int64_t rows = shape[0];
    const int64_t cols = shape[1];
    using loss_detail::anti_wrap;
    using loss_detail::diff_rows;
    Var ip = t.reduce_mean(anti_wrap(t, t.sub(phase_hat, phase_ref)));
    Var gd = t.reduce_mean(
        anti_wrap(t, t.sub(diff_rows(t, phase_hat, rows), diff_rows(t, phase_ref, rows))));
    Var ht = t.transpose2d(phase_hat);
    Var rt = t.transpose2d(phase_ref);
    Var iaf = t.reduce_mean(anti_wrap(t, t.sub(diff_rows(t, ht, cols), diff_rows(t, rt, cols))));
    return t.scale(t.add(t.add(ip, gd), iaf), 1.0 / 3.0);
}

// Mean squared distance between the complex grid of (amp, phase) and the
// analysis of its own synthesis; zero exactly on realizable spectrograms.
inline Var stft_consistency_loss(Tape& t, Var amp, Var phase, const StftConfig& cfg) {
    Var real = t.mul(amp, t.cos(phase));
    Var imag = t.mul(amp, t.sin(phase));
    Var packed = t.pack2(real, imag);
    Var wave = t.istft_complex(packed, cfg);
    Var round_trip = t.stft_complex(wave, cfg);
    return t.reduce_mean(t.square(t.sub(packed, round_trip)));
}

// mean |log mel(|STFT(hat)|) - log mel(|STFT(ref)|)|.
inline Var mel_l1_loss(Tape& t, Var wave_hat, Var wave_ref, const MelFilterbank& fb,
                       const StftConfig& cfg) {
    if (t.val(wave_hat).numel() != t.val(wave_ref).numel())
        throw std::invalid_argument("mel_l1_loss: waveform length mismatch");
    Var fbw = t.constant(Tensor::from_matrix(fb.weights));
    Var mh = t.log(t.add_scalar(t.matmul(fbw, loss_detail::stft_magnitude_var(t, wave_hat, cfg)),
                                kLogFloor));
    Var mr = t.log(t.add_scalar(t.matmul(fbw, loss_detail::stft_magnitude_var(t, wave_ref, cfg)),
                                kLogFloor));
    return t.reduce_mean(t.abs(t.sub(mh, mr)));
}

inline std::vector<StftConfig> default_mrstft_resolutions() {
    std::vector<StftConfig> out;
    for (auto [n, h] : {std::pair<int64_t, int64_t>{512, 128}, {1024, 256}, {2048, 512}}) {
        StftConfig c;
        c.n_fft = n;
        c.hop = h;
        c.window = WindowKind::hann;
        c.center = true;
        out.push_back(c);
    }
    return out;
}

// Mean over resolutions of spectral convergence + log-magnitude L1. The
// spectral-convergence denominator uses the reference norm, so the loss is
// not symmetric in its arguments.
inline Var multi_res_stft_loss(Tape& t, Var wave_hat, Var wave_ref,
                               const std::vector<StftConfig>& resolutions) {
    if (t.val(wave_hat).numel() != t.val(wave_ref).numel())
        throw std::invalid_argument("multi_res_stft_loss: waveform length mismatch");
    if (resolutions.empty())
        throw std::invalid_argument("multi_res_stft_loss: need at least one resolution");
    Var total = t.constant(Tensor::scalar(0.0));
    for (const StftConfig& cfg : resolutions) {
        Var mh = loss_detail::stft_magnitude_var(t, wave_hat, cfg);
        Var mr = loss_detail::stft_magnitude_var(t, wave_ref, cfg);
        Var diff_norm = t.sqrt(t.reduce_sum(t.square(t.sub(mr, mh))));
        Var ref_norm = t.clamp_min(t.sqrt(t.reduce_sum(t.square(mr))), 1e-12);
        Var sc = t.div(diff_norm, ref_norm);
        Var lmag = t.reduce_mean(t.abs(
            t.sub(t.log(t.add_scalar(mh, kLogFloor)), t.log(t.add_scalar(mr, kLogFloor)))));
        total = t.add(total, t.add(sc, lmag));
    }
    return t.scale(total, 1.0 / static_cast<double>(resolutions.size()));
}

enum class LossPreset { vl_approx, al_approx };

inline const char* loss_preset_name(LossPreset p) {
    return p == LossPreset::vl_approx ? "vl_approx" : "al_approx";
}

struct LossWeights {
    double log_magnitude = 1.0;
    double phase_aw = 1.0;
    double stft_consistency = 1.0;
    double mel_l1 = 1.0;
    double mrstft = 1.0;
};

// Customary mel weighting of the Vocos-style waveform-loss recipe.
inline LossWeights default_weights(LossPreset p) {
    LossWeights w;
    if (p == LossPreset::vl_approx) w.mel_l1 = 45.0;
    return w;
}

struct LossReport {
    std::vector<std::pair<std::string, double>> terms;    // unweighted values
    std::vector<std::pair<std::string, double>> weights;  // aligned with terms
    double total = 0.0;
};

struct TrainingLoss {
    Var total;
    std::vector<std::pair<std::string, Var>> terms;
    std::vector<double> weights;

    LossReport report(const Tape& t) const {
        LossReport r;
        r.total = t.val(total).data[0];
        for (std::size_t i = 0; i < terms.size(); ++i) {
            r.terms.emplace_back(terms[i].first, t.val(terms[i].second).data[0]);
            r.weights.emplace_back(terms[i].first, weights[i]);
        }
        return r;
    }
};

// Assembles the preset loss for one training segment. amp_ref/phase_ref are the
// analysis targets of the segment; wave_ref is the matching sample range.
inline TrainingLoss build_training_loss(Tape& t, LossPreset preset, const LossWeights& w,
                                        const ModelOutputs& out, const Matrix& amp_ref,
                                        const Matrix& phase_ref,
                                        const std::vector<double>& wave_ref,
                                        const MelFilterbank& fb, const StftConfig& cfg) {
    TrainingLoss loss;
    auto add_term = [&](const std::string& name, Var v, double weight) {
        loss.terms.emplace_back(name, v);
        loss.weights.push_back(weight);
        Var contrib = t.scale(v, weight);
        loss.total = loss.total.valid() ? t.add(loss.total, contrib) : contrib;
    };

    Tensor ref_wave_t({static_cast<int64_t>(wave_ref.size())});
    ref_wave_t.data = wave_ref;
    Var ref_wave = t.constant(std::move(ref_wave_t));

    if (preset == LossPreset::vl_approx) {
        Var wave_hat =
            reconstruct_var(t, out.amp, out.phase, cfg, static_cast<int64_t>(wave_ref.size()));
        add_term("mel_l1", mel_l1_loss(t, wave_hat, ref_wave, fb, cfg), w.mel_l1);
        add_term("mrstft", multi_res_stft_loss(t, wave_hat, ref_wave, default_mrstft_resolutions()),
                 w.mrstft);
    } else {
        Var amp_target = t.constant(Tensor::from_matrix(amp_ref));
        Var phase_target = t.constant(Tensor::from_matrix(phase_ref));
        add_term("log_magnitude", log_magnitude_loss(t, out.amp, amp_target), w.log_magnitude);
        add_term("phase_aw", anti_wrapping_phase_loss(t, out.phase, phase_target), w.phase_aw);
        add_term("stft_consistency", stft_consistency_loss(t, out.amp, out.phase, cfg),
                 w.stft_consistency);
        Var wave_hat =
            reconstruct_var(t, out.amp, out.phase, cfg, static_cast<int64_t>(wave_ref.size()));
        add_term("mel_l1", mel_l1_loss(t, wave_hat, ref_wave, fb, cfg), w.mel_l1);
    }
    return loss;
}

}  // namespace mpvoc
