#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpvoc/autodiff.hpp"
#include "mpvoc/mel.hpp"
#include "mpvoc/rng.hpp"
#include "mpvoc/signal.hpp"

namespace mpvoc {

struct BlockConfig {
    int64_t channels = 48;
    int64_t depthwise_kernel = 7;
    int64_t expansion = 3;

    void validate() const {
        if (channels < 1) throw std::invalid_argument("BlockConfig: channels must be >= 1");
        if (depthwise_kernel < 1 || depthwise_kernel % 2 == 0)
            throw std::invalid_argument("BlockConfig: depthwise kernel must be odd");
        if (expansion < 1) throw std::invalid_argument("BlockConfig: expansion must be >= 1");
    }
};

enum class TopologyKind { shared, partially_shared, shuffle, separate };

struct TopologyConfig {
    TopologyKind kind = TopologyKind::separate;
    int64_t depth = 4;           // blocks per stream (or trunk depth for shared)
    int64_t shared_layers = 2;   // R, partially_shared only

    void validate() const {
        if (depth < 1) throw std::invalid_argument("TopologyConfig: depth must be >= 1");
        if (kind == TopologyKind::partially_shared &&
            (shared_layers <= 0 || shared_layers >= depth))
            throw std::invalid_argument("TopologyConfig: need 0 < shared_layers < depth");
    }
};

enum class HeadKind { direct_phase, atan_phase, miri };

// MI-RI magnitude-blend ablation: `detach` keeps the phase-branch magnitude in
// the forward blend but blocks its gradient; `remove` drops the term entirely.
enum class MbMode { off, detach, remove };

struct HeadConfig {
    HeadKind kind = HeadKind::direct_phase;
    MbMode mb_mode = MbMode::off;
    bool alpha_per_freq = false;
};

enum class InputKind { raw, prior };

struct ModelConfig {
    InputKind input_kind = InputKind::raw;
    StftConfig stft;
    int64_t n_mels = 100;
    BlockConfig block;
    TopologyConfig topology;
    HeadConfig head;
    uint64_t seed = 0;

    int64_t input_rows() const {
        return input_kind == InputKind::raw ? n_mels : stft.bins();
    }
    void validate() const {
        stft.validate();
        block.validate();
        topology.validate();
        if (n_mels < 2) throw std::invalid_argument("ModelConfig: n_mels must be >= 2");
        if (head.mb_mode != MbMode::off && head.kind != HeadKind::miri)
            throw std::invalid_argument("ModelConfig: mb_mode requires the MI-RI head");
    }
};

struct ModelOutputs {
    Var amp;        // final magnitude estimate, strictly positive
    Var phase;      // phase estimate
    Var amp_m;      // magnitude-branch estimate exp(raw_mag)
    Var amp_p;      // phase-branch magnitude (MI-RI only)
    Var real;       // MI-RI / Atan first component
    Var imag;       // MI-RI / Atan second component
    Var raw_mag;    // pre-exp magnitude head output
    Var raw_phase;  // pre-wrap phase head output (DirectPhase only)
    Var alpha;      // blend weight (MI-RI only)
};

// Eq. 2-3 combination: amp_p = sqrt(max(R^2 + I^2, 1e-9)),
// amp = alpha * amp_m + (1 - alpha) * amp_p, phase = atan2(I, R).
struct MiriCombined {
    Var amp;
    Var phase;
    Var amp_p;
};
inline MiriCombined combine_miri(Tape& t, Var amp_m, Var real, Var imag, Var alpha,
                                 MbMode mb = MbMode::off) {
    MiriCombined out;
    Var power = t.add(t.square(real), t.square(imag));
    out.amp_p = t.sqrt(t.clamp_min(power, 1e-9));
    out.phase = t.atan2(imag, real);
    if (mb == MbMode::remove) {
        out.amp = amp_m;
        return out;
    }
    Var blend_p = mb == MbMode::detach ? t.detach(out.amp_p) : out.amp_p;
    Var one_minus = t.add_scalar(t.neg(alpha), 1.0);
    out.amp = t.add(t.mul(alpha, amp_m), t.mul(one_minus, blend_p));
    return out;
}

// Wraps a tape variable into [-pi, pi] (boundary ties resolved by round()).
inline Var wrap_phase_var(Tape& t, Var x) {
    Var h = t.round_nograd(t.scale(x, 1.0 / kTwoPi));
    return t.sub(x, t.scale(h, kTwoPi));
}

class Model {
  public:
    explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(cfg_.seed);
        build(rng);
    }

    const ModelConfig& config() const { return cfg_; }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out;
        out.reserve(params_.size());
        for (auto& p : params_) out.push_back(p.get());
        return out;
    }

    Parameter* find(const std::string& name) {
        for (auto& p : params_)
            if (p->name == name) return p.get();
        return nullptr;
    }

    int64_t param_count() const {
        int64_t n = 0;
        for (auto& p : params_) n += p->value.numel();
        return n;
    }

    int64_t param_count(Branch b) const {
        int64_t n = 0;
        for (auto& p : params_)
            if (p->branch == b) n += p->value.numel();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p->zero_grad();
    }

    // input: (n_mels x T) for raw, (bins x T) for prior; already log-compressed.
    ModelOutputs forward(Tape& t, const Matrix& input) const {
        if (input.rows != cfg_.input_rows())
            throw std::invalid_argument(
                "Model::forward: input has " + std::to_string(input.rows) +
                " rows, config expects " + std::to_string(cfg_.input_rows()) +
                (cfg_.input_kind == InputKind::raw ? " (raw mel)" : " (prior)"));
        Var x = t.constant(Tensor::from_matrix(input));
        Var feat_m, feat_p;
        switch (cfg_.topology.kind) {
            case TopologyKind::shared: {
                Var h = trunk_embed_.apply(t, x);
                for (const auto& b : trunk_blocks_) h = b.apply(t, h);
                h = trunk_norm_.apply(t, h);
                feat_m = feat_p = h;
                break;
            }
            case TopologyKind::partially_shared: {
                Var h = trunk_embed_.apply(t, x);
                for (const auto& b : trunk_blocks_) h = b.apply(t, h);
                Var hm = mag_.enter.apply(t, h);
                Var hp = ph_.enter.apply(t, h);
                for (const auto& b : mag_.blocks) hm = b.apply(t, hm);
                for (const auto& b : ph_.blocks) hp = b.apply(t, hp);
                feat_m = mag_.norm.apply(t, hm);
                feat_p = ph_.norm.apply(t, hp);
                break;
            }
            case TopologyKind::shuffle:
            case TopologyKind::separate: {
                const bool mix = cfg_.topology.kind == TopologyKind::shuffle;
                Var hm = mag_.embed.apply(t, x);
                Var hp = ph_.embed.apply(t, x);
                for (std::size_t i = 0; i < mag_.blocks.size(); ++i) {
                    Var bm = mag_.blocks[i].apply(t, hm);
                    Var bp = ph_.blocks[i].apply(t, hp);
                    Var other_m = mix ? bp : zeros_like(t, bp);
                    Var other_p = mix ? bm : zeros_like(t, bm);
                    hm = mag_.mixers[i].apply(t, t.concat_rows(bm, other_m));
                    hp = ph_.mixers[i].apply(t, t.concat_rows(bp, other_p));
                }
                feat_m = mag_.norm.apply(t, hm);
                feat_p = ph_.norm.apply(t, hp);
                break;
            }
        }

        ModelOutputs out;
        out.raw_mag = head_mag_.apply(t, feat_m);
        out.amp_m = t.exp(out.raw_mag);
        Var ph_out = head_ph_.apply(t, feat_p);
        const int64_t f_bins = cfg_.stft.bins();
        switch (cfg_.head.kind) {
            case HeadKind::direct_phase:
                out.raw_phase = ph_out;
                out.phase = wrap_phase_var(t, ph_out);
                out.amp = out.amp_m;
                break;
            case HeadKind::atan_phase:
                out.real = t.slice_rows(ph_out, 0, f_bins);
                out.imag = t.slice_rows(ph_out, f_bins, f_bins);
                out.phase = t.atan2(out.imag, out.real);
                out.amp = out.amp_m;
                break;
            case HeadKind::miri: {
                out.real = t.slice_rows(ph_out, 0, f_bins);
                out.imag = t.slice_rows(ph_out, f_bins, f_bins);
                out.alpha = t.sigmoid(t.param(*alpha_));
                MiriCombined c =
                    combine_miri(t, out.amp_m, out.real, out.imag, out.alpha, cfg_.head.mb_mode);
                out.amp = c.amp;
                out.phase = c.phase;
                out.amp_p = c.amp_p;
                break;
            }
        }
        return out;
    }

  private:
    struct Conv {
        Parameter* w = nullptr;
        Parameter* b = nullptr;
        int64_t groups = 1;
        Var apply(Tape& t, Var x) const {
            return t.conv1d(x, t.param(*w), t.param(*b), groups);
        }
    };
    struct Norm {
        Parameter* g = nullptr;
        Parameter* b = nullptr;
        Var apply(Tape& t, Var x) const {
            return t.layer_norm(x, t.param(*g), t.param(*b));
        }
    };
    // ConvNext-style block: depthwise conv -> channel LN -> pointwise expand ->
    // GELU -> pointwise project -> residual.
    struct Block {
        Conv dw;
        Norm ln;
        Conv pw1;
        Conv pw2;
        Var apply(Tape& t, Var x) const {
            Var u = dw.apply(t, x);
            u = ln.apply(t, u);
            u = pw1.apply(t, u);
            u = t.gelu(u);
            u = pw2.apply(t, u);
            return t.add(x, u);
        }
    };
    struct Stream {
        Conv embed;               // separate/shuffle
        Conv enter;               // partially_shared transition
        std::vector<Block> blocks;
        std::vector<Conv> mixers; // separate/shuffle interaction slots
        Norm norm;
    };

    ModelConfig cfg_;
    std::vector<std::unique_ptr<Parameter>> params_;
    Conv trunk_embed_;
    std::vector<Block> trunk_blocks_;
    Norm trunk_norm_;
    Stream mag_;
    Stream ph_;
    Conv head_mag_;
    Conv head_ph_;
    Parameter* alpha_ = nullptr;

    static Var zeros_like(Tape& t, Var v) {
        return t.constant(Tensor(t.val(v).shape));
    }

    Parameter* add(const std::string& name, Branch br, std::vector<int64_t> shape, Rng& rng,
                   double init_std, double fill = 0.0) {
        Tensor v(shape);
        if (init_std > 0.0)
            for (double& x : v.data) x = rng.gauss(0.0, init_std);
        else if (fill != 0.0)
            for (double& x : v.data) x = fill;
        params_.push_back(std::make_unique<Parameter>(name, br, std::move(v)));
        return params_.back().get();
    }

    Conv make_conv(const std::string& name, Branch br, int64_t c_in, int64_t c_out, int64_t k,
                   int64_t groups, Rng& rng) {
        Conv c;
        c.groups = groups;
        c.w = add(name + ".w", br, {c_out, c_in / groups, k}, rng, 0.02);
        c.b = add(name + ".b", br, {c_out}, rng, 0.0);
        return c;
    }

    Norm make_norm(const std::string& name, Branch br, int64_t c, Rng& rng) {
        Norm n;
        n.g = add(name + ".g", br, {c}, rng, 0.0, 1.0);
        n.b = add(name + ".b", br, {c}, rng, 0.0);
        return n;
    }

    Block make_block(const std::string& name, Branch br, int64_t c, Rng& rng) {
        Block b;
        b.dw = make_conv(name + ".dw", br, c, c, cfg_.block.depthwise_kernel, c, rng);
        b.ln = make_norm(name + ".ln", br, c, rng);
        b.pw1 = make_conv(name + ".pw1", br, c, c * cfg_.block.expansion, 1, 1, rng);
        b.pw2 = make_conv(name + ".pw2", br, c * cfg_.block.expansion, c, 1, 1, rng);
        return b;
    }

    void build(Rng& rng) {
        const int64_t f_in = cfg_.input_rows();
        const int64_t c = cfg_.block.channels;
        const int64_t k = cfg_.block.depthwise_kernel;
        const int64_t f_bins = cfg_.stft.bins();
        const int64_t depth = cfg_.topology.depth;
        const int64_t ph_rows = cfg_.head.kind == HeadKind::direct_phase ? f_bins : 2 * f_bins;

        switch (cfg_.topology.kind) {
            case TopologyKind::shared: {
                trunk_embed_ = make_conv("sh.embed", Branch::shared, f_in, c, k, 1, rng);
                for (int64_t i = 0; i < depth; ++i)
                    trunk_blocks_.push_back(
                        make_block("sh.block" + std::to_string(i), Branch::shared, c, rng));
                trunk_norm_ = make_norm("sh.norm", Branch::shared, c, rng);
                head_mag_ = make_conv("mag.head", Branch::magnitude, c, f_bins, 1, 1, rng);
                head_ph_ = make_conv("ph.head", Branch::phase, c, ph_rows, 1, 1, rng);
                break;
            }
            case TopologyKind::partially_shared: {
                // R shared blocks at full width, then narrower per-stream tails;
                // half width keeps the total strictly increasing in R.
                const int64_t cs = std::max<int64_t>(1, c / 2);
                const int64_t r = cfg_.topology.shared_layers;
                trunk_embed_ = make_conv("sh.embed", Branch::shared, f_in, c, k, 1, rng);
                for (int64_t i = 0; i < r; ++i)
                    trunk_blocks_.push_back(
                        make_block("sh.block" + std::to_string(i), Branch::shared, c, rng));
                mag_.enter = make_conv("mag.enter", Branch::magnitude, c, cs, 1, 1, rng);
                ph_.enter = make_conv("ph.enter", Branch::phase, c, cs, 1, 1, rng);
                for (int64_t i = 0; i < depth - r; ++i) {
                    mag_.blocks.push_back(make_block("mag.block" + std::to_string(i),
                                                     Branch::magnitude, cs, rng));
                    ph_.blocks.push_back(
                        make_block("ph.block" + std::to_string(i), Branch::phase, cs, rng));
                }
                mag_.norm = make_norm("mag.norm", Branch::magnitude, cs, rng);
                ph_.norm = make_norm("ph.norm", Branch::phase, cs, rng);
                head_mag_ = make_conv("mag.head", Branch::magnitude, cs, f_bins, 1, 1, rng);
                head_ph_ = make_conv("ph.head", Branch::phase, cs, ph_rows, 1, 1, rng);
                break;
            }
            case TopologyKind::shuffle:
            case TopologyKind::separate: {
                // Identical parameter skeletons: the shuffle wiring feeds the other
                // stream into the mixer, the separate wiring feeds zeros.
                mag_.embed = make_conv("mag.embed", Branch::magnitude, f_in, c, k, 1, rng);
                ph_.embed = make_conv("ph.embed", Branch::phase, f_in, c, k, 1, rng);
                for (int64_t i = 0; i < depth; ++i) {
                    mag_.blocks.push_back(make_block("mag.block" + std::to_string(i),
                                                     Branch::magnitude, c, rng));
                    mag_.mixers.push_back(make_conv("mag.mix" + std::to_string(i),
                                                    Branch::magnitude, 2 * c, c, 1, 1, rng));
                    ph_.blocks.push_back(
                        make_block("ph.block" + std::to_string(i), Branch::phase, c, rng));
                    ph_.mixers.push_back(make_conv("ph.mix" + std::to_string(i), Branch::phase,
                                                   2 * c, c, 1, 1, rng));
                }
                mag_.norm = make_norm("mag.norm", Branch::magnitude, c, rng);
                ph_.norm = make_norm("ph.norm", Branch::phase, c, rng);
                head_mag_ = make_conv("mag.head", Branch::magnitude, c, f_bins, 1, 1, rng);
                head_ph_ = make_conv("ph.head", Branch::phase, c, ph_rows, 1, 1, rng);
                break;
            }
        }
        if (cfg_.head.kind == HeadKind::miri) {
            const int64_t alpha_n = cfg_.head.alpha_per_freq ? f_bins : 1;
            alpha_ = add("alpha", Branch::shared, {alpha_n}, rng, 0.0);
        }
    }
};

// theta from raw head outputs with the exact (-pi, pi] boundary convention.
inline Matrix head_to_phase_direct(const Matrix& raw) {
    Matrix out(raw.rows, raw.cols);
    for (std::size_t i = 0; i < raw.a.size(); ++i) out.a[i] = wrap_phase(raw.a[i]);
    return out;
}

inline Matrix head_to_phase_atan(const Matrix& real, const Matrix& imag) {
    if (!real.same_shape(imag))
        throw std::invalid_argument("head_to_phase_atan: shape mismatch");
    Matrix out(real.rows, real.cols);
    for (std::size_t i = 0; i < real.a.size(); ++i) {
        double ph = std::atan2(imag.a[i], real.a[i]);
        if (ph <= -kPi) ph = kPi;
        out.a[i] = ph;
    }
    return out;
}

// waveform = istft(polar_join(amp, phase)).
inline Waveform reconstruct(const Matrix& amp, const Matrix& phase, const StftConfig& cfg,
                            int sample_rate, std::optional<int64_t> length = std::nullopt) {
    if (!amp.same_shape(phase)) throw std::invalid_argument("reconstruct: shape mismatch");
    for (double v : amp.a)
        if (v < 0.0) throw std::invalid_argument("reconstruct: negative magnitude");
    MagPhaseSpectrogram mp;
    mp.magnitude = amp;
    mp.phase = phase;
    mp.config = cfg;
    return istft(polar_join(mp), sample_rate, length);
}

// Tape path used in training: istft of (amp cos phase, amp sin phase).
inline Var reconstruct_var(Tape& t, Var amp, Var phase, const StftConfig& cfg,
                           std::optional<int64_t> length = std::nullopt) {
    Var real = t.mul(amp, t.cos(phase));
    Var imag = t.mul(amp, t.sin(phase));
    return t.istft_complex(t.pack2(real, imag), cfg, length);
}

}  // namespace mpvoc
