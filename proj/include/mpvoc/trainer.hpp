#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpvoc/checkpoint.hpp"
#include "mpvoc/config.hpp"
#include "mpvoc/corpus.hpp"
#include "mpvoc/losses.hpp"
#include "mpvoc/metrics.hpp"
#include "mpvoc/model.hpp"
#include "mpvoc/optim.hpp"
#include "mpvoc/threading.hpp"

namespace mpvoc {

// Analysis front end shared by training, synthesis, and spectrogram dumping.
struct FeatureExtractor {
    StftConfig stft_cfg;
    MelFilterbank fb;
    Matrix pinv;  // bins x n_mels, built for prior inputs
    InputKind kind = InputKind::raw;
    bool clamp_prior = true;
    bool log_compress_prior = true;

    static FeatureExtractor build(const RunConfig& cfg) {
        FeatureExtractor fx;
        fx.stft_cfg = cfg.stft;
        fx.fb = build_mel_filterbank(cfg.stft.n_fft, cfg.mel.n_mels, cfg.corpus.sample_rate,
                                     cfg.mel.f_min, cfg.mel_f_max(), cfg.mel.area_normalize);
        fx.kind = cfg.model.input_kind;
        fx.clamp_prior = cfg.mel.clamp_prior;
        fx.log_compress_prior = cfg.mel.log_compress_prior;
        if (fx.kind == InputKind::prior) fx.pinv = pseudo_inverse(fx.fb).pinv;
        return fx;
    }

    // Model input from a mel spectrogram (n_mels x T).
    Matrix input_from_mel(const Matrix& mel) const {
        if (kind == InputKind::raw) return log_compress(mel);
        PriorSpectrogram prior = project_prior(mel, pinv, clamp_prior);
        return log_compress_prior ? log_compress(prior.values) : prior.values;
    }

    Matrix input_from_wave(const Waveform& w) const {
        return input_from_mel(mel_spectrogram(polar_split(stft(w, stft_cfg)).magnitude, fb));
    }

    void analysis_targets(const Waveform& w, Matrix& amp, Matrix& phase) const {
        MagPhaseSpectrogram mp = polar_split(stft(w, stft_cfg));
        amp = std::move(mp.magnitude);
        phase = std::move(mp.phase);
    }
};

class Trainer {
  public:
    // An empty corpus gives an inference-only trainer (synthesis and restore
    // work, train_step and evaluate refuse).
    Trainer(const RunConfig& cfg, Corpus corpus)
        : cfg_(cfg),
          corpus_(std::move(corpus)),
          fx_(FeatureExtractor::build(cfg)),
          sample_rng_(cfg.train.seed) {
        model_ = std::make_unique<Model>(cfg_.model);
        AdamWConfig ocfg;
        ocfg.lr = cfg_.train.lr;
        opt_ = std::make_unique<AdamW>(model_->parameters(), ocfg);
        feats_.resize(corpus_.size());
        for (std::size_t i = 0; i < corpus_.size(); ++i) {
            UttFeatures& f = feats_[i];
            fx_.analysis_targets(corpus_[i].wave, f.amp, f.phase);
            f.input = fx_.input_from_mel(mel_spectrogram(f.amp, fx_.fb));
            if (f.amp.cols < cfg_.train.segment_frames)
                throw std::invalid_argument("Trainer: utterance '" + corpus_[i].id +
                                            "' is shorter than one training segment");
        }
    }

    const RunConfig& config() const { return cfg_; }
    Model& model() { return *model_; }
    const Corpus& corpus() const { return corpus_; }
    int64_t step() const { return step_; }

    // forward -> loss -> backward -> AdamW -> zero grads, one batch.
    LossReport train_step() {
        if (corpus_.empty()) throw std::logic_error("train_step: trainer has no corpus");
        Tape tape;
        const int64_t seg = cfg_.train.segment_frames;
        std::vector<LossReport> item_reports;
        try {
            Var total;
            for (int64_t b = 0; b < cfg_.train.batch; ++b) {
                const std::size_t u =
                    static_cast<std::size_t>(sample_rng_.below(corpus_.size()));
                const UttFeatures& f = feats_[u];
                const int64_t start =
                    static_cast<int64_t>(sample_rng_.below(
                        static_cast<uint64_t>(f.amp.cols - seg + 1)));
                Matrix in = slice_cols(f.input, start, seg);
                Matrix amp_ref = slice_cols(f.amp, start, seg);
                Matrix phase_ref = slice_cols(f.phase, start, seg);
                const int64_t s0 = start * cfg_.stft.hop;
                const int64_t s1 = s0 + (seg - 1) * cfg_.stft.hop;
                std::vector<double> wave_ref(
                    corpus_[u].wave.samples.begin() + s0,
                    corpus_[u].wave.samples.begin() + s1);
                ModelOutputs out = model_->forward(tape, in);
                TrainingLoss item =
                    build_training_loss(tape, cfg_.train.preset, cfg_.train.weights, out,
                                        amp_ref, phase_ref, wave_ref, fx_.fb, cfg_.stft);
                item_reports.push_back(item.report(tape));
                total = total.valid() ? tape.add(total, item.total) : item.total;
            }
            total = tape.scale(total, 1.0 / static_cast<double>(cfg_.train.batch));
            tape.backward(total);
            opt_->step();
            model_->zero_grad();
        } catch (const std::exception& e) {
            throw std::runtime_error("train_step: aborted at step " +
                                     std::to_string(step_ + 1) + ": " + e.what());
        }
        ++step_;

        LossReport report;
        report.total = 0.0;
        for (std::size_t ti = 0; ti < item_reports[0].terms.size(); ++ti) {
            double sum = 0.0;
            for (const LossReport& ir : item_reports) sum += ir.terms[ti].second;
            const double mean = sum / static_cast<double>(item_reports.size());
            report.terms.emplace_back(item_reports[0].terms[ti].first, mean);
            report.weights.emplace_back(item_reports[0].weights[ti]);
            report.total += item_reports[0].weights[ti].second * mean;
        }
        return report;
    }

    Waveform synthesize(const Waveform& ref) const {
        Tape tape;
        Matrix in = fx_.input_from_wave(ref);
        ModelOutputs out = model_->forward(tape, in);
        Matrix amp = tape.val(out.amp).to_matrix();
        Matrix phase = tape.val(out.phase).to_matrix();
        return synthesize_from_grids(amp, phase, static_cast<int64_t>(ref.samples.size()),
                                     ref.sample_rate);
    }

    // Maps an input feature matrix straight to audio (the synth CLI path).
    Waveform synthesize_from_mel(const Matrix& mel, int sample_rate) const {
        Tape tape;
        Matrix in = fx_.input_from_mel(mel);
        ModelOutputs out = model_->forward(tape, in);
        Matrix amp = tape.val(out.amp).to_matrix();
        Matrix phase = tape.val(out.phase).to_matrix();
        return synthesize_from_grids(amp, phase, std::nullopt, sample_rate);
    }

    Waveform synthesize_from_grids(const Matrix& amp, const Matrix& phase,
                                   std::optional<int64_t> length, int sample_rate) const {
        const int64_t frames = amp.cols;
        const int64_t full = cfg_.stft.n_fft + (frames - 1) * cfg_.stft.hop;
        const int64_t start = cfg_.stft.center ? cfg_.stft.n_fft / 2 : 0;
        const int64_t avail = full - start;
        std::optional<int64_t> ask = length;
        if (ask && *ask > avail) ask = avail;
        Waveform w = reconstruct(amp, phase, cfg_.stft, sample_rate, ask);
        if (length && static_cast<int64_t>(w.samples.size()) < *length)
            w.samples.resize(static_cast<std::size_t>(*length), 0.0);
        return w;
    }

    // Synthesizes every utterance (or the first max_utts) and scores it
    // against its reference. Parallel per utterance, aggregation in index
    // order, deterministic regardless of thread count.
    MetricReport evaluate(int64_t max_utts = 0) const {
        if (corpus_.empty()) throw std::logic_error("evaluate: trainer has no corpus");
        const int64_t n = max_utts > 0
                              ? std::min<int64_t>(max_utts, static_cast<int64_t>(corpus_.size()))
                              : static_cast<int64_t>(corpus_.size());
        MetricReport report;
        report.rows.resize(static_cast<std::size_t>(n));
        parallel_for(n, [&](int64_t i) {
            const Utterance& u = corpus_[static_cast<std::size_t>(i)];
            Waveform hyp = synthesize(u.wave);
            report.rows[static_cast<std::size_t>(i)] =
                evaluate_pair(u.id, u.wave, hyp, cfg_.pitch);
        });
        return report;
    }

    Checkpoint make_checkpoint() const {
        Checkpoint ck;
        ck.config_text = flatten_run_config(cfg_).dump();
        ck.step = static_cast<uint64_t>(step_);
        ck.rng = sample_rng_.state();
        ck.adam_t = static_cast<uint64_t>(opt_->step_count());
        for (Parameter* p : model_->parameters()) ck.params.emplace_back(p->name, p->value);
        const auto& m1 = opt_->moment1();
        const auto& m2 = opt_->moment2();
        const auto& ps = opt_->params();
        for (std::size_t i = 0; i < ps.size(); ++i) {
            ck.adam_m.emplace_back(ps[i]->name, m1[i]);
            ck.adam_v.emplace_back(ps[i]->name, m2[i]);
        }
        return ck;
    }

    void save(const std::string& path) const { save_checkpoint(path, make_checkpoint()); }

    // Restores parameters, optimizer state, step counter, and sampling RNG.
    void restore(const Checkpoint& ck) {
        auto find_tensor = [](const std::vector<std::pair<std::string, Tensor>>& list,
                              const std::string& name) -> const Tensor* {
            for (const auto& [n, t] : list)
                if (n == name) return &t;
            return nullptr;
        };
        auto& m1 = opt_->moment1();
        auto& m2 = opt_->moment2();
        const auto& ps = opt_->params();
        for (std::size_t i = 0; i < ps.size(); ++i) {
            Parameter* p = ps[i];
            const Tensor* v = find_tensor(ck.params, p->name);
            if (!v || v->shape != p->value.shape)
                throw std::runtime_error("restore: checkpoint is missing parameter '" + p->name +
                                         "' (or shape differs); architecture mismatch");
            p->value = *v;
            p->zero_grad();
            const Tensor* tm = find_tensor(ck.adam_m, p->name);
            const Tensor* tv = find_tensor(ck.adam_v, p->name);
            if (!tm || !tv)
                throw std::runtime_error("restore: checkpoint is missing optimizer state for '" +
                                         p->name + "'");
            m1[i] = *tm;
            m2[i] = *tv;
        }
        opt_->set_step_count(static_cast<int64_t>(ck.adam_t));
        step_ = static_cast<int64_t>(ck.step);
        sample_rng_.set_state(ck.rng);
    }

  private:
    struct UttFeatures {
        Matrix input;
        Matrix amp;
        Matrix phase;
    };

    RunConfig cfg_;
    Corpus corpus_;
    FeatureExtractor fx_;
    std::unique_ptr<Model> model_;
    std::unique_ptr<AdamW> opt_;
    Rng sample_rng_;
    int64_t step_ = 0;
    std::vector<UttFeatures> feats_;
};

// ----- ablation harness ------------------------------------------------------

struct MetricMeans {
    double mcd = 0.0;
    double mstft = 0.0;
    double vuv_f1 = 0.0;
    std::optional<double> pitch_rmse;
    double periodicity_rmse = 0.0;
};

inline MetricMeans report_means(const MetricReport& r) {
    MetricMeans m;
    if (r.rows.empty()) return m;
    double pitch_sum = 0.0;
    int64_t pitch_n = 0;
    for (const UtteranceMetrics& u : r.rows) {
        m.mcd += u.mcd;
        m.mstft += u.mstft;
        m.vuv_f1 += u.vuv_f1;
        m.periodicity_rmse += u.periodicity_rmse;
        if (u.pitch_rmse) {
            pitch_sum += *u.pitch_rmse;
            ++pitch_n;
        }
    }
    const double n = static_cast<double>(r.rows.size());
    m.mcd /= n;
    m.mstft /= n;
    m.vuv_f1 /= n;
    m.periodicity_rmse /= n;
    if (pitch_n > 0) m.pitch_rmse = pitch_sum / static_cast<double>(pitch_n);
    return m;
}

struct AblationCellResult {
    std::string topology;
    std::string source;
    std::string head;  // direct | atan | miri | mb
    uint64_t seed = 0;
    bool ok = false;
    std::string error;
    int64_t params = 0;
    double final_loss = 0.0;
    MetricMeans metrics;
};

// One training + evaluation per (topology, source, head, seed) cell. Cells are
// isolated (fresh corpus and model); failures are recorded per cell.
inline std::vector<AblationCellResult> run_ablation(
    const RunConfig& base,
    const std::function<void(const AblationCellResult&)>& on_cell = nullptr) {
    struct CellSpec {
        std::string topo, source, head;
        uint64_t seed;
    };
    std::vector<CellSpec> cells;
    for (uint64_t seed : base.ablate.seeds)
        for (const std::string& topo : base.ablate.topologies)
            for (const std::string& src : base.ablate.sources)
                for (const std::string& head : base.ablate.heads)
                    cells.push_back({topo, src, head, seed});

    std::vector<AblationCellResult> rows(cells.size());
    parallel_for(static_cast<int64_t>(cells.size()), [&](int64_t i) {
        const CellSpec& cell = cells[static_cast<std::size_t>(i)];
        AblationCellResult& row = rows[static_cast<std::size_t>(i)];
        row.topology = cell.topo;
        row.source = cell.source;
        row.head = cell.head;
        row.seed = cell.seed;
        try {
            RunConfig cfg = base;
            cfg.model.topology.kind = parse_topology(cell.topo);
            cfg.model.input_kind = parse_input_kind(cell.source);
            cfg.model.head.kind = parse_head(cell.head);
            cfg.model.head.mb_mode = cell.head == "mb" ? MbMode::detach : MbMode::off;
            cfg.model.seed = cell.seed;
            cfg.train.seed = cell.seed;
            Corpus corpus = cfg.corpus_kind == "wavdir"
                                ? load_wav_corpus(cfg.corpus_path, cfg.corpus.sample_rate)
                                : make_synthetic_corpus(cfg.corpus);
            Trainer tr(cfg, std::move(corpus));
            row.params = tr.model().param_count();
            LossReport last;
            for (int64_t s = 0; s < cfg.train.steps; ++s) last = tr.train_step();
            row.final_loss = last.total;
            row.metrics = report_means(tr.evaluate(cfg.ablate.eval_utterances));
            row.ok = true;
        } catch (const std::exception& e) {
            row.ok = false;
            row.error = e.what();
        }
        if (on_cell) on_cell(row);
    });
    return rows;
}

inline std::string ablation_csv(const std::vector<AblationCellResult>& rows) {
    auto fmt = [](double v) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.6f", v);
        return std::string(buf);
    };
    std::string out =
        "topology,source,head,seed,status,params,final_loss,mcd,mstft,vuv_f1,pitch_rmse,"
        "periodicity_rmse,error\n";
    for (const AblationCellResult& r : rows) {
        out += r.topology + ',' + r.source + ',' + r.head + ',' + std::to_string(r.seed) + ',';
        if (r.ok) {
            out += "ok," + std::to_string(r.params) + ',' + fmt(r.final_loss) + ',' +
                   fmt(r.metrics.mcd) + ',' + fmt(r.metrics.mstft) + ',' + fmt(r.metrics.vuv_f1) +
                   ',';
            if (r.metrics.pitch_rmse) out += fmt(*r.metrics.pitch_rmse);
            out += ',' + fmt(r.metrics.periodicity_rmse) + ',';
        } else {
            std::string msg = r.error;
            for (char& c : msg)
                if (c == ',' || c == '\n') c = ';';
            out += "failed,,,,,,,," + msg;
        }
        out += '\n';
    }
    return out;
}

}  // namespace mpvoc
