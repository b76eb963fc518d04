#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpvoc/corpus.hpp"
#include "mpvoc/losses.hpp"
#include "mpvoc/metrics.hpp"
#include "mpvoc/model.hpp"

namespace mpvoc {

namespace config_detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace config_detail

// Flat `key = value` configuration with dotted section prefixes. Unknown keys
// are rejected by name against the schema below.
class FlatConfig {
  public:
    static const std::set<std::string>& known_keys() {
        static const std::set<std::string> keys = {
            "corpus.kind", "corpus.path", "corpus.n_utterances", "corpus.duration_s",
            "corpus.sample_rate", "corpus.f0_min", "corpus.f0_max", "corpus.harmonics",
            "corpus.noise_floor", "corpus.seed",
            "stft.n_fft", "stft.hop", "stft.window", "stft.center",
            "mel.n_mels", "mel.f_min", "mel.f_max", "mel.area_normalize", "mel.clamp_prior",
            "mel.log_compress_prior",
            "model.input_kind", "model.width", "model.depth", "model.kernel", "model.expansion",
            "model.topology.kind", "model.topology.shared_layers",
            "model.head.kind", "model.head.mb_mode", "model.head.alpha_per_freq", "model.seed",
            "trainer.lr", "trainer.batch", "trainer.steps", "trainer.segment_frames",
            "trainer.seed", "trainer.eval_interval", "trainer.loss_preset",
            "trainer.weights.log_magnitude", "trainer.weights.phase_aw",
            "trainer.weights.stft_consistency", "trainer.weights.mel_l1",
            "trainer.weights.mrstft",
            "pitch.frame", "pitch.hop", "pitch.f_min", "pitch.f_max", "pitch.threshold",
            "ablate.topologies", "ablate.sources", "ablate.heads", "ablate.seeds",
            "ablate.eval_utterances",
        };
        return keys;
    }

    void set(const std::string& key, const std::string& value) {
        if (known_keys().count(key) == 0)
            throw std::invalid_argument("config: unknown key '" + key + "'");
        values_[key] = value;
    }

    // Parses a "key=value" override (the CLI --set form).
    void apply_override(const std::string& kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: override must look like key=value, got '" + kv +
                                        "'");
        set(config_detail::trim(kv.substr(0, eq)), config_detail::trim(kv.substr(eq + 1)));
    }

    static FlatConfig parse_text(const std::string& text) {
        FlatConfig cfg;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = config_detail::trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                            " is not 'key = value': '" + line + "'");
            cfg.set(config_detail::trim(line.substr(0, eq)),
                    config_detail::trim(line.substr(eq + 1)));
        }
        return cfg;
    }

    static FlatConfig parse_file(const std::string& path) {
        std::ifstream fs(path);
        if (!fs) throw std::runtime_error("config: cannot open " + path);
        std::stringstream ss;
        ss << fs.rdbuf();
        return parse_text(ss.str());
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& dflt) const {
        auto it = values_.find(key);
        return it == values_.end() ? dflt : it->second;
    }

    int64_t get_int(const std::string& key, int64_t dflt) const {
        auto it = values_.find(key);
        if (it == values_.end()) return dflt;
        try {
            std::size_t used = 0;
            const int64_t v = std::stoll(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument("trailing junk");
            return v;
        } catch (const std::exception&) {
            throw std::invalid_argument("config: key '" + key + "' needs an integer, got '" +
                                        it->second + "'");
        }
    }

    double get_double(const std::string& key, double dflt) const {
        auto it = values_.find(key);
        if (it == values_.end()) return dflt;
        try {
            std::size_t used = 0;
            const double v = std::stod(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument("trailing junk");
            return v;
        } catch (const std::exception&) {
            throw std::invalid_argument("config: key '" + key + "' needs a number, got '" +
                                        it->second + "'");
        }
    }

    bool get_bool(const std::string& key, bool dflt) const {
        auto it = values_.find(key);
        if (it == values_.end()) return dflt;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw std::invalid_argument("config: key '" + key + "' needs true/false, got '" +
                                    it->second + "'");
    }

    const std::map<std::string, std::string>& values() const { return values_; }

    // Canonical text form: sorted key = value lines.
    std::string dump() const {
        std::string out;
        for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
        return out;
    }

  private:
    std::map<std::string, std::string> values_;
};

// ----- enum parsing ---------------------------------------------------------

inline TopologyKind parse_topology(const std::string& s) {
    if (s == "shared") return TopologyKind::shared;
    if (s == "partially_shared") return TopologyKind::partially_shared;
    if (s == "shuffle") return TopologyKind::shuffle;
    if (s == "separate") return TopologyKind::separate;
    throw std::invalid_argument("config: unknown topology '" + s + "'");
}
inline const char* topology_name(TopologyKind k) {
    switch (k) {
        case TopologyKind::shared: return "shared";
        case TopologyKind::partially_shared: return "partially_shared";
        case TopologyKind::shuffle: return "shuffle";
        default: return "separate";
    }
}

inline HeadKind parse_head(const std::string& s) {
    if (s == "direct") return HeadKind::direct_phase;
    if (s == "atan") return HeadKind::atan_phase;
    if (s == "miri" || s == "mb") return HeadKind::miri;
    throw std::invalid_argument("config: unknown head '" + s + "'");
}
inline const char* head_name(HeadKind k) {
    switch (k) {
        case HeadKind::direct_phase: return "direct";
        case HeadKind::atan_phase: return "atan";
        default: return "miri";
    }
}

inline MbMode parse_mb_mode(const std::string& s) {
    if (s == "off") return MbMode::off;
    if (s == "detach") return MbMode::detach;
    if (s == "remove") return MbMode::remove;
    throw std::invalid_argument("config: unknown mb_mode '" + s + "'");
}
inline const char* mb_mode_name(MbMode m) {
    switch (m) {
        case MbMode::off: return "off";
        case MbMode::detach: return "detach";
        default: return "remove";
    }
}

inline InputKind parse_input_kind(const std::string& s) {
    if (s == "raw") return InputKind::raw;
    if (s == "prior") return InputKind::prior;
    throw std::invalid_argument("config: unknown input kind '" + s + "'");
}
inline const char* input_kind_name(InputKind k) {
    return k == InputKind::raw ? "raw" : "prior";
}

inline LossPreset parse_loss_preset(const std::string& s) {
    if (s == "vl_approx") return LossPreset::vl_approx;
    if (s == "al_approx") return LossPreset::al_approx;
    throw std::invalid_argument("config: unknown loss preset '" + s + "'");
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            cur = config_detail::trim(cur);
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    cur = config_detail::trim(cur);
    if (!cur.empty()) out.push_back(cur);
    return out;
}

// ----- resolved run configuration -------------------------------------------

struct MelSettings {
    int64_t n_mels = 100;
    double f_min = 0.0;
    double f_max = 0.0;  // 0 -> sample_rate / 2
    bool area_normalize = false;
    bool clamp_prior = true;
    bool log_compress_prior = true;
};

struct TrainSettings {
    double lr = 5e-4;
    int64_t batch = 4;
    int64_t steps = 2000;
    int64_t segment_frames = 64;
    uint64_t seed = 7;
    int64_t eval_interval = 0;
    LossPreset preset = LossPreset::al_approx;
    LossWeights weights = default_weights(LossPreset::al_approx);
};

struct AblateSettings {
    std::vector<std::string> topologies = {"separate", "shared"};
    std::vector<std::string> sources = {"raw", "prior"};
    std::vector<std::string> heads = {"direct", "miri"};
    std::vector<uint64_t> seeds = {1, 2, 3};
    int64_t eval_utterances = 0;  // 0 -> all
};

struct RunConfig {
    std::string corpus_kind = "synthetic";
    std::string corpus_path;
    SyntheticCorpusSpec corpus;
    StftConfig stft;
    MelSettings mel;
    ModelConfig model;
    TrainSettings train;
    PitchConfig pitch;
    AblateSettings ablate;

    double mel_f_max() const {
        return mel.f_max > 0.0 ? mel.f_max : corpus.sample_rate / 2.0;
    }
};

inline RunConfig resolve_run_config(const FlatConfig& f) {
    RunConfig r;
    r.corpus_kind = f.get_string("corpus.kind", "synthetic");
    if (r.corpus_kind != "synthetic" && r.corpus_kind != "wavdir")
        throw std::invalid_argument("config: corpus.kind must be synthetic or wavdir");
    r.corpus_path = f.get_string("corpus.path", "");
    r.corpus.n_utterances = f.get_int("corpus.n_utterances", 50);
    r.corpus.duration_s = f.get_double("corpus.duration_s", 1.0);
    r.corpus.sample_rate = static_cast<int>(f.get_int("corpus.sample_rate", 16000));
    r.corpus.f0_min = f.get_double("corpus.f0_min", 90.0);
    r.corpus.f0_max = f.get_double("corpus.f0_max", 300.0);
    r.corpus.harmonics = f.get_int("corpus.harmonics", 10);
    r.corpus.noise_floor = f.get_double("corpus.noise_floor", 1e-3);
    r.corpus.seed = static_cast<uint64_t>(f.get_int("corpus.seed", 1234));

    r.stft.n_fft = f.get_int("stft.n_fft", 1024);
    r.stft.hop = f.get_int("stft.hop", 256);
    const std::string win = f.get_string("stft.window", "hann");
    if (win == "hann") r.stft.window = WindowKind::hann;
    else if (win == "rect") r.stft.window = WindowKind::rect;
    else throw std::invalid_argument("config: unknown window '" + win + "'");
    r.stft.center = f.get_bool("stft.center", true);

    r.mel.n_mels = f.get_int("mel.n_mels", 100);
    r.mel.f_min = f.get_double("mel.f_min", 0.0);
    r.mel.f_max = f.get_double("mel.f_max", 0.0);
    r.mel.area_normalize = f.get_bool("mel.area_normalize", false);
    r.mel.clamp_prior = f.get_bool("mel.clamp_prior", true);
    r.mel.log_compress_prior = f.get_bool("mel.log_compress_prior", true);

    r.model.input_kind = parse_input_kind(f.get_string("model.input_kind", "raw"));
    r.model.stft = r.stft;
    r.model.n_mels = r.mel.n_mels;
    r.model.block.channels = f.get_int("model.width", 48);
    r.model.topology.depth = f.get_int("model.depth", 4);
    r.model.block.depthwise_kernel = f.get_int("model.kernel", 7);
    r.model.block.expansion = f.get_int("model.expansion", 3);
    r.model.topology.kind = parse_topology(f.get_string("model.topology.kind", "separate"));
    r.model.topology.shared_layers = f.get_int("model.topology.shared_layers", 2);
    r.model.head.kind = parse_head(f.get_string("model.head.kind", "direct"));
    if (f.get_string("model.head.kind", "direct") == "mb" && !f.has("model.head.mb_mode"))
        r.model.head.mb_mode = MbMode::detach;
    if (f.has("model.head.mb_mode"))
        r.model.head.mb_mode = parse_mb_mode(f.get_string("model.head.mb_mode", "off"));
    r.model.head.alpha_per_freq = f.get_bool("model.head.alpha_per_freq", false);
    r.model.seed = static_cast<uint64_t>(f.get_int("model.seed", 1));

    r.train.lr = f.get_double("trainer.lr", 5e-4);
    r.train.batch = f.get_int("trainer.batch", 4);
    r.train.steps = f.get_int("trainer.steps", 2000);
    r.train.segment_frames = f.get_int("trainer.segment_frames", 64);
    r.train.seed = static_cast<uint64_t>(f.get_int("trainer.seed", 7));
    r.train.eval_interval = f.get_int("trainer.eval_interval", 0);
    r.train.preset = parse_loss_preset(f.get_string("trainer.loss_preset", "al_approx"));
    r.train.weights = default_weights(r.train.preset);
    r.train.weights.log_magnitude =
        f.get_double("trainer.weights.log_magnitude", r.train.weights.log_magnitude);
    r.train.weights.phase_aw = f.get_double("trainer.weights.phase_aw", r.train.weights.phase_aw);
    r.train.weights.stft_consistency =
        f.get_double("trainer.weights.stft_consistency", r.train.weights.stft_consistency);
    r.train.weights.mel_l1 = f.get_double("trainer.weights.mel_l1", r.train.weights.mel_l1);
    r.train.weights.mrstft = f.get_double("trainer.weights.mrstft", r.train.weights.mrstft);

    r.pitch.frame = f.get_int("pitch.frame", 1024);
    r.pitch.hop = f.get_int("pitch.hop", 256);
    r.pitch.f_min = f.get_double("pitch.f_min", 50.0);
    r.pitch.f_max = f.get_double("pitch.f_max", 550.0);
    r.pitch.voicing_threshold = f.get_double("pitch.threshold", 0.45);

    if (f.has("ablate.topologies"))
        r.ablate.topologies = split_list(f.get_string("ablate.topologies", ""));
    if (f.has("ablate.sources")) r.ablate.sources = split_list(f.get_string("ablate.sources", ""));
    if (f.has("ablate.heads")) r.ablate.heads = split_list(f.get_string("ablate.heads", ""));
    if (f.has("ablate.seeds")) {
        r.ablate.seeds.clear();
        for (const auto& s : split_list(f.get_string("ablate.seeds", "")))
            r.ablate.seeds.push_back(static_cast<uint64_t>(std::stoll(s)));
    }
    r.ablate.eval_utterances = f.get_int("ablate.eval_utterances", 0);

    // Fail early on invalid combinations.
    r.stft.validate();
    r.model.validate();
    if (r.train.batch < 1) throw std::invalid_argument("config: trainer.batch must be >= 1");
    if (r.train.steps < 1) throw std::invalid_argument("config: trainer.steps must be >= 1");
    if (r.train.segment_frames < 8)
        throw std::invalid_argument("config: trainer.segment_frames must be >= 8");
    if (r.train.lr < 0.0) throw std::invalid_argument("config: trainer.lr must be >= 0");
    if (r.corpus_kind == "synthetic") r.corpus.validate();
    return r;
}

// Canonical flat echo of a resolved configuration (stored in checkpoints and
// run manifests).
inline FlatConfig flatten_run_config(const RunConfig& r) {
    FlatConfig f;
    auto set_int = [&](const std::string& k, int64_t v) { f.set(k, std::to_string(v)); };
    auto set_dbl = [&](const std::string& k, double v) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        f.set(k, buf);
    };
    auto set_bool = [&](const std::string& k, bool v) { f.set(k, v ? "true" : "false"); };

    f.set("corpus.kind", r.corpus_kind);
    if (!r.corpus_path.empty()) f.set("corpus.path", r.corpus_path);
    set_int("corpus.n_utterances", r.corpus.n_utterances);
    set_dbl("corpus.duration_s", r.corpus.duration_s);
    set_int("corpus.sample_rate", r.corpus.sample_rate);
    set_dbl("corpus.f0_min", r.corpus.f0_min);
    set_dbl("corpus.f0_max", r.corpus.f0_max);
    set_int("corpus.harmonics", r.corpus.harmonics);
    set_dbl("corpus.noise_floor", r.corpus.noise_floor);
    set_int("corpus.seed", static_cast<int64_t>(r.corpus.seed));

    set_int("stft.n_fft", r.stft.n_fft);
    set_int("stft.hop", r.stft.hop);
    f.set("stft.window", r.stft.window == WindowKind::hann ? "hann" : "rect");
    set_bool("stft.center", r.stft.center);

    set_int("mel.n_mels", r.mel.n_mels);
    set_dbl("mel.f_min", r.mel.f_min);
    set_dbl("mel.f_max", r.mel.f_max);
    set_bool("mel.area_normalize", r.mel.area_normalize);
    set_bool("mel.clamp_prior", r.mel.clamp_prior);
    set_bool("mel.log_compress_prior", r.mel.log_compress_prior);

    f.set("model.input_kind", input_kind_name(r.model.input_kind));
    set_int("model.width", r.model.block.channels);
    set_int("model.depth", r.model.topology.depth);
    set_int("model.kernel", r.model.block.depthwise_kernel);
    set_int("model.expansion", r.model.block.expansion);
    f.set("model.topology.kind", topology_name(r.model.topology.kind));
    set_int("model.topology.shared_layers", r.model.topology.shared_layers);
    f.set("model.head.kind", head_name(r.model.head.kind));
    f.set("model.head.mb_mode", mb_mode_name(r.model.head.mb_mode));
    set_bool("model.head.alpha_per_freq", r.model.head.alpha_per_freq);
    set_int("model.seed", static_cast<int64_t>(r.model.seed));

    set_dbl("trainer.lr", r.train.lr);
    set_int("trainer.batch", r.train.batch);
    set_int("trainer.steps", r.train.steps);
    set_int("trainer.segment_frames", r.train.segment_frames);
    set_int("trainer.seed", static_cast<int64_t>(r.train.seed));
    set_int("trainer.eval_interval", r.train.eval_interval);
    f.set("trainer.loss_preset", loss_preset_name(r.train.preset));
    set_dbl("trainer.weights.log_magnitude", r.train.weights.log_magnitude);
    set_dbl("trainer.weights.phase_aw", r.train.weights.phase_aw);
    set_dbl("trainer.weights.stft_consistency", r.train.weights.stft_consistency);
    set_dbl("trainer.weights.mel_l1", r.train.weights.mel_l1);
    set_dbl("trainer.weights.mrstft", r.train.weights.mrstft);

    set_int("pitch.frame", r.pitch.frame);
    set_int("pitch.hop", r.pitch.hop);
    set_dbl("pitch.f_min", r.pitch.f_min);
    set_dbl("pitch.f_max", r.pitch.f_max);
    set_dbl("pitch.threshold", r.pitch.voicing_threshold);
    return f;
}

}  // namespace mpvoc
