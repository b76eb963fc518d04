// mpvoc command-line tool: corpus generation, training, synthesis, evaluation,
// topology/source/head ablations, and spectrogram dumps.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mpvoc/mpvoc.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
};

mpvoc::FlatConfig load_flat_config(const CommonArgs& args) {
    mpvoc::FlatConfig flat;
    if (!args.config_path.empty()) flat = mpvoc::FlatConfig::parse_file(args.config_path);
    for (const std::string& kv : args.overrides) flat.apply_override(kv);
    return flat;
}

void write_manifest(const std::string& out_dir, const std::string& command,
                    const mpvoc::RunConfig& cfg) {
    json manifest;
    manifest["artifact_version"] = mpvoc::kVersion;
    manifest["command"] = command;
    manifest["seed"] = cfg.model.seed;
    json config = json::object();
    for (const auto& [k, v] : mpvoc::flatten_run_config(cfg).values()) config[k] = v;
    manifest["config"] = config;
    std::ofstream fs_out(out_dir + "/manifest.json");
    if (!fs_out) throw std::runtime_error("cannot write manifest to " + out_dir);
    fs_out << manifest.dump(2) << '\n';
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream fs_out(path, std::ios::binary);
    if (!fs_out) throw std::runtime_error("cannot open " + path);
    fs_out << text;
    if (!fs_out) throw std::runtime_error("write failed for " + path);
}

mpvoc::Corpus build_corpus(const mpvoc::RunConfig& cfg) {
    if (cfg.corpus_kind == "wavdir") {
        if (cfg.corpus_path.empty())
            throw std::runtime_error("corpus.kind=wavdir needs corpus.path");
        return mpvoc::load_wav_corpus(cfg.corpus_path, cfg.corpus.sample_rate);
    }
    return mpvoc::make_synthetic_corpus(cfg.corpus);
}

int cmd_gen_corpus(const CommonArgs& args) {
    mpvoc::RunConfig cfg = mpvoc::resolve_run_config(load_flat_config(args));
    fs::create_directories(args.out_dir);
    mpvoc::Corpus corpus = mpvoc::make_synthetic_corpus(cfg.corpus);
    std::string manifest_csv = "utt_id,path,sample_rate,duration_s,f0\n";
    for (const mpvoc::Utterance& u : corpus) {
        const std::string path = args.out_dir + "/" + u.id + ".wav";
        mpvoc::write_wav(path, u.wave, mpvoc::WavEncoding::float32);
        char row[256];
        std::snprintf(row, sizeof row, "%s,%s.wav,%d,%.6f,%.3f\n", u.id.c_str(), u.id.c_str(),
                      u.wave.sample_rate,
                      static_cast<double>(u.wave.samples.size()) / u.wave.sample_rate, u.f0);
        manifest_csv += row;
    }
    write_text(args.out_dir + "/corpus.csv", manifest_csv);
    write_manifest(args.out_dir, "gen-corpus", cfg);
    std::cout << "wrote " << corpus.size() << " utterances to " << args.out_dir << "\n";
    return 0;
}

int cmd_train(const CommonArgs& args) {
    mpvoc::RunConfig cfg = mpvoc::resolve_run_config(load_flat_config(args));
    fs::create_directories(args.out_dir);
    mpvoc::Trainer trainer(cfg, build_corpus(cfg));
    std::cout << "training " << mpvoc::topology_name(cfg.model.topology.kind) << "/"
              << mpvoc::input_kind_name(cfg.model.input_kind) << "/"
              << mpvoc::head_name(cfg.model.head.kind) << ", "
              << trainer.model().param_count() << " parameters, " << cfg.train.steps
              << " steps\n";

    std::string loss_csv;
    for (int64_t s = 0; s < cfg.train.steps; ++s) {
        mpvoc::LossReport rep = trainer.train_step();
        if (loss_csv.empty()) {
            loss_csv = "step";
            for (const auto& [name, _] : rep.terms) loss_csv += "," + name;
            loss_csv += ",total\n";
        }
        char num[40];
        loss_csv += std::to_string(trainer.step());
        for (const auto& [_, v] : rep.terms) {
            std::snprintf(num, sizeof num, ",%.8f", v);
            loss_csv += num;
        }
        std::snprintf(num, sizeof num, ",%.8f\n", rep.total);
        loss_csv += num;
        if (cfg.train.eval_interval > 0 && trainer.step() % cfg.train.eval_interval == 0) {
            mpvoc::MetricReport mr = trainer.evaluate();
            write_text(args.out_dir + "/metrics_step" + std::to_string(trainer.step()) + ".csv",
                       mpvoc::metric_report_csv(mr));
        }
        if (trainer.step() % 100 == 0 || trainer.step() == cfg.train.steps)
            std::cout << "step " << trainer.step() << " total " << rep.total << "\n";
    }
    write_text(args.out_dir + "/loss_log.csv", loss_csv);
    trainer.save(args.out_dir + "/checkpoint.ckpt");
    mpvoc::MetricReport mr = trainer.evaluate();
    write_text(args.out_dir + "/metrics.csv", mpvoc::metric_report_csv(mr));
    write_manifest(args.out_dir, "train", cfg);
    std::cout << "wrote checkpoint and metrics to " << args.out_dir << "\n";
    return 0;
}

mpvoc::RunConfig config_from_checkpoint(const mpvoc::Checkpoint& ck) {
    return mpvoc::resolve_run_config(mpvoc::FlatConfig::parse_text(ck.config_text));
}

int cmd_synth(const CommonArgs& args, const std::string& ckpt_path, const std::string& input_wav,
              const std::string& input_mel) {
    mpvoc::Checkpoint ck = mpvoc::load_checkpoint(ckpt_path);
    mpvoc::FlatConfig flat = mpvoc::FlatConfig::parse_text(ck.config_text);
    // overrides may adjust non-architecture settings (e.g. pitch band)
    for (const std::string& kv : args.overrides) flat.apply_override(kv);
    mpvoc::RunConfig cfg = mpvoc::resolve_run_config(flat);
    fs::create_directories(args.out_dir);
    mpvoc::Trainer runtime(cfg, mpvoc::Corpus{});
    runtime.restore(ck);

    std::vector<std::pair<std::string, mpvoc::Waveform>> outputs;
    if (!input_mel.empty()) {
        mpvoc::Matrix mel = mpvoc::load_matrix_text(input_mel);
        outputs.emplace_back(fs::path(input_mel).stem().string(),
                             runtime.synthesize_from_mel(mel, cfg.corpus.sample_rate));
    } else {
        std::vector<fs::path> files;
        if (fs::is_directory(input_wav)) {
            for (const auto& e : fs::directory_iterator(input_wav))
                if (e.is_regular_file() && e.path().extension() == ".wav")
                    files.push_back(e.path());
            std::sort(files.begin(), files.end());
            if (files.empty())
                throw std::runtime_error("synth: no .wav files in " + input_wav);
        } else {
            files.push_back(input_wav);
        }
        for (const auto& p : files) {
            mpvoc::Waveform ref = mpvoc::read_wav(p.string());
            outputs.emplace_back(p.stem().string(), runtime.synthesize(ref));
        }
    }
    for (const auto& [stem, wave] : outputs)
        mpvoc::write_wav(args.out_dir + "/" + stem + "_gen.wav", wave,
                         mpvoc::WavEncoding::float32);
    write_manifest(args.out_dir, "synth", cfg);
    std::cout << "wrote " << outputs.size() << " generated files to " << args.out_dir << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& ref_dir, const std::string& hyp_dir,
             const std::string& hyp_suffix) {
    mpvoc::PitchConfig pitch;
    if (!args.config_path.empty() || !args.overrides.empty())
        pitch = mpvoc::resolve_run_config(load_flat_config(args)).pitch;
    fs::create_directories(args.out_dir);

    std::vector<fs::path> refs;
    for (const auto& e : fs::directory_iterator(ref_dir))
        if (e.is_regular_file() && e.path().extension() == ".wav") refs.push_back(e.path());
    std::sort(refs.begin(), refs.end());
    if (refs.empty()) throw std::runtime_error("eval: no .wav files in " + ref_dir);

    mpvoc::MetricReport report;
    report.rows.resize(refs.size());
    mpvoc::parallel_for(static_cast<int64_t>(refs.size()), [&](int64_t i) {
        const fs::path& rp = refs[static_cast<std::size_t>(i)];
        const std::string id = rp.stem().string();
        fs::path hp = fs::path(hyp_dir) / (id + hyp_suffix + ".wav");
        if (!fs::exists(hp))
            throw std::runtime_error("eval: missing hypothesis file " + hp.string());
        mpvoc::Waveform ref = mpvoc::read_wav(rp.string());
        mpvoc::Waveform hyp = mpvoc::read_wav(hp.string());
        report.rows[static_cast<std::size_t>(i)] = mpvoc::evaluate_pair(id, ref, hyp, pitch);
    });
    write_text(args.out_dir + "/metrics.csv", mpvoc::metric_report_csv(report));
    std::cout << "wrote metrics for " << refs.size() << " utterances to " << args.out_dir
              << "/metrics.csv\n";
    return 0;
}

int cmd_ablate(const CommonArgs& args) {
    mpvoc::RunConfig cfg = mpvoc::resolve_run_config(load_flat_config(args));
    fs::create_directories(args.out_dir);
    std::vector<mpvoc::AblationCellResult> rows =
        mpvoc::run_ablation(cfg, [](const mpvoc::AblationCellResult& r) {
            std::cout << r.topology << "/" << r.source << "/" << r.head << " seed " << r.seed
                      << ": " << (r.ok ? "ok" : ("failed: " + r.error));
            if (r.ok)
                std::cout << " params " << r.params << " mstft " << r.metrics.mstft << " mcd "
                          << r.metrics.mcd;
            std::cout << std::endl;
        });
    write_text(args.out_dir + "/ablation.csv", mpvoc::ablation_csv(rows));
    write_manifest(args.out_dir, "ablate", cfg);
    std::cout << "wrote " << rows.size() << " rows to " << args.out_dir << "/ablation.csv\n";
    return 0;
}

int cmd_dump_spec(const CommonArgs& args, const std::string& input_wav,
                  const std::string& ckpt_path) {
    fs::create_directories(args.out_dir);
    mpvoc::Waveform wave = mpvoc::read_wav(input_wav);
    const std::string stem = fs::path(input_wav).stem().string();

    auto dump = [&](const std::string& name, const mpvoc::Matrix& mag) {
        const std::string path = args.out_dir + "/" + name + ".pgm";
        mpvoc::PgmInfo info = mpvoc::write_log_magnitude_pgm(path, mag);
        std::cout << path << ": " << info.width << " cols x " << info.height
                  << " rows, log-magnitude range [" << info.lo << ", " << info.hi << "]\n";
    };

    if (ckpt_path.empty()) {
        mpvoc::RunConfig cfg = mpvoc::resolve_run_config(load_flat_config(args));
        mpvoc::Matrix mag = mpvoc::polar_split(mpvoc::stft(wave, cfg.stft)).magnitude;
        dump(stem + "_spec", mag);
        return 0;
    }

    mpvoc::Checkpoint ck = mpvoc::load_checkpoint(ckpt_path);
    mpvoc::RunConfig cfg = config_from_checkpoint(ck);
    mpvoc::Trainer runtime(cfg, mpvoc::Corpus{});
    runtime.restore(ck);
    mpvoc::Matrix ref_mag = mpvoc::polar_split(mpvoc::stft(wave, cfg.stft)).magnitude;
    dump(stem + "_spec", ref_mag);

    mpvoc::FeatureExtractor fx = mpvoc::FeatureExtractor::build(cfg);
    mpvoc::Tape tape;
    mpvoc::ModelOutputs out = runtime.model().forward(tape, fx.input_from_wave(wave));
    dump(stem + "_amp", tape.val(out.amp).to_matrix());
    dump(stem + "_amp_m", tape.val(out.amp_m).to_matrix());
    if (out.amp_p.valid()) dump(stem + "_amp_p", tape.val(out.amp_p).to_matrix());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mpvoc: magnitude-phase vocoder laboratory"};
    app.require_subcommand(1);

    CommonArgs gen, train, synth, eval_args, ablate, dump;
    std::string ckpt_path, input_wav, input_mel, ref_dir, hyp_dir, hyp_suffix = "_gen";

    auto add_common = [](CLI::App* sub, CommonArgs& a, bool config_required) {
        sub->add_option("--config", a.config_path, "flat key = value config file")
            ->required(config_required);
        sub->add_option("--set", a.overrides, "override, key=value (repeatable)");
        sub->add_option("--out", a.out_dir, "output directory")->required();
    };

    CLI::App* sub_gen = app.add_subcommand("gen-corpus", "generate a synthetic corpus");
    add_common(sub_gen, gen, false);

    CLI::App* sub_train = app.add_subcommand("train", "train a vocoder variant");
    add_common(sub_train, train, false);

    CLI::App* sub_synth = app.add_subcommand("synth", "synthesize from a checkpoint");
    add_common(sub_synth, synth, false);
    sub_synth->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
    sub_synth->add_option("--input-wav", input_wav, "reference wav file or directory");
    sub_synth->add_option("--input-mel", input_mel, "mel matrix text file");

    CLI::App* sub_eval = app.add_subcommand("eval", "metric report for ref/hyp wav pairs");
    add_common(sub_eval, eval_args, false);
    sub_eval->add_option("--ref", ref_dir, "reference wav directory")->required();
    sub_eval->add_option("--hyp", hyp_dir, "hypothesis wav directory")->required();
    sub_eval->add_option("--hyp-suffix", hyp_suffix, "hypothesis filename suffix");

    CLI::App* sub_ablate = app.add_subcommand("ablate", "run the ablation grid");
    add_common(sub_ablate, ablate, false);

    CLI::App* sub_dump = app.add_subcommand("dump-spec", "write spectrogram PGM images");
    add_common(sub_dump, dump, false);
    sub_dump->add_option("--input-wav", input_wav, "wav file to analyze")->required();
    sub_dump->add_option("--checkpoint", ckpt_path, "optional checkpoint for model grids");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 1;
    }

    try {
        if (sub_gen->parsed()) return cmd_gen_corpus(gen);
        if (sub_train->parsed()) return cmd_train(train);
        if (sub_synth->parsed()) {
            if (input_wav.empty() == input_mel.empty())
                throw std::runtime_error("synth: give exactly one of --input-wav/--input-mel");
            return cmd_synth(synth, ckpt_path, input_wav, input_mel);
        }
        if (sub_eval->parsed()) return cmd_eval(eval_args, ref_dir, hyp_dir, hyp_suffix);
        if (sub_ablate->parsed()) return cmd_ablate(ablate);
        if (sub_dump->parsed()) return cmd_dump_spec(dump, input_wav, ckpt_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
