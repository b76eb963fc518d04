#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "mpvoc/signal.hpp"
#include "mpvoc/wav.hpp"

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args, const std::string& log_name = "cli_log.txt") {
    const std::string log = (fs::temp_directory_path() / log_name).string();
    const std::string cmd = std::string(MPVOC_CLI_PATH) + " " + args + " >" + log + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_tiny_config(const fs::path& path) {
    std::ofstream f(path);
    f << "# tiny end-to-end pipeline settings\n"
      << "corpus.n_utterances = 3\n"
      << "corpus.duration_s = 0.25\n"
      << "corpus.sample_rate = 8000\n"
      << "corpus.f0_min = 130\n"
      << "corpus.f0_max = 200\n"
      << "corpus.harmonics = 5\n"
      << "stft.n_fft = 128\n"
      << "stft.hop = 32\n"
      << "mel.n_mels = 16\n"
      << "model.width = 8\n"
      << "model.depth = 2\n"
      << "model.kernel = 3\n"
      << "trainer.batch = 2\n"
      << "trainer.steps = 5\n"
      << "trainer.segment_frames = 12\n"
      << "pitch.frame = 512\n"
      << "pitch.hop = 128\n";
}

struct Pgm {
    int64_t width = 0;
    int64_t height = 0;
    std::vector<unsigned char> pixels;
};

Pgm read_pgm(const fs::path& path) {
    std::string bytes = slurp(path);
    REQUIRE(bytes.rfind("P5\n", 0) == 0);
    std::size_t pos = 3;
    auto read_token = [&]() {
        std::string tok;
        while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])))
            tok.push_back(bytes[pos++]);
        return tok;
    };
    Pgm img;
    img.width = std::stoll(read_token());
    img.height = std::stoll(read_token());
    REQUIRE(read_token() == "255");
    ++pos;  // single whitespace after maxval
    REQUIRE(bytes.size() - pos == static_cast<std::size_t>(img.width * img.height));
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
    return img;
}

}  // namespace

TEST_CASE("unknown subcommand exits 1 with usage text") {
    REQUIRE(run_cli("frobnicate", "cli_unknown.txt") == 1);
    const std::string log = slurp(fs::temp_directory_path() / "cli_unknown.txt");
    REQUIRE(log.find("Usage") != std::string::npos);
}

TEST_CASE("unknown config keys are rejected by name with exit 2") {
    const fs::path out = fresh_dir("mpvoc_cli_badkey");
    REQUIRE(run_cli("gen-corpus --out " + out.string() + " --set nonsense.key=1",
                    "cli_badkey.txt") == 2);
    const std::string log = slurp(fs::temp_directory_path() / "cli_badkey.txt");
    REQUIRE(log.find("nonsense.key") != std::string::npos);
}

TEST_CASE("gen-corpus, train, synth, eval pipeline completes with exit 0") {
    const fs::path base = fresh_dir("mpvoc_cli_pipeline");
    const fs::path cfg = base / "config.txt";
    write_tiny_config(cfg);

    const fs::path corpus_dir = base / "corpus";
    REQUIRE(run_cli("gen-corpus --config " + cfg.string() + " --out " + corpus_dir.string()) ==
            0);
    REQUIRE(fs::exists(corpus_dir / "utt_0000.wav"));
    REQUIRE(fs::exists(corpus_dir / "corpus.csv"));
    REQUIRE(fs::exists(corpus_dir / "manifest.json"));

    const fs::path train_dir = base / "train";
    REQUIRE(run_cli("train --config " + cfg.string() + " --out " + train_dir.string() +
                    " --set trainer.lr=5e-4") == 0);
    REQUIRE(fs::exists(train_dir / "checkpoint.ckpt"));
    REQUIRE(fs::exists(train_dir / "loss_log.csv"));
    REQUIRE(fs::exists(train_dir / "metrics.csv"));

    // the override lands in the manifest
    const nlohmann::json manifest = nlohmann::json::parse(slurp(train_dir / "manifest.json"));
    REQUIRE(manifest["artifact_version"].is_string());
    REQUIRE(std::stod(manifest["config"]["trainer.lr"].get<std::string>()) == 5e-4);

    const fs::path synth_dir = base / "synth";
    REQUIRE(run_cli("synth --checkpoint " + (train_dir / "checkpoint.ckpt").string() +
                    " --input-wav " + corpus_dir.string() + " --out " + synth_dir.string()) ==
            0);
    REQUIRE(fs::exists(synth_dir / "utt_0000_gen.wav"));

    const fs::path eval_dir = base / "eval";
    REQUIRE(run_cli("eval --ref " + corpus_dir.string() + " --hyp " + synth_dir.string() +
                    " --out " + eval_dir.string()) == 0);
    const std::string csv = slurp(eval_dir / "metrics.csv");
    REQUIRE(csv.rfind("utt_id,mcd,mstft,vuv_f1,pitch_rmse,periodicity_rmse\n", 0) == 0);
    REQUIRE(csv.find("MEAN,") != std::string::npos);
    REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 5);  // header + 3 rows + MEAN

    // reruns are byte-identical
    const fs::path eval_dir2 = base / "eval2";
    REQUIRE(run_cli("eval --ref " + corpus_dir.string() + " --hyp " + synth_dir.string() +
                    " --out " + eval_dir2.string()) == 0);
    REQUIRE(slurp(eval_dir2 / "metrics.csv") == csv);

    // missing hypothesis file is a runtime failure with a clear message
    fs::remove(synth_dir / "utt_0001_gen.wav");
    REQUIRE(run_cli("eval --ref " + corpus_dir.string() + " --hyp " + synth_dir.string() +
                        " --out " + (base / "eval3").string(),
                    "cli_missing.txt") == 2);
    REQUIRE(slurp(fs::temp_directory_path() / "cli_missing.txt").find("missing") !=
            std::string::npos);
}

TEST_CASE("dump-spec writes PGMs with the documented geometry") {
    const fs::path base = fresh_dir("mpvoc_cli_dump");

    // all-zero waveform -> uniform image
    mpvoc::Waveform silent;
    silent.sample_rate = 16000;
    silent.samples.assign(4096, 0.0);
    mpvoc::write_wav((base / "silent.wav").string(), silent, mpvoc::WavEncoding::float32);
    REQUIRE(run_cli("dump-spec --input-wav " + (base / "silent.wav").string() + " --out " +
                    (base / "out1").string()) == 0);
    Pgm uniform = read_pgm(base / "out1" / "silent_spec.pgm");
    for (unsigned char p : uniform.pixels) REQUIRE(p == uniform.pixels[0]);

    // 440 Hz sine -> one bright band at round(440 * 1024 / 16000) = 28
    mpvoc::Waveform sine;
    sine.sample_rate = 16000;
    sine.samples.resize(16000);
    for (std::size_t i = 0; i < sine.samples.size(); ++i)
        sine.samples[i] = 0.7 * std::sin(2.0 * mpvoc::kPi * 440.0 * static_cast<double>(i) / 16000.0);
    mpvoc::write_wav((base / "sine.wav").string(), sine, mpvoc::WavEncoding::float32);
    REQUIRE(run_cli("dump-spec --input-wav " + (base / "sine.wav").string() + " --out " +
                    (base / "out2").string()) == 0);
    Pgm img = read_pgm(base / "out2" / "sine_spec.pgm");
    // dimensions: T columns x F rows for the default 1024/256 analysis
    REQUIRE(img.height == 513);
    REQUIRE(img.width == 1 + 16000 / 256);
    std::vector<int64_t> row_sum(static_cast<std::size_t>(img.height), 0);
    for (int64_t r = 0; r < img.height; ++r)
        for (int64_t c = 0; c < img.width; ++c)
            row_sum[static_cast<std::size_t>(r)] +=
                img.pixels[static_cast<std::size_t>(r * img.width + c)];
    const int64_t brightest =
        std::max_element(row_sum.begin(), row_sum.end()) - row_sum.begin();
    REQUIRE(brightest == 28);

    // rerun gives identical bytes
    REQUIRE(run_cli("dump-spec --input-wav " + (base / "sine.wav").string() + " --out " +
                    (base / "out3").string()) == 0);
    REQUIRE(slurp(base / "out3" / "sine_spec.pgm") == slurp(base / "out2" / "sine_spec.pgm"));
}

TEST_CASE("dump-spec with a MiRi checkpoint emits the three intermediate grids") {
    const fs::path base = fresh_dir("mpvoc_cli_dump_model");
    const fs::path cfg = base / "config.txt";
    write_tiny_config(cfg);
    {
        std::ofstream f(cfg, std::ios::app);
        f << "model.head.kind = miri\n";
    }
    const fs::path train_dir = base / "train";
    REQUIRE(run_cli("train --config " + cfg.string() + " --out " + train_dir.string() +
                    " --set trainer.steps=2") == 0);

    mpvoc::Waveform tone;
    tone.sample_rate = 8000;
    tone.samples.resize(2000);
    for (std::size_t i = 0; i < tone.samples.size(); ++i)
        tone.samples[i] = 0.5 * std::sin(2.0 * mpvoc::kPi * 150.0 * static_cast<double>(i) / 8000.0);
    mpvoc::write_wav((base / "tone.wav").string(), tone, mpvoc::WavEncoding::float32);

    REQUIRE(run_cli("dump-spec --input-wav " + (base / "tone.wav").string() + " --checkpoint " +
                    (train_dir / "checkpoint.ckpt").string() + " --out " +
                    (base / "grids").string()) == 0);
    REQUIRE(fs::exists(base / "grids" / "tone_spec.pgm"));
    REQUIRE(fs::exists(base / "grids" / "tone_amp.pgm"));
    REQUIRE(fs::exists(base / "grids" / "tone_amp_m.pgm"));
    REQUIRE(fs::exists(base / "grids" / "tone_amp_p.pgm"));
    Pgm amp = read_pgm(base / "grids" / "tone_amp.pgm");
    REQUIRE(amp.height == 65);  // 128/2 + 1
}
