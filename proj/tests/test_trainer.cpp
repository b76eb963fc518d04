#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mpvoc/checkpoint.hpp"
#include "mpvoc/corpus.hpp"
#include "mpvoc/metrics.hpp"
#include "mpvoc/trainer.hpp"

using namespace mpvoc;

namespace {

RunConfig tiny_run_config() {
    RunConfig cfg;
    cfg.corpus.n_utterances = 3;
    cfg.corpus.duration_s = 0.25;
    cfg.corpus.sample_rate = 8000;
    cfg.corpus.f0_min = 120.0;
    cfg.corpus.f0_max = 220.0;
    cfg.corpus.harmonics = 6;
    cfg.corpus.noise_floor = 1e-3;
    cfg.corpus.seed = 5;
    cfg.stft.n_fft = 128;
    cfg.stft.hop = 32;
    cfg.mel.n_mels = 16;
    cfg.model.stft = cfg.stft;
    cfg.model.n_mels = 16;
    cfg.model.block.channels = 8;
    cfg.model.block.depthwise_kernel = 3;
    cfg.model.topology.depth = 2;
    cfg.model.topology.kind = TopologyKind::separate;
    cfg.model.head.kind = HeadKind::direct_phase;
    cfg.model.seed = 3;
    cfg.train.lr = 1e-3;
    cfg.train.batch = 2;
    cfg.train.steps = 10;
    cfg.train.segment_frames = 12;
    cfg.train.seed = 11;
    cfg.train.preset = LossPreset::al_approx;
    cfg.train.weights = default_weights(LossPreset::al_approx);
    cfg.pitch.frame = 512;
    cfg.pitch.hop = 128;
    return cfg;
}

}  // namespace

TEST_CASE("synthetic corpus is deterministic per seed") {
    SyntheticCorpusSpec spec;
    spec.n_utterances = 4;
    spec.duration_s = 0.2;
    spec.seed = 99;
    Corpus a = make_synthetic_corpus(spec);
    Corpus b = make_synthetic_corpus(spec);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].id == b[i].id);
        REQUIRE(a[i].f0 == b[i].f0);
        REQUIRE(a[i].wave.samples == b[i].wave.samples);
    }
    spec.seed = 100;
    Corpus c = make_synthetic_corpus(spec);
    REQUIRE(a[0].wave.samples != c[0].wave.samples);
}

TEST_CASE("pitch tracking recovers the specified f0 of synthetic utterances") {
    SyntheticCorpusSpec spec;
    spec.n_utterances = 5;
    spec.duration_s = 0.5;
    spec.f0_min = 150.0;
    spec.f0_max = 250.0;
    spec.seed = 17;
    for (const Utterance& u : make_synthetic_corpus(spec)) {
        PitchTrack track = pitch_track(u.wave);
        std::vector<double> voiced;
        for (std::size_t i = 0; i < track.f0.size(); ++i)
            if (track.voiced[i]) voiced.push_back(track.f0[i]);
        REQUIRE(voiced.size() >= track.f0.size() / 2);
        std::sort(voiced.begin(), voiced.end());
        const double med = voiced[voiced.size() / 2];
        INFO("utterance " << u.id << " f0 " << u.f0);
        REQUIRE(std::abs(med - u.f0) < 3.0);
    }
}

TEST_CASE("a noise-free single-harmonic utterance is a pure sine") {
    SyntheticCorpusSpec spec;
    spec.n_utterances = 1;
    spec.duration_s = 0.5;
    spec.harmonics = 1;
    spec.noise_floor = 0.0;
    spec.f0_min = spec.f0_max = 200.0;
    spec.seed = 2;
    Corpus corpus = make_synthetic_corpus(spec);
    const Waveform& w = corpus[0].wave;
    StftConfig cfg;
    cfg.n_fft = 1024;
    cfg.hop = 256;
    Matrix mag = polar_split(stft(w, cfg)).magnitude;
    const int64_t expect_bin =
        static_cast<int64_t>(std::lround(200.0 * 1024.0 / 16000.0));
    for (int64_t t = 2; t < mag.cols - 2; ++t) {
        int64_t argmax = 0;
        double best = -1.0;
        for (int64_t f = 0; f < mag.rows; ++f)
            if (mag(f, t) > best) {
                best = mag(f, t);
                argmax = f;
            }
        REQUIRE(argmax == expect_bin);
    }
}

TEST_CASE("training is bit-deterministic for a fixed seed and config") {
    RunConfig cfg = tiny_run_config();
    Corpus corpus = make_synthetic_corpus(cfg.corpus);
    Trainer a(cfg, corpus);
    Trainer b(cfg, corpus);
    for (int s = 0; s < 5; ++s) {
        LossReport ra = a.train_step();
        LossReport rb = b.train_step();
        REQUIRE(ra.total == rb.total);
        for (std::size_t i = 0; i < ra.terms.size(); ++i)
            REQUIRE(ra.terms[i].second == rb.terms[i].second);
    }
}

TEST_CASE("overfitting a singleton halves the loss") {
    RunConfig cfg = tiny_run_config();
    cfg.corpus.n_utterances = 1;
    cfg.corpus.duration_s = 0.5;
    cfg.train.batch = 2;
    cfg.train.lr = 2e-3;
    Trainer tr(cfg, make_synthetic_corpus(cfg.corpus));
    double initial = 0.0, final_loss = 0.0;
    for (int s = 0; s < 100; ++s) {
        const LossReport rep = tr.train_step();
        if (s == 0) initial = rep.total;
        final_loss = rep.total;
    }
    INFO("initial " << initial << " final " << final_loss);
    REQUIRE(final_loss < 0.5 * initial);
}

TEST_CASE("lr = 0 freezes parameters") {
    RunConfig cfg = tiny_run_config();
    cfg.train.lr = 0.0;
    Trainer tr(cfg, make_synthetic_corpus(cfg.corpus));
    std::vector<std::vector<double>> before;
    for (Parameter* p : tr.model().parameters()) before.push_back(p->value.data);
    for (int s = 0; s < 3; ++s) tr.train_step();
    std::size_t i = 0;
    for (Parameter* p : tr.model().parameters()) REQUIRE(p->value.data == before[i++]);
}

TEST_CASE("checkpoint save -> load -> save is byte identical") {
    namespace fs = std::filesystem;
    RunConfig cfg = tiny_run_config();
    Trainer tr(cfg, make_synthetic_corpus(cfg.corpus));
    for (int s = 0; s < 3; ++s) tr.train_step();
    const fs::path dir = fs::temp_directory_path() / "mpvoc_ckpt_test";
    fs::create_directories(dir);
    const std::string p1 = (dir / "a.ckpt").string();
    const std::string p2 = (dir / "b.ckpt").string();
    tr.save(p1);
    Checkpoint ck = load_checkpoint(p1);
    save_checkpoint(p2, ck);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(b1 == b2);
    REQUIRE(!b1.empty());
}

TEST_CASE("resume from checkpoint matches an uninterrupted run bit for bit") {
    RunConfig cfg = tiny_run_config();
    Corpus corpus = make_synthetic_corpus(cfg.corpus);

    Trainer continuous(cfg, corpus);
    for (int s = 0; s < 4; ++s) continuous.train_step();
    namespace fs = std::filesystem;
    const std::string path =
        (fs::temp_directory_path() / "mpvoc_resume_test.ckpt").string();
    continuous.save(path);
    std::vector<double> expected;
    for (int s = 0; s < 10; ++s) expected.push_back(continuous.train_step().total);

    Trainer resumed(cfg, corpus);
    resumed.restore(load_checkpoint(path));
    REQUIRE(resumed.step() == 4);
    for (int s = 0; s < 10; ++s)
        REQUIRE(resumed.train_step().total == expected[static_cast<std::size_t>(s)]);
}

TEST_CASE("checkpoint layout of a two-parameter toy model decodes by hand") {
    namespace fs = std::filesystem;
    Checkpoint ck;
    ck.config_text = "k = v\n";
    ck.step = 7;
    ck.rng.s[0] = 1;
    ck.rng.s[1] = 2;
    ck.rng.s[2] = 3;
    ck.rng.s[3] = 4;
    ck.rng.has_spare = 0;
    ck.rng.spare = 0.0;
    ck.adam_t = 7;
    Tensor w({2});
    w.data = {1.5, -2.5};
    Tensor b({1});
    b.data = {0.25};
    ck.params = {{"w", w}, {"b", b}};
    ck.adam_m = {{"w", Tensor({2})}, {"b", Tensor({1})}};
    ck.adam_v = {{"w", Tensor({2})}, {"b", Tensor({1})}};
    const std::string path = (fs::temp_directory_path() / "mpvoc_layout.ckpt").string();
    save_checkpoint(path, ck);

    std::ifstream f(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    REQUIRE(bytes.substr(0, 4) == "MPVC");
    auto u32_at = [&](std::size_t off) {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<unsigned char>(bytes[off + i])) << (8 * i);
        return v;
    };
    REQUIRE(u32_at(4) == kCheckpointVersion);
    // first record: name length, "meta/config", payload length, payload
    std::size_t off = 8;
    const uint32_t name_len = u32_at(off);
    REQUIRE(name_len == 11);
    REQUIRE(bytes.substr(off + 4, name_len) == "meta/config");
    // trailing CRC validates over everything before it
    const uint32_t stored = u32_at(bytes.size() - 4);
    REQUIRE(stored == crc32(reinterpret_cast<const unsigned char*>(bytes.data()),
                            bytes.size() - 4));
    // and the parsed form matches what was written
    Checkpoint back = load_checkpoint(path);
    REQUIRE(back.step == 7);
    REQUIRE(back.params.size() == 2);
    REQUIRE(back.params[0].first == "w");
    REQUIRE(back.params[0].second.data == w.data);
    REQUIRE(back.params[1].second.data == b.data);
}

TEST_CASE("corrupted and version-mismatched checkpoints are rejected") {
    namespace fs = std::filesystem;
    RunConfig cfg = tiny_run_config();
    Trainer tr(cfg, make_synthetic_corpus(cfg.corpus));
    const std::string path = (fs::temp_directory_path() / "mpvoc_corrupt.ckpt").string();
    tr.save(path);

    std::ifstream f(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    f.close();

    std::string flipped = bytes;
    flipped[bytes.size() / 2] = static_cast<char>(flipped[bytes.size() / 2] ^ 0x5a);
    const std::string bad = (fs::temp_directory_path() / "mpvoc_corrupt_bad.ckpt").string();
    {
        std::ofstream o(bad, std::ios::binary);
        o << flipped;
    }
    REQUIRE_THROWS_WITH(load_checkpoint(bad), Catch::Matchers::ContainsSubstring("corrupted"));

    std::string wrong_version = bytes;
    wrong_version[4] = 9;  // version field
    // keep the CRC consistent so the version check itself fires
    const uint32_t crc = crc32(reinterpret_cast<const unsigned char*>(wrong_version.data()),
                               wrong_version.size() - 4);
    for (int i = 0; i < 4; ++i)
        wrong_version[wrong_version.size() - 4 + static_cast<std::size_t>(i)] =
            static_cast<char>((crc >> (8 * i)) & 0xff);
    const std::string vbad = (fs::temp_directory_path() / "mpvoc_corrupt_v.ckpt").string();
    {
        std::ofstream o(vbad, std::ios::binary);
        o << wrong_version;
    }
    REQUIRE_THROWS_WITH(load_checkpoint(vbad), Catch::Matchers::ContainsSubstring("version"));
}

TEST_CASE("evaluation is repeatable byte for byte") {
    RunConfig cfg = tiny_run_config();
    Trainer tr(cfg, make_synthetic_corpus(cfg.corpus));
    for (int s = 0; s < 2; ++s) tr.train_step();
    const std::string csv1 = metric_report_csv(tr.evaluate());
    const std::string csv2 = metric_report_csv(tr.evaluate());
    REQUIRE(csv1 == csv2);
    REQUIRE(csv1.rfind("utt_id,mcd,mstft,vuv_f1,pitch_rmse,periodicity_rmse\n", 0) == 0);
}

TEST_CASE("a one-cell ablation grid equals a direct train + evaluate") {
    RunConfig cfg = tiny_run_config();
    cfg.ablate.topologies = {"separate"};
    cfg.ablate.sources = {"raw"};
    cfg.ablate.heads = {"direct"};
    cfg.ablate.seeds = {3};
    cfg.train.steps = 6;
    std::vector<AblationCellResult> rows = run_ablation(cfg);
    REQUIRE(rows.size() == 1);
    REQUIRE(rows[0].ok);

    RunConfig manual = cfg;
    manual.model.seed = 3;
    manual.train.seed = 3;
    Trainer tr(manual, make_synthetic_corpus(manual.corpus));
    LossReport last;
    for (int s = 0; s < 6; ++s) last = tr.train_step();
    MetricMeans means = report_means(tr.evaluate());
    REQUIRE(rows[0].final_loss == last.total);
    REQUIRE(rows[0].metrics.mstft == means.mstft);
    REQUIRE(rows[0].metrics.mcd == means.mcd);
    REQUIRE(rows[0].params == tr.model().param_count());
}

TEST_CASE("the four-cell source/output grid completes and reports four rows") {
    RunConfig cfg = tiny_run_config();
    cfg.ablate.topologies = {"separate"};
    cfg.ablate.sources = {"raw", "prior"};
    cfg.ablate.heads = {"direct", "miri"};
    cfg.ablate.seeds = {1};
    cfg.train.steps = 4;
    std::vector<AblationCellResult> rows = run_ablation(cfg);
    REQUIRE(rows.size() == 4);
    for (const AblationCellResult& r : rows) {
        INFO(r.topology << "/" << r.source << "/" << r.head << ": " << r.error);
        REQUIRE(r.ok);
    }
    const std::string csv = ablation_csv(rows);
    REQUIRE(csv.rfind("topology,source,head,seed,status,params,final_loss,", 0) == 0);
    REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 5);
}

TEST_CASE("failed ablation cells are recorded, not fatal") {
    RunConfig cfg = tiny_run_config();
    cfg.ablate.topologies = {"separate"};
    cfg.ablate.sources = {"raw"};
    cfg.ablate.heads = {"direct"};
    cfg.ablate.seeds = {1};
    cfg.train.segment_frames = 10000;  // no utterance is long enough
    std::vector<AblationCellResult> rows = run_ablation(cfg);
    REQUIRE(rows.size() == 1);
    REQUIRE_FALSE(rows[0].ok);
    REQUIRE(rows[0].error.find("segment") != std::string::npos);
    const std::string csv = ablation_csv(rows);
    REQUIRE(csv.find("failed") != std::string::npos);
}
