#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpvoc/rng.hpp"
#include "mpvoc/signal.hpp"
#include "mpvoc/wav.hpp"

namespace mpvoc {

struct SyntheticCorpusSpec {
    int64_t n_utterances = 50;
    double duration_s = 1.0;
    int sample_rate = 16000;
    double f0_min = 90.0;
    double f0_max = 300.0;
    int64_t harmonics = 10;
    double noise_floor = 1e-3;
    uint64_t seed = 1234;

    void validate() const {
        if (n_utterances < 1) throw std::invalid_argument("corpus: n_utterances must be >= 1");
        if (duration_s <= 0.0) throw std::invalid_argument("corpus: duration must be positive");
        if (sample_rate <= 0) throw std::invalid_argument("corpus: sample_rate must be positive");
        if (!(f0_min > 0.0 && f0_min <= f0_max && f0_max < sample_rate / 2.0))
            throw std::invalid_argument("corpus: need 0 < f0_min <= f0_max < sample_rate/2");
        if (harmonics < 1) throw std::invalid_argument("corpus: harmonics must be >= 1");
        if (noise_floor < 0.0) throw std::invalid_argument("corpus: noise floor must be >= 0");
    }
};

struct Utterance {
    std::string id;
    Waveform wave;
    double f0 = 0.0;  // nominal pitch for synthetic utterances, 0 otherwise
};

using Corpus = std::vector<Utterance>;

// Harmonic complexes with a per-utterance pitch, mild vibrato, amplitude-decaying
// partials, and Gaussian noise at the configured floor. Deterministic per seed.
inline Corpus make_synthetic_corpus(const SyntheticCorpusSpec& spec) {
    spec.validate();
    Corpus corpus;
    const int64_t n = static_cast<int64_t>(spec.duration_s * spec.sample_rate);
    const double sr = static_cast<double>(spec.sample_rate);
    for (int64_t u = 0; u < spec.n_utterances; ++u) {
        Rng rng(spec.seed ^ (0x9E3779B97F4A7C15ULL * static_cast<uint64_t>(u + 1)));
        Utterance utt;
        char name[32];
        std::snprintf(name, sizeof name, "utt_%04lld", static_cast<long long>(u));
        utt.id = name;
        utt.f0 = rng.uniform(spec.f0_min, spec.f0_max);
        const double vib_depth = spec.harmonics > 1 ? rng.uniform(0.004, 0.015) : 0.0;
        const double vib_rate = rng.uniform(3.0, 6.0);
        const double rolloff = rng.uniform(0.8, 1.6);
        const int64_t n_harm = std::max<int64_t>(
            1, std::min(spec.harmonics,
                        static_cast<int64_t>(0.95 * sr / 2.0 / utt.f0)));
        std::vector<double> amp(static_cast<std::size_t>(n_harm));
        std::vector<double> phase(static_cast<std::size_t>(n_harm));
        for (int64_t h = 0; h < n_harm; ++h) {
            amp[static_cast<std::size_t>(h)] =
                std::pow(static_cast<double>(h + 1), -rolloff);
            phase[static_cast<std::size_t>(h)] = rng.uniform(0.0, kTwoPi);
        }
        utt.wave.sample_rate = spec.sample_rate;
        utt.wave.samples.assign(static_cast<std::size_t>(n), 0.0);
        double cycle = 0.0;  // integrated fundamental cycles
        double peak = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            const double t = static_cast<double>(i) / sr;
            const double f_inst = utt.f0 * (1.0 + vib_depth * std::sin(kTwoPi * vib_rate * t));
            cycle += f_inst / sr;
            double v = 0.0;
            for (int64_t h = 0; h < n_harm; ++h)
                v += amp[static_cast<std::size_t>(h)] *
                     std::sin(kTwoPi * static_cast<double>(h + 1) * cycle +
                              phase[static_cast<std::size_t>(h)]);
            utt.wave.samples[static_cast<std::size_t>(i)] = v;
            peak = std::max(peak, std::abs(v));
        }
        const double gain = peak > 0.0 ? 0.5 / peak : 1.0;
        const int64_t ramp = std::min<int64_t>(n / 8, spec.sample_rate / 100);
        for (int64_t i = 0; i < n; ++i) {
            double v = utt.wave.samples[static_cast<std::size_t>(i)] * gain;
            if (i < ramp) v *= static_cast<double>(i) / static_cast<double>(ramp);
            if (n - 1 - i < ramp) v *= static_cast<double>(n - 1 - i) / static_cast<double>(ramp);
            if (spec.noise_floor > 0.0) v += rng.gauss(0.0, spec.noise_floor);
            utt.wave.samples[static_cast<std::size_t>(i)] = v;
        }
        corpus.push_back(std::move(utt));
    }
    return corpus;
}

// Loads every .wav in a directory (sorted by filename) as a mono corpus.
inline Corpus load_wav_corpus(const std::string& dir, int expected_sample_rate) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir))
        throw std::runtime_error("load_wav_corpus: not a directory: " + dir);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("load_wav_corpus: no .wav files in " + dir);
    Corpus corpus;
    for (const auto& p : files) {
        Utterance utt;
        utt.id = p.stem().string();
        utt.wave = read_wav(p.string());
        if (expected_sample_rate > 0 && utt.wave.sample_rate != expected_sample_rate)
            throw std::runtime_error("load_wav_corpus: " + p.string() + " has sample rate " +
                                     std::to_string(utt.wave.sample_rate) + ", expected " +
                                     std::to_string(expected_sample_rate) +
                                     " (resampling is out of scope)");
        corpus.push_back(std::move(utt));
    }
    return corpus;
}

}  // namespace mpvoc
