#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mpvoc/model.hpp"
#include "mpvoc/optim.hpp"
#include "mpvoc/rng.hpp"
#include "mpvoc/signal.hpp"

using namespace mpvoc;

namespace {

ModelConfig toy_config(TopologyKind topo, HeadKind head, InputKind input = InputKind::raw) {
    ModelConfig cfg;
    cfg.stft.n_fft = 32;
    cfg.stft.hop = 8;
    cfg.n_mels = 6;
    cfg.input_kind = input;
    cfg.block.channels = 8;
    cfg.block.depthwise_kernel = 3;
    cfg.topology.kind = topo;
    cfg.topology.depth = 4;
    cfg.topology.shared_layers = 2;
    cfg.head.kind = head;
    cfg.seed = 42;
    return cfg;
}

Matrix random_input(const ModelConfig& cfg, int64_t frames, uint64_t seed) {
    Matrix in(cfg.input_rows(), frames);
    Rng rng(seed);
    for (double& v : in.a) v = rng.gauss();
    return in;
}

}  // namespace

TEST_CASE("shuffle and separate topologies have identical parameter counts") {
    Model shuffle(toy_config(TopologyKind::shuffle, HeadKind::direct_phase));
    Model separate(toy_config(TopologyKind::separate, HeadKind::direct_phase));
    REQUIRE(shuffle.param_count() == separate.param_count());
    // and the relation is not an accident of one head choice
    Model shuffle_miri(toy_config(TopologyKind::shuffle, HeadKind::miri));
    Model separate_miri(toy_config(TopologyKind::separate, HeadKind::miri));
    REQUIRE(shuffle_miri.param_count() == separate_miri.param_count());
}

TEST_CASE("partially shared parameter count strictly increases with R") {
    ModelConfig cfg = toy_config(TopologyKind::partially_shared, HeadKind::direct_phase);
    cfg.topology.depth = 8;
    int64_t prev = -1;
    for (int64_t r : {2, 4, 6}) {
        cfg.topology.shared_layers = r;
        Model m(cfg);
        REQUIRE(m.param_count() > prev);
        prev = m.param_count();
    }
}

TEST_CASE("shared topology is smaller than separate at equal depth and width") {
    Model shared(toy_config(TopologyKind::shared, HeadKind::direct_phase));
    Model separate(toy_config(TopologyKind::separate, HeadKind::direct_phase));
    REQUIRE(shared.param_count() < separate.param_count());
}

TEST_CASE("MI-RI head has strictly more parameters than DirectPhase on the same trunk") {
    for (TopologyKind topo : {TopologyKind::shared, TopologyKind::separate}) {
        Model direct(toy_config(topo, HeadKind::direct_phase));
        Model miri(toy_config(topo, HeadKind::miri));
        REQUIRE(miri.param_count() > direct.param_count());
    }
}

TEST_CASE("block parameters are additive in depth") {
    ModelConfig cfg = toy_config(TopologyKind::separate, HeadKind::direct_phase);
    auto block_params = [](Model& m) {
        int64_t n = 0;
        for (Parameter* p : m.parameters())
            if (p->name.find(".block") != std::string::npos ||
                p->name.find(".mix") != std::string::npos)
                n += p->value.numel();
        return n;
    };
    Model base(cfg);
    cfg.topology.depth = 8;
    Model deep(cfg);
    REQUIRE(block_params(deep) == 2 * block_params(base));
    REQUIRE(deep.param_count() > base.param_count());
}

TEST_CASE("parameter count equals the sum over branch partitions") {
    for (HeadKind head : {HeadKind::direct_phase, HeadKind::atan_phase, HeadKind::miri}) {
        for (TopologyKind topo : {TopologyKind::shared, TopologyKind::partially_shared,
                                  TopologyKind::shuffle, TopologyKind::separate}) {
            Model m(toy_config(topo, head));
            REQUIRE(m.param_count() == m.param_count(Branch::magnitude) +
                                           m.param_count(Branch::phase) +
                                           m.param_count(Branch::shared));
        }
    }
}

TEST_CASE("same seed gives bit-identical parameters, different seed does not") {
    ModelConfig cfg = toy_config(TopologyKind::shuffle, HeadKind::miri);
    Model a(cfg);
    Model b(cfg);
    auto pa = a.parameters();
    auto pb = b.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        REQUIRE(pa[i]->name == pb[i]->name);
        REQUIRE(pa[i]->branch == pb[i]->branch);
        REQUIRE(pa[i]->value.data == pb[i]->value.data);
    }
    cfg.seed = 43;
    Model c(cfg);
    bool any_diff = false;
    auto pc = c.parameters();
    for (std::size_t i = 0; i < pa.size() && !any_diff; ++i)
        any_diff = pa[i]->value.data != pc[i]->value.data;
    REQUIRE(any_diff);
}

TEST_CASE("forward preserves the time dimension for every topology and head") {
    for (HeadKind head : {HeadKind::direct_phase, HeadKind::atan_phase, HeadKind::miri}) {
        for (TopologyKind topo : {TopologyKind::shared, TopologyKind::partially_shared,
                                  TopologyKind::shuffle, TopologyKind::separate}) {
            ModelConfig cfg = toy_config(topo, head);
            Model m(cfg);
            Tape t;
            ModelOutputs out = m.forward(t, random_input(cfg, 11, 7));
            REQUIRE(t.val(out.amp).dim(0) == cfg.stft.bins());
            REQUIRE(t.val(out.amp).dim(1) == 11);
            REQUIRE(t.val(out.phase).dim(1) == 11);
            for (double v : t.val(out.amp).data) REQUIRE(v > 0.0);
        }
    }
}

TEST_CASE("forward is deterministic and rejects wrong input shapes") {
    ModelConfig cfg = toy_config(TopologyKind::separate, HeadKind::miri);
    Model m(cfg);
    Matrix in = random_input(cfg, 9, 8);
    Tape t1, t2;
    ModelOutputs o1 = m.forward(t1, in);
    ModelOutputs o2 = m.forward(t2, in);
    REQUIRE(t1.val(o1.amp).data == t2.val(o2.amp).data);
    REQUIRE(t1.val(o1.phase).data == t2.val(o2.phase).data);

    Tape t3;
    REQUIRE_THROWS_WITH(m.forward(t3, Matrix(5, 9)),
                        Catch::Matchers::ContainsSubstring("rows"));
}

TEST_CASE("shared trunk with tied head weights emits identical raw head outputs") {
    ModelConfig cfg = toy_config(TopologyKind::shared, HeadKind::direct_phase);
    Model m(cfg);
    // tie the phase head to the magnitude head
    Parameter* mw = m.find("mag.head.w");
    Parameter* mb = m.find("mag.head.b");
    Parameter* pw = m.find("ph.head.w");
    Parameter* pb = m.find("ph.head.b");
    REQUIRE((mw && mb && pw && pb));
    pw->value = mw->value;
    pb->value = mb->value;
    Tape t;
    ModelOutputs out = m.forward(t, random_input(cfg, 7, 9));
    REQUIRE(t.val(out.raw_mag).data == t.val(out.raw_phase).data);
}

TEST_CASE("combine_miri reproduces the 3-4-5 example exactly") {
    Tape t;
    Var amp_m = t.constant(Tensor::scalar(2.0));
    Var real = t.constant(Tensor::scalar(3.0));
    Var imag = t.constant(Tensor::scalar(4.0));
    Var alpha = t.constant(Tensor::scalar(0.5));
    MiriCombined c = combine_miri(t, amp_m, real, imag, alpha);
    REQUIRE(std::abs(t.val(c.amp_p).data[0] - 5.0) < 1e-12);
    REQUIRE(std::abs(t.val(c.amp).data[0] - 3.5) < 1e-12);
    REQUIRE(t.val(c.phase).data[0] == Catch::Approx(std::atan2(4.0, 3.0)));
}

TEST_CASE("combine_miri at alpha = 1 returns the magnitude branch exactly") {
    Tape t;
    Var amp_m = t.constant(Tensor::scalar(1.75));
    Var real = t.constant(Tensor::scalar(0.3));
    Var imag = t.constant(Tensor::scalar(-0.4));
    Var alpha = t.constant(Tensor::scalar(1.0));
    MiriCombined c = combine_miri(t, amp_m, real, imag, alpha);
    REQUIRE(t.val(c.amp).data[0] == 1.75);
}

TEST_CASE("gradient of mean(amp) w.r.t. the real component passes finite differences") {
    Tensor r0({3, 4});
    Rng rng(31);
    for (double& v : r0.data) v = rng.gauss() + 0.5;
    const double err = grad_check(
        [](Tape& t, Var real) {
            Tensor i0({3, 4}, 0.8);
            Tensor a0({3, 4}, 2.0);
            MiriCombined c = combine_miri(t, t.constant(a0), real, t.constant(i0),
                                          t.constant(Tensor::scalar(0.4)));
            return t.reduce_mean(c.amp);
        },
        r0);
    REQUIRE(err < 1e-5);
}

TEST_CASE("atan-style heads are exactly scale invariant for k > 0") {
    Rng rng(17);
    Matrix real(4, 5), imag(4, 5);
    for (double& v : real.a) v = rng.gauss();
    for (double& v : imag.a) v = rng.gauss();
    Matrix base = head_to_phase_atan(real, imag);
    for (double k : {2.0, 0.5, 1024.0}) {  // exact binary scalings
        Matrix r2 = real, i2 = imag;
        for (double& v : r2.a) v *= k;
        for (double& v : i2.a) v *= k;
        Matrix scaled = head_to_phase_atan(r2, i2);
        REQUIRE(scaled.a == base.a);
    }
    for (double k : {3.7, 0.013}) {
        Matrix r2 = real, i2 = imag;
        for (double& v : r2.a) v *= k;
        for (double& v : i2.a) v *= k;
        Matrix scaled = head_to_phase_atan(r2, i2);
        for (std::size_t i = 0; i < base.a.size(); ++i)
            REQUIRE(scaled.a[i] == Catch::Approx(base.a[i]).margin(1e-12));
    }
}

TEST_CASE("head_to_phase wraps direct outputs and maps (1,1) to pi/4") {
    Matrix raw(1, 1);
    raw(0, 0) = 3.0 * kPi / 2.0;
    REQUIRE(head_to_phase_direct(raw)(0, 0) == Catch::Approx(-kPi / 2.0));
    Matrix r(1, 1, 1.0), i(1, 1, 1.0);
    REQUIRE(head_to_phase_atan(r, i)(0, 0) == Catch::Approx(kPi / 4.0));
}

TEST_CASE("reconstruct inverts analysis and is total on random grids") {
    StftConfig cfg;
    cfg.n_fft = 256;
    cfg.hop = 64;
    Waveform w;
    w.sample_rate = 16000;
    w.samples.resize(4096);
    Rng rng(23);
    for (double& v : w.samples) v = 0.4 * rng.gauss();
    MagPhaseSpectrogram mp = polar_split(stft(w, cfg));
    Waveform rec = reconstruct(mp.magnitude, mp.phase, cfg, 16000,
                               static_cast<int64_t>(w.samples.size()));
    double worst = 0.0;
    for (std::size_t i = 0; i < w.samples.size(); ++i)
        worst = std::max(worst, std::abs(rec.samples[i] - w.samples[i]));
    REQUIRE(worst < 1e-6);

    Matrix zero_amp(mp.magnitude.rows, mp.magnitude.cols);
    Waveform silence = reconstruct(zero_amp, mp.phase, cfg, 16000);
    for (double v : silence.samples) REQUIRE(v == 0.0);

    Matrix amp(mp.magnitude.rows, mp.magnitude.cols);
    Matrix phase(mp.magnitude.rows, mp.magnitude.cols);
    for (double& v : amp.a) v = rng.uniform(0.0, 2.0);
    for (double& v : phase.a) v = rng.uniform(-kPi, kPi);
    Waveform random_rec = reconstruct(amp, phase, cfg, 16000);
    for (double v : random_rec.samples) REQUIRE(std::isfinite(v));
}

TEST_CASE("Eq. 4 gradient routing: magnitude-only loss and the branch partitions") {
    // Separate + DirectPhase: the loss never touches the phase stream.
    {
        ModelConfig cfg = toy_config(TopologyKind::separate, HeadKind::direct_phase);
        Model m(cfg);
        Tape t;
        ModelOutputs out = m.forward(t, random_input(cfg, 9, 12));
        Var target = t.constant(Tensor(t.val(out.amp).shape, 1.0));
        t.backward(t.reduce_mean(t.square(t.sub(out.amp, target))));
        for (Parameter* p : m.parameters()) {
            if (p->branch == Branch::phase)
                for (double g : p->grad.data) REQUIRE(g == 0.0);
        }
        // and the magnitude stream does receive gradient
        double mag_norm = 0.0;
        for (Parameter* p : m.parameters())
            if (p->branch == Branch::magnitude)
                for (double g : p->grad.data) mag_norm += g * g;
        REQUIRE(mag_norm > 0.0);
    }
    // Separate + MI-RI: the blended magnitude routes gradient into both streams.
    {
        ModelConfig cfg = toy_config(TopologyKind::separate, HeadKind::miri);
        Model m(cfg);
        Tape t;
        ModelOutputs out = m.forward(t, random_input(cfg, 9, 12));
        Var target = t.constant(Tensor(t.val(out.amp).shape, 1.0));
        t.backward(t.reduce_mean(t.square(t.sub(out.amp, target))));
        double phase_norm = 0.0, mag_norm = 0.0;
        for (Parameter* p : m.parameters()) {
            for (double g : p->grad.data) {
                if (p->branch == Branch::phase) phase_norm += g * g;
                if (p->branch == Branch::magnitude) mag_norm += g * g;
            }
        }
        REQUIRE(phase_norm > 0.0);
        REQUIRE(mag_norm > 0.0);
    }
}

TEST_CASE("MB mode: detached blend keeps the forward bit-identical, removes the gradient") {
    ModelConfig cfg = toy_config(TopologyKind::separate, HeadKind::miri);
    Model full(cfg);
    cfg.head.mb_mode = MbMode::detach;
    Model detached(cfg);  // same seed -> identical parameters

    Rng rng(91);
    for (int trial = 0; trial < 100; ++trial) {
        Matrix in = random_input(cfg, 6, 1000 + static_cast<uint64_t>(trial));
        Tape t1, t2;
        ModelOutputs o1 = full.forward(t1, in);
        ModelOutputs o2 = detached.forward(t2, in);
        REQUIRE(t1.val(o1.amp).data == t2.val(o2.amp).data);
        REQUIRE(t1.val(o1.phase).data == t2.val(o2.phase).data);
    }

    // gradients differ: a magnitude-only loss cannot reach the phase stream's
    // blend contribution once it is detached; only the phase loss could.
    Matrix in = random_input(cfg, 6, 77);
    Tape t;
    ModelOutputs out = detached.forward(t, in);
    Var target = t.constant(Tensor(t.val(out.amp).shape, 1.0));
    detached.zero_grad();
    t.backward(t.reduce_mean(t.square(t.sub(out.amp, target))));
    for (Parameter* p : detached.parameters())
        if (p->branch == Branch::phase)
            for (double g : p->grad.data) REQUIRE(g == 0.0);
    (void)rng;
}

TEST_CASE("alpha stays in (0,1) after many optimizer steps") {
    ModelConfig cfg = toy_config(TopologyKind::separate, HeadKind::miri);
    Model m(cfg);
    Parameter* alpha = m.find("alpha");
    REQUIRE(alpha != nullptr);
    REQUIRE(alpha->branch == Branch::shared);
    AdamWConfig ocfg;
    ocfg.lr = 0.5;  // deliberately aggressive
    AdamW opt({alpha}, ocfg);
    for (int i = 0; i < 200; ++i) {
        alpha->zero_grad();
        alpha->grad.data[0] = i % 2 == 0 ? 5.0 : -0.1;  // keep pushing one way
        opt.step();
        Tape t;
        const double a = t.val(t.sigmoid(t.param(*alpha))).data[0];
        REQUIRE(a > 0.0);
        REQUIRE(a < 1.0);
    }
}

TEST_CASE("invalid model configs are rejected") {
    ModelConfig cfg = toy_config(TopologyKind::partially_shared, HeadKind::direct_phase);
    cfg.topology.shared_layers = 4;  // == depth
    REQUIRE_THROWS_AS(Model(cfg), std::invalid_argument);
    ModelConfig cfg2 = toy_config(TopologyKind::shared, HeadKind::direct_phase);
    cfg2.block.depthwise_kernel = 4;
    REQUIRE_THROWS_AS(Model(cfg2), std::invalid_argument);
    ModelConfig cfg3 = toy_config(TopologyKind::shared, HeadKind::direct_phase);
    cfg3.head.mb_mode = MbMode::detach;  // needs miri
    REQUIRE_THROWS_AS(Model(cfg3), std::invalid_argument);
}
