#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "spikegan/codec.hpp"
#include "spikegan/training.hpp"
#include "support/oracles.hpp"

using namespace spikegan;
using namespace spikegan::train;

namespace {

SpikeTrain ones(std::size_t rows, std::size_t steps) {
    SpikeTrain s(rows, steps);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t t = 0; t < steps; ++t) s.set(i, t, true);
    return s;
}

/// One read-out neuron with feedback, step input, T = 2.
snn::Generator tiny_generator() {
    auto topo = snn::SnnTopology::fully_connected(1, 0, 1, true);
    snn::SnnParams p(topo, codec::exp_basis(2, 2.0), codec::exp_basis(2, 2.0));
    p.values()[0] = 0.6;
    p.values()[1] = -0.9;
    p.values()[2] = 0.2;
    return {topo, p};
}

/// Fixed discriminator on the raw 1 x 2 spike raster.
AnnParams tiny_discriminator() {
    auto d = nn::NetworkBuilder(1, 2).flatten().dense(1, nn::Activation::sigmoid()).build();
    d.weights(1)[0] = 1.5;
    d.weights(1)[1] = -2.0;
    d.bias(1)[0] = 0.3;
    return d;
}

std::vector<Example> temporal_batch(std::size_t n, std::size_t steps, Rng& rng) {
    std::vector<Example> out;
    for (std::size_t i = 0; i < n; ++i) {
        Example ex;
        ex.y = ones(1, steps);
        SpikeTrain x(1, steps);
        for (std::size_t t = 0; t < steps; ++t) x.set(0, t, bernoulli(rng, 0.5));
        Featurizer f{Decode::none, 2.0, false};
        ex.real = f.from_spikes(x, ex);
        out.push_back(ex);
    }
    return out;
}

/// Conditioned rate-decoded setup: 2 read-outs, 3 hidden, 2 label inputs.
struct ImageSetup {
    snn::Generator gen;
    AnnParams disc;
    std::vector<Example> batch;
    Featurizer feat{Decode::rate, 2.0, true};
};

ImageSetup image_setup(std::uint64_t seed) {
    Rng rng(seed);
    ImageSetup s;
    auto topo = snn::SnnTopology::fully_connected(2, 3, 2, true);
    snn::SnnParams p(topo, codec::raised_cosine_basis(3, 2), codec::exp_basis(3, 2.0));
    snn::init_normal(p, topo, rng);
    s.gen = {topo, p};
    s.disc = nn::NetworkBuilder(4, 1).dense(6, nn::Activation::leaky_relu()).dense(1, nn::Activation::sigmoid()).build();
    nn::glorot_init(s.disc, rng);
    for (std::size_t i = 0; i < 8; ++i) {
        Example ex;
        ex.label = i % 2;
        ex.condition = codec::one_hot(ex.label, 2);
        ex.y = SpikeTrain(2, 5);
        for (std::size_t t = 0; t < 5; ++t) ex.y.set(ex.label, t, true);
        const std::vector<double> v{0.2 + 0.6 * ex.label, 0.5};
        ex.real = s.feat.from_vector(v, ex);
        s.batch.push_back(ex);
    }
    return s;
}

}  // namespace

TEST(SpikeganStep, ZeroRatesLeaveParameters) {
    auto s = image_setup(1);
    TrainConfig cfg;
    cfg.batch = 8;
    cfg.lr_disc = cfg.lr_gen = 0.0;
    const auto gen0 = s.gen.params;
    const auto disc0 = s.disc;
    Rng rng(2);
    const auto m = spikegan_step(s.gen, s.disc, s.batch, s.feat, cfg, rng);
    EXPECT_EQ(s.gen.params, gen0);
    EXPECT_TRUE(std::equal(s.disc.values().begin(), s.disc.values().end(), disc0.values().begin()));
    EXPECT_GT(m.mean_d_real, 0.0);
    EXPECT_GT(m.mean_d_synth, 0.0);
    EXPECT_GT(m.disc_loss, 0.0);
}

TEST(SpikeganStep, ConstantDiscriminatorScalesMeanScore) {
    auto s = image_setup(3);
    for (double& v : s.disc.values()) v = 0.0;
    TrainConfig cfg;
    cfg.batch = 8;
    cfg.gen_loss = GenLoss::saturating;
    cfg.lr_disc = 0.0;
    cfg.lr_gen = 0.05;
    const auto before = s.gen.params;
    Rng rng(4);
    Rng replay = rng;
    spikegan_step(s.gen, s.disc, s.batch, s.feat, cfg, rng);
    const auto episodes = sample_episodes(before, s.gen.topology, s.batch, replay(), 0);
    std::vector<double> mean_g(before.size(), 0.0);
    for (const auto& e : episodes) axpy(1.0 / 8.0, e.grad, mean_g);
    for (std::size_t k = 0; k < before.size(); ++k) {
        const double expected = before.values()[k] - 0.05 * std::log(0.5) * mean_g[k];
        EXPECT_NEAR(s.gen.params.values()[k], expected, 1e-14);
    }
}

TEST(SpikeganStep, Deterministic) {
    auto a = image_setup(5), b = image_setup(5);
    TrainConfig cfg;
    cfg.batch = 8;
    Rng ra(6), rb(6);
    for (int k = 0; k < 5; ++k) {
        const auto ma = spikegan_step(a.gen, a.disc, a.batch, a.feat, cfg, ra);
        const auto mb = spikegan_step(b.gen, b.disc, b.batch, b.feat, cfg, rb);
        EXPECT_EQ(ma.disc_loss, mb.disc_loss);
    }
    EXPECT_EQ(a.gen.params, b.gen.params);
    EXPECT_TRUE(std::equal(a.disc.values().begin(), a.disc.values().end(), b.disc.values().begin()));
}

TEST(SpikeganStep, UpdatesAreIndependent) {
    // Freezing one network must not change the other's update.
    auto full = image_setup(7), gen_only = image_setup(7), disc_only = image_setup(7);
    TrainConfig cfg;
    cfg.batch = 8;
    cfg.lr_gen = 0.1;
    cfg.lr_disc = 0.1;
    Rng r1(8), r2(8), r3(8);
    spikegan_step(full.gen, full.disc, full.batch, full.feat, cfg, r1);
    auto c2 = cfg;
    c2.lr_disc = 0.0;
    spikegan_step(gen_only.gen, gen_only.disc, gen_only.batch, gen_only.feat, c2, r2);
    auto c3 = cfg;
    c3.lr_gen = 0.0;
    spikegan_step(disc_only.gen, disc_only.disc, disc_only.batch, disc_only.feat, c3, r3);
    EXPECT_EQ(full.gen.params, gen_only.gen.params);
    EXPECT_TRUE(std::equal(full.disc.values().begin(), full.disc.values().end(), disc_only.disc.values().begin()));
}

TEST(SpikeganStep, ShortBatchIsUsageError) {
    auto s = image_setup(9);
    TrainConfig cfg;
    cfg.batch = 9;
    Rng rng(1);
    EXPECT_THROW(spikegan_step(s.gen, s.disc, s.batch, s.feat, cfg, rng), UsageError);
}

TEST(SpikeganStep, NonFiniteLossAborts) {
    auto s = image_setup(10);
    s.disc.values()[0] = std::numeric_limits<double>::quiet_NaN();
    TrainConfig cfg;
    cfg.batch = 8;
    const auto before = s.gen.params;
    Rng rng(1);
    EXPECT_THROW(spikegan_step(s.gen, s.disc, s.batch, s.feat, cfg, rng), NumericError);
    EXPECT_EQ(s.gen.params, before);
}

TEST(SpikeganStep, SaturatedDiscriminatorStaysFinite) {
    auto s = image_setup(11);
    s.disc.bias(1)[0] = 1e4;
    TrainConfig cfg;
    cfg.batch = 8;
    for (auto mode : {GenLoss::saturating, GenLoss::non_saturating}) {
        cfg.gen_loss = mode;
        Rng rng(2);
        const auto m = spikegan_step(s.gen, s.disc, s.batch, s.feat, cfg, rng);
        EXPECT_TRUE(std::isfinite(m.disc_loss));
        EXPECT_TRUE(std::isfinite(m.gen_loss));
        EXPECT_TRUE(s.gen.params.values().size() > 0);
    }
}

TEST(SpikeganStep, GeneratorUpdateIsUnbiased) {
    const auto gen0 = tiny_generator();
    const auto disc = tiny_discriminator();
    const Featurizer feat{Decode::none, 2.0, false};
    Rng data_rng(12);
    const auto batch = temporal_batch(1, 2, data_rng);

    auto objective = [&](snn::SnnParams& p) {
        double e = 0.0;
        for (int code = 0; code < 4; ++code) {
            const auto x = SpikeTrain::from_values(1, 2, {code & 1, (code >> 1) & 1});
            const double prob = std::exp(snn::log_likelihood(p, gen0.topology, x, SpikeTrain(0, 2), batch[0].y));
            const double d = nn::forward_scalar(disc, feat.from_spikes(x, batch[0]));
            e += prob * std::log(1.0 - d);
        }
        return e;
    };
    auto p = gen0.params;
    const auto exact = oracle::central_differences(p.values(), [&]() { return objective(p); }, 1e-6);

    TrainConfig cfg;
    cfg.batch = 1;
    cfg.steps = 2;
    cfg.lr_gen = 1.0;
    cfg.lr_disc = 0.0;
    cfg.gen_loss = GenLoss::saturating;
    Rng rng(13);
    const std::size_t n = 100000;
    std::vector<double> sum(p.size(), 0.0), sq(p.size(), 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        auto g = gen0;
        auto d = disc;
        spikegan_step(g, d, batch, feat, cfg, rng);
        for (std::size_t c = 0; c < p.size(); ++c) {
            const double est = gen0.params.values()[c] - g.params.values()[c];  // = grad estimate
            sum[c] += est;
            sq[c] += est * est;
        }
    }
    for (std::size_t c = 0; c < p.size(); ++c) {
        const double mean = sum[c] / n, se = std::sqrt((sq[c] / n - mean * mean) / n);
        EXPECT_LE(std::abs(mean - exact[c]), 3.0 * se) << "coordinate " << c;
    }
}

TEST(SvgdKernel, Degenerate) {
    const std::vector<double> a{0.3, -1.2, 4.0};
    const auto kv = svgd_kernel(a, a);
    EXPECT_EQ(kv.value, 1.0);
    for (double g : kv.grad_b) EXPECT_EQ(g, 0.0);
}

TEST(SvgdKernel, HalfAtLogTwo) {
    const std::vector<double> a{0.0, 0.0}, b{std::sqrt(std::log(2.0)), 0.0};
    EXPECT_NEAR(svgd_kernel(a, b).value, 0.5, 1e-15);
}

TEST(SvgdKernel, GradientMatchesFiniteDifferences) {
    Rng rng(14);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> a(6), b(6);
        for (std::size_t i = 0; i < 6; ++i) a[i] = 0.4 * standard_normal(rng), b[i] = 0.4 * standard_normal(rng);
        const auto kv = svgd_kernel(a, b);
        const auto numeric = oracle::central_differences(b, [&]() { return svgd_kernel(a, b).value; }, 1e-6);
        EXPECT_LT(oracle::max_relative_error(kv.grad_b, numeric), 1e-6);
    }
}

TEST(SvgdUpdate, SingleParticleIsPlainStep) {
    auto s = image_setup(15);
    std::vector<snn::SnnParams> ps{s.gen.params};
    std::vector<std::vector<double>> g{std::vector<double>(ps[0].size())};
    for (std::size_t k = 0; k < g[0].size(); ++k) g[0][k] = 0.01 * static_cast<double>(k) - 0.3;
    auto expected = ps[0];
    nn::sgd_step(expected.values(), g[0], 0.2);
    svgd_update(ps, g, 0.2);
    EXPECT_EQ(ps[0], expected);
}

TEST(SvgdUpdate, SymmetricAndRepulsive) {
    auto s = image_setup(16);
    std::vector<snn::SnnParams> same{s.gen.params, s.gen.params};
    std::vector<std::vector<double>> g(2, std::vector<double>(s.gen.params.size(), 0.1));
    svgd_update(same, g, 0.1);
    EXPECT_EQ(same[0], same[1]);

    auto a = s.gen.params, b = s.gen.params;
    b.values()[0] += 0.3;
    b.values()[3] -= 0.2;
    std::vector<snn::SnnParams> ps{a, b};
    std::vector<std::vector<double>> zero(2, std::vector<double>(a.size(), 0.0));
    svgd_update(ps, zero, 0.1);
    const auto kv = svgd_kernel(a.values(), b.values());
    for (std::size_t k = 0; k < a.size(); ++k) {
        // phi1 moves along +2 (phi1 - phi2) kappa, phi2 the opposite way.
        EXPECT_NEAR(ps[0].values()[k] - a.values()[k], 0.1 * 2.0 * (a.values()[k] - b.values()[k]) * kv.value, 1e-15);
        EXPECT_NEAR(ps[1].values()[k] - b.values()[k], 0.1 * 2.0 * (b.values()[k] - a.values()[k]) * kv.value, 1e-15);
    }
    EXPECT_GT(squared_distance(ps[0].values(), ps[1].values()), squared_distance(a.values(), b.values()));
}

TEST(SvgdUpdate, ShapeMismatch) {
    auto s = image_setup(17);
    auto other_topo = snn::SnnTopology::fully_connected(2, 1, 2, true);
    snn::SnnParams other(other_topo, codec::raised_cosine_basis(3, 2), codec::exp_basis(3, 2.0));
    std::vector<snn::SnnParams> ps{s.gen.params, other};
    std::vector<std::vector<double>> g{std::vector<double>(s.gen.params.size()), std::vector<double>(other.size())};
    EXPECT_THROW(svgd_update(ps, g, 0.1), UsageError);
}

TEST(BayesStep, SingleParticleMatchesSpikegan) {
    auto a = image_setup(18), b = image_setup(18);
    TrainConfig cfg;
    cfg.batch = 8;
    cfg.gen_loss = GenLoss::non_saturating;
    cfg.lr_gen = 0.07;
    cfg.svgd_step = 0.07;
    Rng ra(19), rb(19);
    for (int k = 0; k < 3; ++k) {
        std::vector<snn::SnnParams> ps{b.gen.params};
        spikegan_step(a.gen, a.disc, a.batch, a.feat, cfg, ra);
        bayes_spikegan_step(b.gen.topology, ps, b.disc, b.batch, b.feat, cfg, rb);
        b.gen.params = ps[0];
    }
    EXPECT_EQ(a.gen.params, b.gen.params);
    EXPECT_TRUE(std::equal(a.disc.values().begin(), a.disc.values().end(), b.disc.values().begin()));
}

TEST(BayesStep, ReportsPerParticleMetrics) {
    auto s = image_setup(20);
    Rng init(21);
    std::vector<snn::SnnParams> ps;
    for (int j = 0; j < 3; ++j) {
        auto p = s.gen.params;
        snn::init_normal(p, s.gen.topology, init);
        ps.push_back(p);
    }
    TrainConfig cfg;
    cfg.batch = 8;
    Rng rng(22);
    const auto m = bayes_spikegan_step(s.gen.topology, ps, s.disc, s.batch, s.feat, cfg, rng);
    ASSERT_EQ(m.particle_d_synth.size(), 3u);
    EXPECT_NEAR(m.overall.mean_d_synth, (m.particle_d_synth[0] + m.particle_d_synth[1] + m.particle_d_synth[2]) / 3, 1e-12);
}

namespace {

/// 1 hidden (id 0) + 1 visible (id 1), exogenous step input.
snn::Generator ml_generator() {
    auto topo = snn::SnnTopology::fully_connected(1, 1, 1, true);
    snn::SnnParams p(topo, codec::exp_basis(2, 1.0), codec::exp_basis(2, 1.0));
    Rng rng(23);
    for (double& v : p.values()) v = 0.8 * standard_normal(rng);
    return {topo, p};
}

}  // namespace

TEST(MlStep, NoHiddenIsExactAscent) {
    auto topo = snn::SnnTopology::fully_connected(1, 0, 2, true);
    snn::SnnParams p(topo, codec::exp_basis(3, 2.0), codec::exp_basis(3, 2.0));
    Rng rng(24);
    snn::init_normal(p, topo, rng, 0.5);
    MlExample ex{SpikeTrain::from_values(2, 5, {1, 0, 1, 1, 0, 0, 0, 1, 0, 1}), ones(1, 5)};
    const auto g = ml_gradient(p, topo, ex, rng);
    EXPECT_EQ(g.grad, snn::log_likelihood_gradient(p, topo, ex.x, SpikeTrain(0, 5), ex.y));
    EXPECT_DOUBLE_EQ(g.visible_log_lik, snn::log_likelihood(p, topo, ex.x, SpikeTrain(0, 5), ex.y));
}

TEST(MlStep, LearningSignalNeverPositive) {
    auto gen = ml_generator();
    Rng rng(25);
    for (int k = 0; k < 50; ++k) {
        MlExample ex{SpikeTrain(1, 4), ones(1, 4)};
        for (std::size_t t = 0; t < 4; ++t) ex.x.set(0, t, bernoulli(rng, 0.5));
        EXPECT_LE(ml_gradient(gen.params, gen.topology, ex, rng).visible_log_lik, 0.0);
    }
}

TEST(MlStep, UnbiasedAgainstEnumeration) {
    auto gen = ml_generator();
    const auto& topo = gen.topology;
    const MlExample ex{SpikeTrain::from_values(1, 2, {1, 0}), ones(1, 2)};

    // Expected total visible log-probability over hidden trajectories drawn from
    // the network with the visible neuron clamped.
    auto objective = [&]() {
        double total = 0.0;
        for (int code = 0; code < 4; ++code) {
            SpikeTrain s(2, 2);
            s.set(0, 0, code & 1);
            s.set(0, 1, (code >> 1) & 1);
            s.set(1, 0, ex.x(0, 0));
            s.set(1, 1, ex.x(0, 1));
            const auto u = snn::membrane_potentials(gen.params, topo, s, ex.y);
            double log_h = 0.0, visible = 0.0;
            for (std::size_t t = 0; t < 2; ++t) {
                log_h += bernoulli_log_prob(s(0, t), u(0, t));
                visible += bernoulli_log_prob(s(1, t), u(1, t));
            }
            total += std::exp(log_h) * visible;
        }
        return total;
    };
    const auto exact = oracle::central_differences(gen.params.values(), objective, 1e-6);

    Rng rng(26);
    const std::size_t n = 100000;
    std::vector<double> sum(exact.size(), 0.0), sq(exact.size(), 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        const auto g = ml_gradient(gen.params, topo, ex, rng).grad;
        for (std::size_t c = 0; c < g.size(); ++c) sum[c] += g[c], sq[c] += g[c] * g[c];
    }
    for (std::size_t c = 0; c < exact.size(); ++c) {
        const double mean = sum[c] / n, se = std::sqrt(std::max((sq[c] / n - mean * mean) / n, 0.0));
        EXPECT_LE(std::abs(mean - exact[c]), 3.0 * se + 1e-9) << "coordinate " << c;
    }
}

TEST(MlStep, LikelihoodIncreasesWithoutHidden) {
    auto topo = snn::SnnTopology::fully_connected(1, 0, 1, true);
    snn::SnnParams p(topo, codec::exp_basis(3, 2.0), codec::exp_basis(3, 2.0));
    snn::Generator gen{topo, p};
    const std::vector<MlExample> batch{{SpikeTrain::from_values(1, 6, {1, 1, 0, 0, 1, 1}), ones(1, 6)}};
    const double before = snn::log_likelihood(gen.params, topo, batch[0].x, SpikeTrain(0, 6), batch[0].y);
    TrainConfig cfg;
    cfg.steps = 6;
    cfg.lr_gen = 0.01;
    Rng rng(27);
    double prev = before;
    for (int k = 0; k < 200; ++k) {
        ml_train_step(gen, batch, cfg, rng);
        const double now = snn::log_likelihood(gen.params, topo, batch[0].x, SpikeTrain(0, 6), batch[0].y);
        EXPECT_GE(now, prev - 1e-12);
        prev = now;
    }
    EXPECT_GT(prev, before);
}

TEST(MlStep, WrongTargetLength) {
    auto gen = ml_generator();
    TrainConfig cfg;
    cfg.steps = 5;
    const std::vector<MlExample> batch{{SpikeTrain(1, 4), ones(1, 4)}};
    Rng rng(1);
    EXPECT_THROW(ml_train_step(gen, batch, cfg, rng), UsageError);
}
