#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <sstream>

#include "spikegan/checkpoint.hpp"
#include "spikegan/codec.hpp"
#include "spikegan/meta.hpp"

using namespace spikegan;
using namespace spikegan::meta;

namespace {

struct World {
    ModelContext ctx;
    HyperParams hp;
    std::vector<std::vector<Example>> pools;
};

World make_world(std::uint64_t seed, std::size_t n_tasks = 3) {
    Rng rng(seed);
    World w;
    w.ctx.topology = snn::SnnTopology::fully_connected(2, 2, 3, true);
    w.ctx.featurizer = {train::Decode::rate, 2.0, true};
    w.ctx.cfg.batch = 4;
    w.ctx.cfg.steps = 4;
    w.ctx.cfg.lr_gen = 0.05;
    w.ctx.cfg.lr_disc = 0.05;
    w.hp.theta = snn::SnnParams(w.ctx.topology, codec::exp_basis(3, 2.0), codec::exp_basis(3, 2.0));
    snn::init_normal(w.hp.theta, w.ctx.topology, rng);
    w.hp.Theta = nn::NetworkBuilder(5, 1).dense(4, nn::Activation::leaky_relu()).dense(1, nn::Activation::sigmoid()).build();
    nn::glorot_init(w.hp.Theta, rng);
    for (std::size_t t = 0; t < n_tasks; ++t) {
        std::vector<Example> pool;
        for (std::size_t k = 0; k < 12; ++k) {
            Example ex;
            ex.label = k % 2;
            ex.condition = codec::one_hot(ex.label, 2);
            ex.y = SpikeTrain(2, 4);
            for (std::size_t s = 0; s < 4; ++s) ex.y.set(ex.label, s, true);
            const std::vector<double> v{0.1 * static_cast<double>(t), 0.5 * ex.label, 0.3};
            ex.real = w.ctx.featurizer.from_vector(v, ex);
            pool.push_back(ex);
        }
        w.pools.push_back(pool);
    }
    return w;
}

TaskPool pool_of(const World& w) {
    return [&w](std::size_t t) -> const std::vector<Example>& { return w.pools.at(t % w.pools.size()); };
}

MetaDataBuffer archive_all(const World& w) {
    MetaDataBuffer b;
    for (std::size_t t = 0; t < w.pools.size(); ++t) b.tasks.push_back({t, {{0, 1, 2, 3, 4, 5}}});
    return b;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST(WithinTask, ZeroStepsReturnsInit) {
    auto w = make_world(1);
    Rng rng(2);
    EXPECT_EQ(within_task_update(w.hp, w.pools[0], 0, w.ctx, rng), w.hp);
}

TEST(WithinTask, ZeroRatesReturnInit) {
    auto w = make_world(3);
    w.ctx.cfg.lr_gen = w.ctx.cfg.lr_disc = 0.0;
    Rng rng(4);
    EXPECT_EQ(within_task_update(w.hp, w.pools[0], 7, w.ctx, rng), w.hp);
}

TEST(WithinTask, DeterministicAndDoesNotMutateInit) {
    auto w = make_world(5);
    const auto copy = w.hp;
    Rng a(6), b(6);
    const auto x = within_task_update(w.hp, w.pools[1], 5, w.ctx, a);
    const auto y = within_task_update(w.hp, w.pools[1], 5, w.ctx, b);
    EXPECT_EQ(x, y);
    EXPECT_EQ(w.hp, copy);
    EXPECT_NE(x, w.hp);
}

TEST(WithinTask, EmptyBufferIsUsageError) {
    auto w = make_world(7);
    Rng rng(1);
    EXPECT_THROW(within_task_update(w.hp, std::span<const Example>{}, 3, w.ctx, rng), UsageError);
}

TEST(MetaUpdate, EmptyArchiveSkips) {
    auto w = make_world(8);
    Rng rng(1);
    EXPECT_EQ(meta_update(w.hp, MetaDataBuffer{}, pool_of(w), MetaConfig{}, w.ctx, rng), w.hp);
}

TEST(MetaUpdate, NoOpAdaptationIsFixedPoint) {
    auto w = make_world(9);
    w.ctx.cfg.lr_gen = w.ctx.cfg.lr_disc = 0.0;
    Rng rng(1);
    EXPECT_EQ(meta_update(w.hp, archive_all(w), pool_of(w), MetaConfig{}, w.ctx, rng), w.hp);
}

TEST(MetaUpdate, UnitStepJumpsToAdapted) {
    auto w = make_world(10);
    MetaConfig mc{1, 5, 4, 1.0};
    const auto archive = archive_all(w);
    Rng a(11), b(11);
    const auto out = meta_update(w.hp, archive, pool_of(w), mc, w.ctx, a);
    // Replay the single adaptation with the same random draws.
    const auto& task = archive.tasks[uniform_index(b, archive.tasks.size())];
    const auto all = task.indices();
    std::vector<std::size_t> pick(mc.examples_per_task);
    for (auto& p : pick) p = all[uniform_index(b, all.size())];
    const auto adapted = within_task_update(w.hp, gather(w.pools[task.task], pick), mc.within_steps, w.ctx, b);
    EXPECT_LT(max_abs_diff(out.theta.values(), adapted.theta.values()), 1e-15);
    EXPECT_LT(max_abs_diff(out.Theta.values(), adapted.Theta.values()), 1e-15);
}

TEST(MetaUpdate, HalfStepIsMidpoint) {
    auto w = make_world(12);
    const auto archive = archive_all(w);
    Rng a(13), b(13);
    const auto half = meta_update(w.hp, archive, pool_of(w), MetaConfig{1, 5, 4, 0.5}, w.ctx, a);
    const auto full = meta_update(w.hp, archive, pool_of(w), MetaConfig{1, 5, 4, 1.0}, w.ctx, b);
    for (std::size_t i = 0; i < w.hp.theta.size(); ++i)
        EXPECT_NEAR(half.theta.values()[i], 0.5 * (w.hp.theta.values()[i] + full.theta.values()[i]), 1e-15);
    for (std::size_t i = 0; i < w.hp.Theta.size(); ++i)
        EXPECT_NEAR(half.Theta.values()[i], 0.5 * (w.hp.Theta.values()[i] + full.Theta.values()[i]), 1e-15);
}

TEST(MetaUpdate, DisplacementBoundedByLargestAdaptation) {
    auto w = make_world(14);
    const auto archive = archive_all(w);
    const MetaConfig mc{4, 5, 3, 0.3};
    Rng a(15), b(15);
    const auto out = meta_update(w.hp, archive, pool_of(w), mc, w.ctx, a);
    double worst = 0.0;
    for (std::size_t n = 0; n < mc.tasks_per_update; ++n) {
        const auto& task = archive.tasks[uniform_index(b, archive.tasks.size())];
        const auto all = task.indices();
        std::vector<std::size_t> pick(mc.examples_per_task);
        for (auto& p : pick) p = all[uniform_index(b, all.size())];
        const auto ad = within_task_update(w.hp, gather(w.pools[task.task], pick), mc.within_steps, w.ctx, b);
        worst = std::max(worst, std::sqrt(squared_distance(ad.theta.values(), w.hp.theta.values())));
    }
    EXPECT_LE(std::sqrt(squared_distance(out.theta.values(), w.hp.theta.values())), mc.step * worst + 1e-12);
}

TEST(Continual, SingleTaskNeverMovesHyperParams) {
    auto w = make_world(16, 1);
    ContinualState st{0, 0, w.hp, {}, {}, Rng(17)};
    Schedule sched{1, 4, 3, 5, 1};
    std::vector<MetricsRow> rows;
    ContinualHooks hooks{pool_of(w), nullptr, nullptr, [&](const MetricsRow& r) { rows.push_back(r); }, nullptr};
    run_continual(st, sched, MetaConfig{}, w.ctx, hooks);
    EXPECT_EQ(st.hp, w.hp);
    EXPECT_EQ(rows.size(), 4u);
    EXPECT_EQ(st.archive.tasks.size(), 1u);
    EXPECT_EQ(st.archive.tasks[0].size(), 12u);
}

TEST(Continual, BuffersGrowMonotonically) {
    auto w = make_world(18);
    ContinualState st{0, 0, w.hp, {}, {}, Rng(19)};
    Schedule sched{3, 3, 2, 2, 1};
    MetaConfig mc{2, 3, 2, 0.1};
    std::vector<std::pair<std::size_t, std::size_t>> seen;  // (|D|, |B|) at each log
    ContinualHooks hooks{pool_of(w), nullptr, nullptr,
                         [&](const MetricsRow&) { seen.emplace_back(st.current.size(), st.archive.tasks.size()); },
                         nullptr};
    run_continual(st, sched, mc, w.ctx, hooks);
    ASSERT_EQ(seen.size(), 9u);
    for (std::size_t k = 0; k < 9; ++k) {
        EXPECT_EQ(seen[k].first, (k % 3 + 1) * 2);
        EXPECT_EQ(seen[k].second, k / 3);
    }
    EXPECT_NE(st.hp, w.hp);
}

TEST(Continual, ResumeFromSnapshotIsBitExact) {
    auto w = make_world(20);
    const Schedule sched{3, 2, 2, 2, 1};
    const MetaConfig mc{2, 3, 2, 0.2};
    std::ostringstream log_full, log_resumed;
    auto logger = [](std::ostringstream& os) { return [&os](const MetricsRow& r) { write_metrics_row(os, r); }; };

    ContinualState full{0, 0, w.hp, {}, {}, Rng(21)};
    run_continual(full, sched, mc, w.ctx, {pool_of(w), nullptr, nullptr, logger(log_full), nullptr});

    ContinualState first{0, 0, w.hp, {}, {}, Rng(21)};
    run_continual(first, sched, mc, w.ctx, {pool_of(w), nullptr, nullptr, logger(log_resumed), nullptr}, 1);
    std::stringstream buf;
    ckpt::Writer wr(buf);
    write_state(wr, first, w.ctx.topology);
    ckpt::Reader rd(buf);
    auto resumed = read_state(rd);
    EXPECT_EQ(resumed.hp, first.hp);
    EXPECT_EQ(resumed.rng, first.rng);
    run_continual(resumed, sched, mc, w.ctx, {pool_of(w), nullptr, nullptr, logger(log_resumed), nullptr});

    EXPECT_EQ(resumed.hp, full.hp);
    EXPECT_EQ(log_resumed.str(), log_full.str());
}

TEST(Checkpoint, GeneratorAndDiscriminatorRoundTrip) {
    Rng rng(22);
    const snn::SnnTopology topo(2, {0, 2}, {1}, {{0, 0}, {1, 2}, {2, 1}, {4, 1}}, {true, false, true});
    snn::SnnParams p(topo, codec::raised_cosine_basis(5, 2), codec::exp_basis(5, 2.0));
    for (double& v : p.values()) v = standard_normal(rng) * 1e-3 + 1.0 / 3.0;
    p.values()[0] = -0.0;
    p.values()[1] = 5e-324;
    auto disc = nn::NetworkBuilder(3, 9)
                    .conv1d(4, 3, 2, nn::Activation::leaky_relu(0.2))
                    .flatten()
                    .dense(1, nn::Activation::sigmoid())
                    .build();
    nn::glorot_init(disc, rng);
    for (int k = 0; k < 5; ++k) rng();

    std::stringstream buf;
    ckpt::Writer w(buf);
    ckpt::write_header(w, "unit");
    ckpt::write_topology(w, topo);
    ckpt::write_params(w, p);
    ckpt::write_ann(w, disc);
    ckpt::write_rng(w, rng);

    ckpt::Reader r(buf);
    ckpt::read_header(r, "unit");
    const auto topo2 = ckpt::read_topology(r);
    const auto p2 = ckpt::read_params(r, topo2);
    const auto disc2 = ckpt::read_ann(r);
    auto rng2 = ckpt::read_rng(r);
    EXPECT_EQ(topo2, topo);
    EXPECT_EQ(std::memcmp(p2.values().data(), p.values().data(), sizeof(double) * p.size()), 0);
    EXPECT_EQ(p2, p);
    EXPECT_EQ(disc2, disc);
    EXPECT_EQ(rng2(), rng());
}

TEST(Checkpoint, RejectsWrongVersionAndKind) {
    std::stringstream a("spikegan-checkpoint 99 unit"), b("spikegan-checkpoint 1 other");
    ckpt::Reader ra(a), rb(b);
    EXPECT_THROW(ckpt::read_header(ra, "unit"), ParseError);
    EXPECT_THROW(ckpt::read_header(rb, "unit"), ParseError);
}

TEST(Checkpoint, FileRoundTripIsAtomic) {
    const auto path = std::filesystem::temp_directory_path() / "spikegan_ckpt_test.txt";
    Rng rng(23);
    ckpt::save_file(path, [&](ckpt::Writer& w) { ckpt::write_rng(w, rng); });
    EXPECT_FALSE(std::filesystem::exists(path.string() + ".tmp"));
    Rng back;
    ckpt::load_file(path, [&](ckpt::Reader& r) { back = ckpt::read_rng(r); });
    EXPECT_EQ(back, rng);
    std::filesystem::remove(path);
}
