#pragma once

// Continual meta-learning of the generator/discriminator initialisation:
// a task-data buffer grows batch by batch, adapted models are trained from the
// shared initialisation, and completed tasks feed first-order Reptile updates.

#include <algorithm>
#include <functional>
#include <span>
#include <vector>

#include "spikegan/checkpoint.hpp"
#include "spikegan/common.hpp"
#include "spikegan/nn.hpp"
#include "spikegan/snn.hpp"
#include "spikegan/training.hpp"

namespace spikegan::meta {

using train::Example;

struct HyperParams {
    snn::SnnParams theta;  // generator initialisation
    nn::AnnParams Theta;   // discriminator initialisation

    friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

/// Examples of the current task, appended batch by batch. Entries are indices
/// into the task's example pool so the buffer can be checkpointed compactly.
struct TaskDataBuffer {
    std::size_t task = 0;
    std::vector<std::vector<std::size_t>> batches;

    std::size_t size() const {
        std::size_t n = 0;
        for (const auto& b : batches) n += b.size();
        return n;
    }
    std::vector<std::size_t> indices() const {
        std::vector<std::size_t> out;
        for (const auto& b : batches) out.insert(out.end(), b.begin(), b.end());
        return out;
    }
};

/// Archived buffers of completed tasks.
struct MetaDataBuffer {
    std::vector<TaskDataBuffer> tasks;
    bool empty() const { return tasks.empty(); }
};

/// Resolves a task index to its pool of examples.
using TaskPool = std::function<const std::vector<Example>&(std::size_t task)>;

inline std::vector<Example> gather(const std::vector<Example>& pool, std::span<const std::size_t> idx) {
    std::vector<Example> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(pool.at(i));
    return out;
}

/// Shared fixed pieces of every adapted model.
struct ModelContext {
    snn::SnnTopology topology;
    train::Featurizer featurizer;
    train::TrainConfig cfg;  // within-task learning rates and batch size
};

/// k_steps spikegan_step calls starting from `init`. Each step draws cfg.batch
/// examples uniformly with replacement from `data`. `init` is not modified.
inline HyperParams within_task_update(const HyperParams& init, std::span<const Example> data, std::size_t k_steps,
                                      const ModelContext& ctx, Rng& rng, train::StepMetrics* last = nullptr) {
    if (data.empty()) throw UsageError("within_task_update: empty task-data buffer");
    snn::Generator gen{ctx.topology, init.theta};
    nn::AnnParams disc = init.Theta;
    std::vector<Example> batch(ctx.cfg.batch);
    for (std::size_t k = 0; k < k_steps; ++k) {
        for (auto& ex : batch) ex = data[uniform_index(rng, data.size())];
        const auto m = train::spikegan_step(gen, disc, batch, ctx.featurizer, ctx.cfg, rng);
        if (last) *last = m;
    }
    return {std::move(gen.params), std::move(disc)};
}

struct MetaConfig {
    std::size_t tasks_per_update = 10;    // N
    std::size_t examples_per_task = 5;    // M
    std::size_t within_steps = 10;        // adaptation steps per sampled task
    double step = 0.1;                    // mu_meta
};

/// First-order Reptile: theta += mu * mean_n(phi_n - theta), likewise for the
/// discriminator. Tasks are drawn with replacement from the meta buffer; an
/// empty buffer leaves hp unchanged.
inline HyperParams meta_update(const HyperParams& hp, const MetaDataBuffer& buf, const TaskPool& pool,
                               const MetaConfig& mc, const ModelContext& ctx, Rng& rng) {
    if (buf.empty() || mc.tasks_per_update == 0) return hp;
    std::vector<double> dtheta(hp.theta.size(), 0.0), dTheta(hp.Theta.size(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(mc.tasks_per_update);
    for (std::size_t n = 0; n < mc.tasks_per_update; ++n) {
        const auto& task = buf.tasks[uniform_index(rng, buf.tasks.size())];
        const auto all = task.indices();
        std::vector<std::size_t> pick(mc.examples_per_task);
        for (auto& p : pick) p = all[uniform_index(rng, all.size())];
        const auto data = gather(pool(task.task), pick);
        const auto adapted = within_task_update(hp, data, mc.within_steps, ctx, rng);
        for (std::size_t i = 0; i < dtheta.size(); ++i)
            dtheta[i] += inv_n * (adapted.theta.values()[i] - hp.theta.values()[i]);
        for (std::size_t i = 0; i < dTheta.size(); ++i)
            dTheta[i] += inv_n * (adapted.Theta.values()[i] - hp.Theta.values()[i]);
    }
    HyperParams out = hp;
    nn::sgd_step(out.theta.values(), dtheta, mc.step, nn::Direction::ascent);
    nn::sgd_step(out.Theta.values(), dTheta, mc.step, nn::Direction::ascent);
    return out;
}

// ---------------------------------------------------------------------------
// Continual run

struct Schedule {
    std::size_t tasks = 100;             // meta-time steps t
    std::size_t batches_per_task = 2;    // i = 1..I
    std::size_t batch_size = 5;          // examples appended per (t, i)
    std::size_t serve_steps = 10;        // within-task steps for the serving model
    std::size_t eval_every = 1;          // evaluate the serving model every n tasks (last batch)
};

struct MetricsRow {
    std::size_t t = 0;
    std::size_t i = 0;
    std::string task_id;
    std::size_t within_task_iters = 0;
    double trts_accuracy = -1.0;  // negative when not evaluated
    double mean_d_real = 0.0;
    double mean_d_synth = 0.0;
};

inline void write_metrics_header(std::ostream& out) {
    out << "t,i,task_id,within_task_iters,trts_accuracy,mean_D_real,mean_D_synth\n";
}

inline void write_metrics_row(std::ostream& out, const MetricsRow& r) {
    out << r.t << ',' << r.i << ',' << r.task_id << ',' << r.within_task_iters << ',';
    if (r.trts_accuracy >= 0.0) out << r.trts_accuracy;
    out << ',' << r.mean_d_real << ',' << r.mean_d_synth << '\n';
}

/// State of a continual run; everything needed to resume bit-exactly.
struct ContinualState {
    std::size_t t = 0;  // next task (0-based)
    std::size_t i = 0;  // next batch within task t
    HyperParams hp;
    TaskDataBuffer current;
    MetaDataBuffer archive;
    Rng rng;
};

/// Hooks supplied by the caller.
struct ContinualHooks {
    TaskPool pool;                                                   // task index -> examples
    std::function<std::string(std::size_t)> task_id;                 // for the metrics log
    std::function<double(const HyperParams&, std::size_t task, Rng&)> evaluate;  // TRTS of the serving model
    std::function<void(const MetricsRow&)> log;
    std::function<void(const ContinualState&)> snapshot;             // after each completed task
};

/// Advances the run until `stop_after_task` tasks are complete (or the schedule ends).
inline void run_continual(ContinualState& st, const Schedule& sched, const MetaConfig& mc, const ModelContext& ctx,
                          const ContinualHooks& hooks, std::size_t stop_after_task = static_cast<std::size_t>(-1)) {
    while (st.t < sched.tasks && st.t < stop_after_task) {
        const auto& pool = hooks.pool(st.t);
        if (pool.empty()) throw DatasetError("run_continual: task " + std::to_string(st.t) + " has no examples");
        if (st.i == 0) st.current = TaskDataBuffer{st.t, {}};
        while (st.i < sched.batches_per_task) {
            std::vector<std::size_t> z(sched.batch_size);
            for (auto& v : z) v = uniform_index(st.rng, pool.size());
            st.current.batches.push_back(z);
            const auto data = gather(pool, st.current.indices());

            train::StepMetrics m;
            const auto serving = within_task_update(st.hp, data, sched.serve_steps, ctx, st.rng, &m);
            MetricsRow row{st.t, st.i + 1, hooks.task_id ? hooks.task_id(st.t) : std::to_string(st.t),
                           sched.serve_steps, -1.0, m.mean_d_real, m.mean_d_synth};
            const bool last_batch = st.i + 1 == sched.batches_per_task;
            if (hooks.evaluate && last_batch && sched.eval_every > 0 && (st.t + 1) % sched.eval_every == 0)
                row.trts_accuracy = hooks.evaluate(serving, st.t, st.rng);
            st.hp = meta_update(st.hp, st.archive, hooks.pool, mc, ctx, st.rng);
            if (hooks.log) hooks.log(row);
            ++st.i;
        }
        st.archive.tasks.push_back(st.current);
        st.current = TaskDataBuffer{st.t + 1, {}};
        st.i = 0;
        ++st.t;
        if (hooks.snapshot) hooks.snapshot(st);
    }
}

// ---------------------------------------------------------------------------
// Checkpointing

inline void write_buffer(ckpt::Writer& w, const TaskDataBuffer& b) {
    w.tag("task_buffer").size(b.task).size(b.batches.size());
    for (const auto& batch : b.batches) w.tag("batch").sizes(batch);
}

inline TaskDataBuffer read_buffer(ckpt::Reader& r) {
    r.expect("task_buffer");
    TaskDataBuffer b;
    b.task = r.size();
    b.batches.resize(r.size());
    for (auto& batch : b.batches) {
        r.expect("batch");
        batch = r.sizes();
    }
    return b;
}

inline void write_state(ckpt::Writer& w, const ContinualState& st, const snn::SnnTopology& topo) {
    ckpt::write_header(w, "meta-continual");
    w.tag("position").size(st.t).size(st.i);
    ckpt::write_topology(w, topo);
    ckpt::write_params(w, st.hp.theta);
    ckpt::write_ann(w, st.hp.Theta);
    write_buffer(w, st.current);
    w.tag("archive").size(st.archive.tasks.size());
    for (const auto& b : st.archive.tasks) write_buffer(w, b);
    ckpt::write_rng(w, st.rng);
}

inline ContinualState read_state(ckpt::Reader& r) {
    ckpt::read_header(r, "meta-continual");
    ContinualState st;
    r.expect("position");
    st.t = r.size();
    st.i = r.size();
    const auto topo = ckpt::read_topology(r);
    st.hp.theta = ckpt::read_params(r, topo);
    st.hp.Theta = ckpt::read_ann(r);
    st.current = read_buffer(r);
    r.expect("archive");
    st.archive.tasks.resize(r.size());
    for (auto& b : st.archive.tasks) b = read_buffer(r);
    st.rng = ckpt::read_rng(r);
    return st;
}

}  // namespace spikegan::meta
