#pragma once

// Experiment runners behind the `run` command. Each run writes into its output
// directory: config.ini (effective configuration), metrics.csv (one row per
// training iteration), results.csv (final metrics), checkpoints under ckpt/ and
// SVG plots.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "spikegan/checkpoint.hpp"
#include "spikegan/codec.hpp"
#include "spikegan/config.hpp"
#include "spikegan/datasets.hpp"
#include "spikegan/eval.hpp"
#include "spikegan/gradcheck.hpp"
#include "spikegan/meta.hpp"
#include "spikegan/svg.hpp"
#include "spikegan/training.hpp"

namespace spikegan::experiments {

namespace fs = std::filesystem;
using config::ExperimentConfig;
using train::Example;

struct Outcome {
    std::vector<eval::EvalReport> reports;
    int exit_code = 0;

    bool has(const std::string& metric) const {
        for (const auto& r : reports)
            if (r.metric == metric) return true;
        return false;
    }
    double value(const std::string& metric) const {
        for (const auto& r : reports)
            if (r.metric == metric) return r.value;
        throw UsageError("run produced no metric '" + metric + "'");
    }
};

inline std::string num(double v) {
    if (!std::isfinite(v)) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

/// Stable 64-bit key for stream derivation from a label.
inline std::uint64_t key(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
    return h;
}

// ---------------------------------------------------------------------------
// Metrics file

inline constexpr const char* kTrainHeader =
    "step,phase,iteration,disc_loss,gen_loss,mean_D_real,mean_D_synth,mean_reward,log_lik,eval_metric,eval_value";

struct TrainRow {
    std::string phase;
    std::size_t iteration = 0;
    double disc_loss = NAN, gen_loss = NAN, d_real = NAN, d_synth = NAN, reward = NAN, log_lik = NAN;
    std::string metric;
    double value = NAN;
};

/// Keeps the header and the first `rows` data lines of a CSV file.
inline void truncate_csv(const fs::path& path, std::size_t rows) {
    std::ifstream in(path);
    if (!in) throw Error("resume: missing '" + path.string() + "'");
    std::vector<std::string> keep;
    std::string line;
    while (keep.size() < rows + 1 && std::getline(in, line)) keep.push_back(line);
    if (keep.size() < rows + 1) throw Error("resume: '" + path.string() + "' has fewer rows than the checkpoint");
    in.close();
    std::ofstream out(path, std::ios::trunc);
    for (const auto& l : keep) out << l << '\n';
}

class MetricsCsv {
public:
    void open(const fs::path& path, const std::string& header, std::optional<std::size_t> resume_rows) {
        if (resume_rows && *resume_rows == 0 && !fs::exists(path)) resume_rows.reset();
        if (resume_rows) {
            truncate_csv(path, *resume_rows);
            out_.open(path, std::ios::app);
            rows_ = *resume_rows;
        } else {
            out_.open(path, std::ios::trunc);
            out_ << header << '\n';
            rows_ = 0;
        }
        if (!out_) throw Error("cannot write '" + path.string() + "'");
    }

    void write(const TrainRow& r) {
        ++rows_;
        out_ << rows_ << ',' << r.phase << ',' << r.iteration << ',' << num(r.disc_loss) << ',' << num(r.gen_loss)
             << ',' << num(r.d_real) << ',' << num(r.d_synth) << ',' << num(r.reward) << ',' << num(r.log_lik) << ','
             << r.metric << ',' << num(r.value) << '\n';
    }
    std::ostream& raw() { return out_; }
    void count_raw_row() { ++rows_; }
    void flush() { out_.flush(); }
    std::size_t rows() const { return rows_; }

private:
    std::ofstream out_;
    std::size_t rows_ = 0;
};

/// Reads numeric columns back from a CSV (blank cells become NaN).
inline std::map<std::string, std::vector<double>> read_columns(const fs::path& path,
                                                               const std::vector<std::string>& wanted,
                                                               const std::string& filter_col = "",
                                                               const std::string& filter_value = "") {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    std::vector<std::string> names;
    {
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) names.push_back(c);
    }
    std::map<std::string, std::vector<double>> out;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cells.push_back(c);
        cells.resize(names.size());
        bool keep = filter_col.empty();
        for (std::size_t k = 0; k < names.size(); ++k)
            if (names[k] == filter_col && cells[k] == filter_value) keep = true;
        if (!keep) continue;
        for (std::size_t k = 0; k < names.size(); ++k)
            if (std::find(wanted.begin(), wanted.end(), names[k]) != wanted.end())
                out[names[k]].push_back(cells[k].empty() ? NAN : std::strtod(cells[k].c_str(), nullptr));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Phase: one training loop with its own checkpoint

struct PhaseState {
    std::size_t iteration = 0;
    std::size_t metrics_rows = 0;
    bool done = false;
    std::vector<snn::SnnParams> particles;
    nn::AnnParams disc;  // empty for likelihood training
    Rng rng;
    std::vector<std::pair<std::string, double>> results;
};

inline void write_phase(ckpt::Writer& w, const std::string& name, const snn::SnnTopology& topo, const PhaseState& st) {
    ckpt::write_header(w, "phase");
    w.tag("name").word(name);
    w.tag("progress").size(st.iteration).size(st.metrics_rows).size(st.done ? 1 : 0);
    ckpt::write_topology(w, topo);
    w.tag("particles").size(st.particles.size());
    for (const auto& p : st.particles) ckpt::write_params(w, p);
    w.tag("has_disc").size(st.disc.size() > 0 ? 1 : 0);
    if (st.disc.size() > 0) ckpt::write_ann(w, st.disc);
    ckpt::write_rng(w, st.rng);
    w.tag("results").size(st.results.size());
    for (const auto& [k, v] : st.results) w.tag("result").word(k).real(v);
}

inline PhaseState read_phase(ckpt::Reader& r, const std::string& name, const snn::SnnTopology& topo) {
    ckpt::read_header(r, "phase");
    r.expect("name");
    if (r.word() != name) throw ParseError("checkpoint belongs to a different phase than '" + name + "'");
    PhaseState st;
    r.expect("progress");
    st.iteration = r.size();
    st.metrics_rows = r.size();
    st.done = r.size() != 0;
    if (!(ckpt::read_topology(r) == topo)) throw ParseError("checkpoint topology differs from the configuration");
    r.expect("particles");
    st.particles.resize(r.size());
    for (auto& p : st.particles) p = ckpt::read_params(r, topo);
    r.expect("has_disc");
    if (r.size()) st.disc = ckpt::read_ann(r);
    st.rng = ckpt::read_rng(r);
    r.expect("results");
    st.results.resize(r.size());
    for (auto& [k, v] : st.results) {
        r.expect("result");
        k = r.word();
        v = r.real();
    }
    return st;
}

struct PhaseSpec {
    std::string name;
    std::string streams;  // label for the phase's random streams; defaults to name
    snn::SnnTopology topology;
    std::size_t iterations = 0;
    std::function<void(PhaseState&)> init;
    std::function<TrainRow(PhaseState&)> step;
    std::string eval_metric;
    std::function<double(const PhaseState&, Rng&)> evaluate;  // periodic
    std::function<std::vector<std::pair<std::string, double>>(const PhaseState&, Rng&)> finish;
};

/// Thrown by a run asked to stop early (used to exercise --resume).
struct Interrupted : Error {
    using Error::Error;
};

class Runner {
public:
    Runner(ExperimentConfig cfg, fs::path out, bool resume, std::size_t halt_at = 0)
        : cfg_(std::move(cfg)), out_(std::move(out)), resume_(resume), halt_at_(halt_at) {
        fs::create_directories(out_ / "ckpt");
    }

    const ExperimentConfig& cfg() const { return cfg_; }
    const fs::path& out() const { return out_; }
    bool resume() const { return resume_; }
    MetricsCsv& metrics() { return metrics_; }
    Outcome& outcome() { return outcome_; }

    /// Opens metrics.csv; on resume it is cut back to the most recent checkpoint.
    void open_metrics(const std::string& header, std::optional<std::size_t> resume_rows) {
        metrics_.open(out_ / "metrics.csv", header, resume_ ? resume_rows : std::nullopt);
    }

    /// Largest metrics row count recorded by any phase checkpoint.
    std::optional<std::size_t> phase_resume_rows() const {
        std::optional<std::size_t> best;
        if (!fs::exists(out_ / "ckpt")) return best;
        for (const auto& e : fs::directory_iterator(out_ / "ckpt")) {
            if (e.path().extension() != ".ckpt") continue;
            std::ifstream in(e.path());
            ckpt::Reader r(in);
            try {
                ckpt::read_header(r, "phase");
                r.expect("name");
                r.word();
                r.expect("progress");
                r.size();
                const auto rows = r.size();
                best = std::max(best.value_or(0), rows);
            } catch (const ParseError&) {
            }
        }
        return best.value_or(0);
    }

    void report(const std::string& metric, double value, std::size_t n_train = 0, std::size_t n_test = 0,
                const std::string& note = "") {
        outcome_.reports.push_back({metric, value, n_train, n_test, cfg_.seed, note});
    }

    Rng stream(const std::string& label, std::uint64_t index = 0) const {
        return derive_stream(cfg_.seed, {key(label), index});
    }

    fs::path phase_path(const std::string& name) const { return out_ / "ckpt" / (name + ".ckpt"); }

    PhaseState run_phase(const PhaseSpec& spec) {
        const auto path = phase_path(spec.name);
        const std::string label = spec.streams.empty() ? spec.name : spec.streams;
        PhaseState st;
        if (resume_ && fs::exists(path)) {
            ckpt::load_file(path, [&](ckpt::Reader& r) { st = read_phase(r, spec.name, spec.topology); });
            if (st.done) {
                for (const auto& [k, v] : st.results) report(k, v, 0, 0, spec.name);
                return st;
            }
        } else {
            st.rng = stream("phase-train/" + label);
            spec.init(st);
        }
        auto save = [&] {
            st.metrics_rows = metrics_.rows();
            metrics_.flush();
            ckpt::save_file(path, [&](ckpt::Writer& w) { write_phase(w, spec.name, spec.topology, st); });
        };
        while (st.iteration < spec.iterations) {
            TrainRow row = spec.step(st);
            ++st.iteration;
            row.phase = spec.name;
            row.iteration = st.iteration;
            if (spec.evaluate && cfg_.eval_every > 0 &&
                (st.iteration % cfg_.eval_every == 0 || st.iteration == spec.iterations)) {
                Rng er = stream("phase-eval/" + label, st.iteration);
                row.metric = spec.eval_metric;
                row.value = spec.evaluate(st, er);
            }
            metrics_.write(row);
            if (halt_at_ > 0 && ++steps_done_ == halt_at_) {
                metrics_.flush();
                throw Interrupted("stopped after " + std::to_string(halt_at_) + " training steps");
            }
            if (cfg_.checkpoint_every > 0 && st.iteration % cfg_.checkpoint_every == 0 && st.iteration < spec.iterations)
                save();
        }
        Rng fr = stream("phase-final/" + label);
        st.results = spec.finish ? spec.finish(st, fr) : std::vector<std::pair<std::string, double>>{};
        st.done = true;
        save();
        for (const auto& [k, v] : st.results) report(k, v, 0, 0, spec.name);
        return st;
    }

    void write_results() const {
        std::ofstream out(out_ / "results.csv");
        eval::write_reports_csv(out, outcome_.reports);
    }

private:
    ExperimentConfig cfg_;
    fs::path out_;
    bool resume_;
    std::size_t halt_at_ = 0;
    std::size_t steps_done_ = 0;
    MetricsCsv metrics_;
    Outcome outcome_;
};

// ---------------------------------------------------------------------------
// Builders

inline BasisMatrix make_basis(const std::string& kind, std::size_t window, std::size_t count, double tau_f) {
    if (kind == "raised_cosine") return codec::raised_cosine_basis(window, count);
    if (kind == "identity") return codec::identity_basis(window);
    return codec::exp_basis(window, tau_f);
}

inline snn::SnnTopology make_topology(const ExperimentConfig& c, std::size_t n_exo, std::size_t n_readout) {
    return snn::SnnTopology::fully_connected(n_exo, c.hidden, n_readout, c.feedback);
}

inline snn::SnnParams make_params(const ExperimentConfig& c, const snn::SnnTopology& topo, Rng& rng) {
    snn::SnnParams p(topo, make_basis(c.basis, c.window, c.basis_count, c.tau_f),
                     make_basis(c.feedback_basis, c.window, c.feedback_count, c.tau_f));
    snn::init_normal(p, topo, rng, c.init_std);
    for (std::size_t i = 0; i < topo.n_neurons(); ++i) p.bias(i) = c.init_bias;
    return p;
}

inline nn::AnnParams make_disc(const ExperimentConfig& c, const std::string& arch, const Matrix& sample, Rng& rng) {
    return config::build_network(config::parse_conv_spec(arch), sample.rows(), sample.cols(), c.leaky_slope, rng);
}

inline train::Featurizer make_featurizer(train::Decode d, double tau_s, bool conditioned) {
    train::Featurizer f;
    f.decode = d;
    f.tau_s = tau_s;
    f.conditioned = conditioned;
    return f;
}

// ---------------------------------------------------------------------------
// Digits data

struct DigitData {
    std::vector<data::LabeledImage> train;
    std::vector<data::LabeledImage> test;
    std::size_t classes = 0;
};

inline std::vector<data::LabeledImage> load_all_digits(const ExperimentConfig& c) {
    if (!fs::exists(c.digits)) throw DatasetError("digits data set not found: '" + c.digits + "'");
    return data::load_digits(c.digits);
}

/// Train/test split restricted to the configured classes, relabelled 0..C-1 in list order.
inline DigitData digit_subset(const ExperimentConfig& c, const std::vector<data::LabeledImage>& all) {
    auto [train, test] = data::split_train_test(all, c.test_every);
    DigitData d;
    d.classes = c.classes.size();
    auto relabel = [&c](std::vector<data::LabeledImage> v) {
        v = data::filter_labels(v, c.classes);
        for (auto& img : v)
            img.label = static_cast<std::size_t>(std::find(c.classes.begin(), c.classes.end(), img.label) -
                                                 c.classes.begin());
        return v;
    };
    d.train = relabel(train);
    d.test = relabel(test);
    if (d.train.empty() || d.test.empty()) throw DatasetError("no images for the configured classes");
    return d;
}

/// Exogenous input for class c: row c spikes at every step.
inline SpikeTrain label_input(std::size_t label, std::size_t classes, std::size_t steps) {
    return eval::class_target(label, classes, steps);
}

inline Example conditioned_example(std::size_t label, std::size_t classes, std::size_t steps) {
    Example ex;
    ex.y = label_input(label, classes, steps);
    ex.condition = codec::one_hot(label, classes);
    ex.label = label;
    return ex;
}

/// Real example: decoded-vector discriminators see the raw pixels, the spike
/// discriminator sees `encoded` (rate-encoded pixels) stacked over y.
inline Example digit_example(const data::LabeledImage& img, std::size_t classes, std::size_t steps,
                             const train::Featurizer& feat, const SpikeTrain* encoded = nullptr) {
    Example ex = conditioned_example(img.label, classes, steps);
    if (feat.decode == train::Decode::none) {
        if (!encoded) throw UsageError("digit_example: spike discriminator needs encoded real data");
        ex.real = feat.from_spikes(*encoded, ex);
    } else {
        ex.real = feat.from_vector(std::vector<double>(img.pixels.begin(), img.pixels.end()), ex);
    }
    return ex;
}

inline std::vector<SpikeTrain> encode_all(const std::vector<data::LabeledImage>& imgs, std::size_t steps, Rng& rng) {
    std::vector<SpikeTrain> out;
    out.reserve(imgs.size());
    for (const auto& img : imgs) out.push_back(codec::rate_encode(img.pixels, steps, rng));
    return out;
}

// ---------------------------------------------------------------------------
// Shared step closures

inline std::vector<Example> draw_batch(const std::vector<Example>& pool, std::size_t b, Rng& rng) {
    std::vector<Example> batch;
    batch.reserve(b);
    for (std::size_t k = 0; k < b; ++k) batch.push_back(pool[uniform_index(rng, pool.size())]);
    return batch;
}

inline TrainRow gan_row(const train::StepMetrics& m) {
    TrainRow r;
    r.disc_loss = m.disc_loss;
    r.gen_loss = m.gen_loss;
    r.d_real = m.mean_d_real;
    r.d_synth = m.mean_d_synth;
    r.reward = m.mean_reward;
    return r;
}

inline std::function<TrainRow(PhaseState&)> gan_step(const snn::SnnTopology& topo, const std::vector<Example>& pool,
                                                     const train::Featurizer& feat, const train::TrainConfig& tc) {
    return [&topo, &pool, feat, tc](PhaseState& st) {
        const auto batch = draw_batch(pool, tc.batch, st.rng);
        snn::Generator gen{topo, std::move(st.particles[0])};
        const auto m = train::spikegan_step(gen, st.disc, batch, feat, tc, st.rng);
        st.particles[0] = std::move(gen.params);
        return gan_row(m);
    };
}

inline std::function<TrainRow(PhaseState&)> ml_step(const snn::SnnTopology& topo,
                                                    const std::vector<train::MlExample>& pool,
                                                    const train::TrainConfig& tc) {
    return [&topo, &pool, tc](PhaseState& st) {
        std::vector<train::MlExample> batch;
        for (std::size_t k = 0; k < tc.batch; ++k) batch.push_back(pool[uniform_index(st.rng, pool.size())]);
        snn::Generator gen{topo, std::move(st.particles[0])};
        const auto m = train::ml_train_step(gen, batch, tc, st.rng);
        st.particles[0] = std::move(gen.params);
        TrainRow r;
        r.log_lik = m.mean_visible_log_lik;
        return r;
    };
}

/// Class-conditional synthetic feature vectors from one generator.
inline eval::LabeledSet synthetic_set(const snn::SnnTopology& topo, const snn::SnnParams& p,
                                      const train::Featurizer& feat, std::size_t classes, std::size_t steps,
                                      std::size_t per_class, Rng& rng, bool unconditioned = false) {
    const snn::Generator gen{topo, p};
    return eval::sample_labeled(
        gen, feat, classes, per_class,
        [&](std::size_t c) {
            Example ex = conditioned_example(c, classes, steps);
            if (unconditioned) ex.y = data::step_input(steps);
            return ex;
        },
        rng);
}

// ---------------------------------------------------------------------------
// Plots

inline void plot_training_curves(const Runner& run, const std::string& phase, const std::string& tag) {
    if (!run.cfg().plots) return;
    const auto cols = read_columns(run.out() / "metrics.csv",
                                   {"iteration", "disc_loss", "gen_loss", "mean_D_real", "mean_D_synth", "log_lik",
                                    "eval_value"},
                                   "phase", phase);
    if (!cols.count("iteration") || cols.at("iteration").empty()) return;
    const auto& it = cols.at("iteration");
    auto series = [&](const std::string& name) { return svg::Series{name, it, cols.at(name)}; };
    auto finite = [&](const std::string& name) {
        for (double v : cols.at(name))
            if (std::isfinite(v)) return true;
        return false;
    };
    if (finite("disc_loss"))
        svg::line_plot(run.out() / ("losses-" + tag + ".svg"), "losses (" + phase + ")",
                       {series("disc_loss"), series("gen_loss")});
    if (finite("mean_D_real"))
        svg::line_plot(run.out() / ("discriminator-" + tag + ".svg"), "discriminator outputs (" + phase + ")",
                       {series("mean_D_real"), series("mean_D_synth")});
    if (finite("log_lik"))
        svg::line_plot(run.out() / ("loglik-" + tag + ".svg"), "visible log-likelihood (" + phase + ")",
                       {series("log_lik")});
    svg::Series ev{"eval", {}, {}};
    for (std::size_t k = 0; k < it.size(); ++k)
        if (std::isfinite(cols.at("eval_value")[k])) ev.x.push_back(it[k]), ev.y.push_back(cols.at("eval_value")[k]);
    if (!ev.x.empty()) svg::line_plot(run.out() / ("eval-" + tag + ".svg"), "periodic evaluation (" + phase + ")", {ev});
}

inline void plot_samples(const Runner& run, const std::string& file, const std::string& title,
                         const eval::LabeledSet& set, std::size_t per_class) {
    if (!run.cfg().plots) return;
    std::vector<std::vector<double>> imgs;
    std::map<std::size_t, std::size_t> taken;
    for (std::size_t i = 0; i < set.size(); ++i)
        if (taken[set.y[i]]++ < per_class) imgs.push_back(set.x[i]);
    svg::image_grid(run.out() / file, title, imgs, data::kImageSide, per_class);
}

inline void pca_outputs(Runner& run, const std::string& tag, const std::vector<std::vector<double>>& real,
                        const std::vector<std::vector<double>>& synth) {
    const auto p = eval::pca_compare(real, synth, run.cfg().pca_components);
    std::ofstream csv(run.out() / ("pca-" + tag + ".csv"));
    eval::write_pca_csv(csv, p);
    if (!run.cfg().plots || p.components.cols() < 2) return;
    auto to_series = [](const std::string& name, const Eigen::MatrixXd& m) {
        svg::Series s{name, {}, {}};
        for (Eigen::Index i = 0; i < m.rows(); ++i) s.x.push_back(m(i, 0)), s.y.push_back(m(i, 1));
        return s;
    };
    svg::scatter_plot(run.out() / ("pca-" + tag + ".svg"), "PCA of real vs synthetic (" + tag + ")",
                      {to_series("real", p.real), to_series("synthetic", p.synthetic)});
}

// ---------------------------------------------------------------------------
// digits-gan and digits-noise

/// Adversarial training on decoded digit images; returns the final generator.
inline PhaseState digits_phase(Runner& run, const std::string& name, const DigitData& d, train::Decode decode,
                               const std::string& eval_metric, const eval::LabeledSet& eval_real_train,
                               const eval::LabeledSet& eval_real_test, const std::string& streams = "") {
    const auto& c = run.cfg();
    const std::size_t T = c.train.steps;
    const auto feat = make_featurizer(decode, c.tau_s, true);
    const auto topo = make_topology(c, d.classes, data::kPixels);
    std::vector<Example> pool;
    for (const auto& img : d.train) pool.push_back(digit_example(img, d.classes, T, feat));
    const auto spec = c.classifier_spec();

    auto synth = [&, topo](const PhaseState& st, std::size_t per_class, Rng& rng) {
        return synthetic_set(topo, st.particles[0], feat, d.classes, T, per_class, rng);
    };
    auto score = [&, synth](const PhaseState& st, Rng& rng) {
        const auto s = synth(st, c.samples_per_class, rng);
        return eval_metric == "tstr" ? eval::tstr(s, eval_real_test, d.classes, spec, rng)
                                     : eval::trts(eval_real_train, s, d.classes, spec, rng);
    };

    PhaseSpec ps;
    ps.name = name;
    ps.streams = streams;
    ps.topology = topo;
    ps.iterations = c.train.iterations;
    ps.init = [&](PhaseState& st) {
        st.particles = {make_params(c, topo, st.rng)};
        st.disc = make_disc(c, c.arch, pool[0].real, st.rng);
    };
    ps.step = gan_step(ps.topology, pool, feat, c.train);
    ps.eval_metric = eval_metric;
    ps.evaluate = score;
    ps.finish = [&, synth, score](const PhaseState& st, Rng& rng) {
        std::vector<std::pair<std::string, double>> res;
        res.emplace_back(eval_metric + "/" + name, score(st, rng));
        const auto s = synth(st, c.samples_per_class, rng);
        plot_samples(run, "samples-" + name + ".svg", "decoded samples (" + name + ")", s, 8);
        pca_outputs(run, name, eval_real_test.x, s.x);
        return res;
    };
    auto st = run.run_phase(ps);
    plot_training_curves(run, name, name);
    return st;
}

inline double real_baseline(const ExperimentConfig& c, const eval::LabeledSet& train, const eval::LabeledSet& test,
                            std::size_t classes, Rng rng) {
    return eval::accuracy(eval::train_classifier(train, classes, c.classifier_spec(), rng), test);
}

inline void run_digits_gan(Runner& run) {
    const auto& c = run.cfg();
    const auto d = digit_subset(c, load_all_digits(c));
    const auto train_set = eval::from_images(d.train), test_set = eval::from_images(d.test);
    run.open_metrics(kTrainHeader, run.phase_resume_rows());
    run.report("baseline/real", real_baseline(c, train_set, test_set, d.classes, run.stream("baseline")),
               d.train.size(), d.test.size(), "classifier trained and tested on real images");
    digits_phase(run, "gan", d, c.decode_mode(), "tstr", train_set, test_set);
}

inline void run_digits_noise(Runner& run) {
    const auto& c = run.cfg();
    const auto clean = digit_subset(c, load_all_digits(c));
    const auto clean_train = eval::from_images(clean.train);
    run.open_metrics(kTrainHeader, run.phase_resume_rows());
    // TRTS classifier is trained on the uncorrupted training images at every level.
    Rng base_rng = run.stream("baseline");
    const auto clf = eval::train_classifier(clean_train, clean.classes, c.classifier_spec(), base_rng);
    std::vector<double> levels, trts, base;
    for (std::size_t k = 0; k < c.noise_levels.size(); ++k) {
        const double level = c.noise_levels[k];
        DigitData d = clean;
        Rng noise = run.stream("noise", k);
        for (auto& img : d.train) img = data::corrupt(img, level, noise);
        for (auto& img : d.test) img = data::corrupt(img, level, noise);
        const auto noisy_test = eval::from_images(d.test);
        char name[32];
        std::snprintf(name, sizeof name, "noise-%g", level);
        run.report(std::string("baseline/") + name, eval::accuracy(clf, noisy_test), clean.train.size(),
                   d.test.size(), "clean-trained classifier tested on noisy real images");
        // Levels share their random streams (common random numbers) and differ
        // only in the corruption of the training data.
        digits_phase(run, name, d, c.decode_mode(), "trts", clean_train, noisy_test, "noise-levels");
        levels.push_back(level);
        trts.push_back(run.outcome().value(std::string("trts/") + name));
        base.push_back(run.outcome().value(std::string("baseline/") + name));
    }
    if (c.plots)
        svg::line_plot(run.out() / "trts-vs-noise.svg", "TRTS vs noisy-pixel fraction",
                       {{"trts", levels, trts}, {"noisy-real baseline", levels, base}}, "noise fraction", "accuracy");
}

// ---------------------------------------------------------------------------
// neuromorphic-gan: TSTR of spiking data sets

inline void run_neuromorphic(Runner& run) {
    const auto& c = run.cfg();
    const auto d = digit_subset(c, load_all_digits(c));
    const std::size_t T = c.train.steps;
    Rng enc = run.stream("encode");
    const auto train_spikes = encode_all(d.train, T, enc);
    const auto test_spikes = encode_all(d.test, T, enc);
    std::vector<std::size_t> train_labels, test_labels;
    for (const auto& img : d.train) train_labels.push_back(img.label);
    for (const auto& img : d.test) test_labels.push_back(img.label);
    run.open_metrics(kTrainHeader, run.phase_resume_rows());

    // TSTR: classifier trained on spike trains with labels, tested on encoded real test data.
    auto tstr_spikes = [&](const std::vector<SpikeTrain>& xs, const std::vector<std::size_t>& ys, Rng& rng) {
        if (c.classifier == "snn") {
            eval::SnnClassifierSpec s;
            s.hidden = c.snn_hidden;
            s.window = c.window;
            s.epochs = c.snn_epochs;
            s.lr = c.snn_lr;
            const auto clf = eval::train_snn_classifier(xs, ys, d.classes, s, rng);
            return eval::accuracy(clf, test_spikes, test_labels, s.votes, rng);
        }
        eval::LabeledSet train, test;
        for (std::size_t i = 0; i < xs.size(); ++i) train.add(codec::rate_decode(xs[i]), ys[i]);
        for (std::size_t i = 0; i < test_spikes.size(); ++i) test.add(codec::rate_decode(test_spikes[i]), test_labels[i]);
        return eval::tstr(train, test, d.classes, c.classifier_spec(), rng);
    };
    auto sample_spikes = [&](const snn::SnnTopology& topo, const snn::SnnParams& p, bool conditioned, Rng& rng) {
        std::pair<std::vector<SpikeTrain>, std::vector<std::size_t>> out;
        for (std::size_t cl = 0; cl < d.classes; ++cl)
            for (std::size_t k = 0; k < c.samples_per_class; ++k) {
                const auto y = conditioned ? label_input(cl, d.classes, T) : data::step_input(T);
                out.first.push_back(snn::forward_sample(p, topo, y, rng, false).readout(topo));
                out.second.push_back(cl);
            }
        return out;
    };
    auto finish_for = [&](const std::string& name, bool conditioned, const snn::SnnTopology& topo) {
        return [&, name, conditioned, topo](const PhaseState& st, Rng& rng) {
            const auto [xs, ys] = sample_spikes(topo, st.particles[0], conditioned, rng);
            eval::LabeledSet shown;
            for (std::size_t i = 0; i < xs.size(); ++i) shown.add(codec::rate_decode(xs[i]), ys[i]);
            plot_samples(run, "samples-" + name + ".svg", "rate-decoded samples (" + name + ")", shown, 8);
            return std::vector<std::pair<std::string, double>>{{"tstr/" + name, tstr_spikes(xs, ys, rng)}};
        };
    };
    auto periodic_for = [&](bool conditioned, const snn::SnnTopology& topo) {
        return [&, conditioned, topo](const PhaseState& st, Rng& rng) {
            const auto [xs, ys] = sample_spikes(topo, st.particles[0], conditioned, rng);
            return tstr_spikes(xs, ys, rng);
        };
    };

    {
        Rng rng = run.stream("tstr-real");
        run.report("tstr/real", tstr_spikes(train_spikes, train_labels, rng), train_spikes.size(), test_spikes.size(),
                   "classifier trained on rate-encoded real data");
    }

    const auto topo = make_topology(c, d.classes, data::kPixels);
    // SpikeGAN with a discriminator on the raw spike trains.
    const auto feat_cnn = make_featurizer(train::Decode::none, c.tau_s, true);
    std::vector<Example> pool_cnn;
    for (std::size_t i = 0; i < d.train.size(); ++i)
        pool_cnn.push_back(digit_example(d.train[i], d.classes, T, feat_cnn, &train_spikes[i]));
    {
        PhaseSpec ps;
        ps.name = "cnn";
        ps.topology = topo;
        ps.iterations = c.train.iterations;
        ps.init = [&](PhaseState& st) {
            st.particles = {make_params(c, topo, st.rng)};
            st.disc = make_disc(c, c.cnn_arch, pool_cnn[0].real, st.rng);
        };
        ps.step = gan_step(ps.topology, pool_cnn, feat_cnn, c.train);
        ps.eval_metric = "tstr";
        ps.evaluate = periodic_for(true, topo);
        ps.finish = finish_for("cnn", true, topo);
        run.run_phase(ps);
        plot_training_curves(run, "cnn", "cnn");
    }
    // SpikeGAN through a fixed decoder against the natural images.
    const auto feat_dec = make_featurizer(c.decode_mode() == train::Decode::none ? train::Decode::rate : c.decode_mode(),
                                          c.tau_s, true);
    std::vector<Example> pool_dec;
    for (const auto& img : d.train) pool_dec.push_back(digit_example(img, d.classes, T, feat_dec));
    {
        PhaseSpec ps;
        ps.name = "decoder";
        ps.topology = topo;
        ps.iterations = c.train.iterations;
        ps.init = [&](PhaseState& st) {
            st.particles = {make_params(c, topo, st.rng)};
            st.disc = make_disc(c, c.arch, pool_dec[0].real, st.rng);
        };
        ps.step = gan_step(ps.topology, pool_dec, feat_dec, c.train);
        ps.eval_metric = "tstr";
        ps.evaluate = periodic_for(true, topo);
        ps.finish = finish_for("decoder", true, topo);
        run.run_phase(ps);
        plot_training_curves(run, "decoder", "decoder");
    }
    // Likelihood-trained generator; the read-outs are clamped to the data and
    // the network is driven by a step input, so samples ignore the label.
    const auto ml_topo = make_topology(c, 1, data::kPixels);
    std::vector<train::MlExample> pool_ml;
    for (const auto& x : train_spikes) pool_ml.push_back({x, data::step_input(T)});
    {
        PhaseSpec ps;
        ps.name = "ml";
        ps.topology = ml_topo;
        ps.iterations = c.train.iterations;
        ps.init = [&](PhaseState& st) { st.particles = {make_params(c, ml_topo, st.rng)}; };
        ps.step = ml_step(ps.topology, pool_ml, c.train);
        ps.eval_metric = "tstr";
        ps.evaluate = periodic_for(false, ml_topo);
        ps.finish = finish_for("ml", false, ml_topo);
        run.run_phase(ps);
        plot_training_curves(run, "ml", "ml");
    }
    if (c.plots) {
        std::vector<double> xs, ys;
        for (const char* n : {"real", "cnn", "decoder", "ml"}) {
            xs.push_back(static_cast<double>(xs.size()));
            ys.push_back(run.outcome().value(std::string("tstr/") + n));
        }
        svg::line_plot(run.out() / "tstr-variants.svg", "TSTR: real, cnn, decoder, ml", {{"tstr", xs, ys}}, "variant",
                       "accuracy");
    }
}

// ---------------------------------------------------------------------------
// Temporal burst/tonic experiments

/// min over modes of the best per-particle fraction; >= 0.7 means dual coverage.
inline double coverage_score(const std::vector<eval::ModeCoverage>& per) {
    double b = 0.0, t = 0.0;
    for (const auto& m : per) b = std::max(b, m.burst), t = std::max(t, m.tonic);
    return std::min(b, t);
}

inline void run_temporal(Runner& run) {
    const auto& c = run.cfg();
    const std::size_t T = c.train.steps;
    Rng data_rng = run.stream("temporal-data");
    const auto examples = data::make_burst_tonic(c.temporal_samples, T, data_rng);
    const auto y = data::step_input(T);
    const auto feat = make_featurizer(train::Decode::none, c.tau_s, false);
    std::vector<Example> pool;
    std::vector<train::MlExample> ml_pool;
    for (const auto& e : examples) {
        Example ex;
        ex.y = y;
        ex.real = feat.from_spikes(e.x, ex);
        pool.push_back(std::move(ex));
        ml_pool.push_back({e.x, y});
    }
    const auto topo = make_topology(c, 1, 1);
    const bool bayes = c.id == "temporal-bayes";
    const bool ml = c.id == "temporal-ml";
    const std::size_t n_particles = bayes ? c.particles : 1;
    run.open_metrics(kTrainHeader, run.phase_resume_rows());

    auto coverage = [&](const PhaseState& st, Rng& rng) {
        std::vector<eval::ModeCoverage> per;
        for (const auto& p : st.particles) {
            std::vector<SpikeTrain> s;
            for (std::size_t k = 0; k < c.coverage_samples; ++k) s.push_back(snn::forward_sample(p, topo, y, rng, false).readout(topo));
            per.push_back(eval::mode_coverage(s));
        }
        return per;
    };

    PhaseSpec ps;
    ps.name = c.id;
    ps.topology = topo;
    ps.iterations = c.train.iterations;
    ps.init = [&](PhaseState& st) {
        for (std::size_t j = 0; j < n_particles; ++j) st.particles.push_back(make_params(c, topo, st.rng));
        if (!ml) st.disc = make_disc(c, c.arch, pool[0].real, st.rng);
    };
    if (ml) {
        ps.step = ml_step(ps.topology, ml_pool, c.train);
    } else if (bayes) {
        ps.step = [&](PhaseState& st) {
            const auto batch = draw_batch(pool, c.train.batch, st.rng);
            const auto m = train::bayes_spikegan_step(topo, st.particles, st.disc, batch, feat, c.train, st.rng);
            return gan_row(m.overall);
        };
    } else {
        ps.step = gan_step(ps.topology, pool, feat, c.train);
    }
    ps.eval_metric = "coverage";
    ps.evaluate = [&](const PhaseState& st, Rng& rng) { return coverage_score(coverage(st, rng)); };
    ps.finish = [&](const PhaseState& st, Rng& rng) {
        const auto per = coverage(st, rng);
        std::vector<std::pair<std::string, double>> res;
        for (std::size_t j = 0; j < per.size(); ++j) {
            const auto p = "particle" + std::to_string(j);
            res.emplace_back(p + "/burst", per[j].burst);
            res.emplace_back(p + "/tonic", per[j].tonic);
            res.emplace_back(p + "/neither", per[j].neither);
        }
        res.emplace_back("coverage", coverage_score(per));
        res.emplace_back("dual_coverage", eval::dual_coverage(per) ? 1.0 : 0.0);
        if (c.plots) {
            std::vector<SpikeTrain> rows;
            std::vector<std::string> labels;
            for (std::size_t k = 0; k < 6; ++k) {
                rows.push_back(examples[k].x);
                labels.push_back(std::string("real ") + data::mode_name(examples[k].mode));
            }
            for (std::size_t j = 0; j < st.particles.size(); ++j)
                for (std::size_t k = 0; k < 4; ++k) {
                    rows.push_back(snn::forward_sample(st.particles[j], topo, y, rng, false).readout(topo));
                    labels.push_back("particle " + std::to_string(j));
                }
            svg::raster_plot(run.out() / "rasters.svg", "real and generated spike trains (" + c.id + ")", rows, labels);
        }
        return res;
    };
    run.run_phase(ps);
    plot_training_curves(run, c.id, "train");
}

// ---------------------------------------------------------------------------
// meta-continual

inline constexpr const char* kMetaHeader = "t,i,task_id,within_task_iters,trts_accuracy,mean_D_real,mean_D_synth";

struct MetaTasks {
    const ExperimentConfig& cfg;
    const std::vector<data::LabeledImage>& train_images;
    const std::vector<data::LabeledImage>& test_images;
    std::map<std::size_t, data::DigitTask> tasks;
    std::map<std::size_t, std::vector<Example>> pools;

    const data::DigitTask& task(std::size_t t) {
        auto it = tasks.find(t);
        if (it != tasks.end()) return it->second;
        Rng rng = derive_stream(cfg.seed, {key("meta-task"), t});
        const auto& digits = cfg.meta_digits;
        const std::size_t a = uniform_index(rng, digits.size());
        std::size_t b = uniform_index(rng, digits.size() - 1);
        if (b >= a) ++b;
        const int rot = 90 * static_cast<int>(uniform_index(rng, 4));
        return tasks.emplace(t, data::make_task(digits[a], digits[b], rot, train_images)).first->second;
    }

    const std::vector<Example>& pool(std::size_t t) {
        auto it = pools.find(t);
        if (it != pools.end()) return it->second;
        const auto& tk = task(t);
        std::vector<Example> p;
        const auto feat = make_featurizer(train::Decode::rate, cfg.tau_s, true);
        for (const auto& img : tk.images) p.push_back(digit_example(img, 2, cfg.train.steps, feat));
        return pools.emplace(t, std::move(p)).first->second;
    }
};

inline double trts_of(const ExperimentConfig& c, const meta::ModelContext& ctx, const snn::SnnParams& theta,
                      const std::vector<data::LabeledImage>& real, Rng& rng) {
    const auto s = synthetic_set(ctx.topology, theta, ctx.featurizer, 2, c.train.steps, c.samples_per_class, rng);
    return eval::trts(eval::from_images(real), s, 2, c.classifier_spec(), rng);
}

inline void run_meta(Runner& run) {
    const auto& c = run.cfg();
    const auto all = load_all_digits(c);
    const auto [train_imgs, test_imgs] = data::split_train_test(all, c.test_every);
    MetaTasks tasks{c, train_imgs, test_imgs, {}, {}};

    meta::ModelContext ctx;
    ctx.topology = make_topology(c, 2, data::kPixels);
    ctx.featurizer = make_featurizer(train::Decode::rate, c.tau_s, true);
    ctx.cfg = c.train;
    meta::MetaConfig mc{c.meta_tasks_per_update, c.meta_examples_per_task, c.meta_within_steps, c.meta_step};
    meta::Schedule sched{c.meta_tasks, c.meta_batches_per_task, c.meta_batch_size, c.meta_serve_steps,
                         c.meta_eval_every};

    // Random initialisation shared by the continual run and the held-out baseline.
    meta::HyperParams init;
    {
        Rng rng = run.stream("meta-init");
        init.theta = make_params(c, ctx.topology, rng);
        init.Theta = make_disc(c, c.arch, tasks.pool(0)[0].real, rng);
    }

    const auto ckpt_path = run.out() / "ckpt" / "meta.ckpt";
    meta::ContinualState st;
    std::optional<std::size_t> rows;
    if (run.resume() && fs::exists(ckpt_path)) {
        ckpt::load_file(ckpt_path, [&](ckpt::Reader& r) {
            st = meta::read_state(r);
            r.expect("metrics_rows");
            rows = r.size();
        });
    } else {
        st.hp = init;
        st.rng = run.stream("meta-run");
    }
    run.open_metrics(kMetaHeader, rows.value_or(0));

    meta::ContinualHooks hooks;
    hooks.pool = [&](std::size_t t) -> const std::vector<Example>& { return tasks.pool(t); };
    hooks.task_id = [&](std::size_t t) { return tasks.task(t).id(); };
    hooks.evaluate = [&](const meta::HyperParams& hp, std::size_t t, Rng&) {
        // Separate stream so evaluation never perturbs training.
        Rng er = run.stream("meta-eval", t);
        return trts_of(c, ctx, hp.theta, tasks.task(t).images, er);
    };
    hooks.log = [&](const meta::MetricsRow& r) {
        meta::write_metrics_row(run.metrics().raw(), r);
        run.metrics().count_raw_row();
    };
    hooks.snapshot = [&](const meta::ContinualState& s) {
        run.metrics().flush();
        const auto n = run.metrics().rows();
        ckpt::save_file(ckpt_path, [&](ckpt::Writer& w) {
            meta::write_state(w, s, ctx.topology);
            w.tag("metrics_rows").size(n);
        });
    };
    meta::run_continual(st, sched, mc, ctx, hooks);
    run.metrics().flush();

    // Held-out pairs: adapt from the meta-learned and from the random initialisation.
    std::ofstream held(run.out() / "heldout.csv");
    held << "task,init,within_task_iters,trts_accuracy\n";
    const auto& hd = c.meta_heldout_digits;
    std::vector<std::size_t> checkpoints;
    for (std::size_t k : {std::size_t{0}, c.meta_heldout_steps / 4, c.meta_heldout_steps / 2, c.meta_heldout_steps})
        if (checkpoints.empty() || k > checkpoints.back()) checkpoints.push_back(k);
    std::map<std::string, std::vector<double>> curve_sum;
    double meta_sum = 0.0, rand_sum = 0.0;
    std::size_t n_tasks = 0;
    for (std::size_t a = 0; a < hd.size(); ++a)
        for (std::size_t b = a + 1; b < hd.size(); ++b, ++n_tasks) {
            const auto tk = data::make_task(hd[a], hd[b], 0, train_imgs);
            const auto tk_test = data::make_task(hd[a], hd[b], 0, test_imgs);
            std::vector<Example> pool;
            for (const auto& img : tk.images) pool.push_back(digit_example(img, 2, c.train.steps, ctx.featurizer));
            for (const auto* which : {"meta", "random"}) {
                meta::HyperParams hp = std::string(which) == "meta" ? st.hp : init;
                Rng rng = run.stream("heldout", n_tasks);
                std::size_t done = 0;
                auto& curve = curve_sum[which];
                curve.resize(checkpoints.size(), 0.0);
                for (std::size_t k = 0; k < checkpoints.size(); ++k) {
                    hp = meta::within_task_update(hp, pool, checkpoints[k] - done, ctx, rng);
                    done = checkpoints[k];
                    Rng er = run.stream("heldout-eval", n_tasks * 1000 + k);
                    const double acc = trts_of(c, ctx, hp.theta, tk_test.images, er);
                    held << tk.id() << ',' << which << ',' << done << ',' << num(acc) << '\n';
                    curve[k] += acc;
                    if (k + 1 == checkpoints.size()) (std::string(which) == "meta" ? meta_sum : rand_sum) += acc;
                }
            }
        }
    const double n = static_cast<double>(n_tasks);
    run.report("heldout/meta_trts", meta_sum / n, 0, n_tasks, "mean over held-out pairs");
    run.report("heldout/random_trts", rand_sum / n, 0, n_tasks, "mean over held-out pairs");
    run.report("heldout/gain", (meta_sum - rand_sum) / n, 0, n_tasks, "meta minus random initialisation");
    if (c.plots) {
        std::vector<double> xs(checkpoints.begin(), checkpoints.end());
        std::vector<svg::Series> series;
        for (auto& [which, sum] : curve_sum) {
            for (double& v : sum) v /= n;
            series.push_back({which + " init", xs, sum});
        }
        svg::line_plot(run.out() / "heldout.svg", "held-out TRTS vs within-task iterations", series,
                       "within-task iterations", "TRTS");
        const auto cols = read_columns(run.out() / "metrics.csv", {"t", "trts_accuracy"});
        svg::Series tr{"serving model", {}, {}};
        for (std::size_t k = 0; k < cols.at("t").size(); ++k)
            if (std::isfinite(cols.at("trts_accuracy")[k]))
                tr.x.push_back(cols.at("t")[k]), tr.y.push_back(cols.at("trts_accuracy")[k]);
        if (!tr.x.empty()) svg::line_plot(run.out() / "meta-trts.svg", "TRTS during continual meta-training", {tr}, "t");
    }
}

// ---------------------------------------------------------------------------
// gradcheck

inline void run_gradcheck(Runner& run) {
    const auto& c = run.cfg();
    const auto results = gradcheck::run_all(c.gradcheck_trials, c.gradcheck_episodes, c.seed);
    std::ofstream out(run.out() / "gradcheck.csv");
    gradcheck::write_csv(out, results);
    bool ok = true;
    for (const auto& r : results) {
        run.report("gradcheck/" + r.name, r.error, r.parameters, 0, r.pass ? "pass" : "FAIL");
        ok = ok && r.pass;
    }
    run.open_metrics(kTrainHeader, std::nullopt);
    if (!ok) run.outcome().exit_code = 3;
}

// ---------------------------------------------------------------------------
// Entry point

inline fs::path default_out(const ExperimentConfig& c) {
    return c.out.empty() ? fs::path("runs") / (c.id + "-seed" + std::to_string(c.seed)) : fs::path(c.out);
}

/// Runs the configured experiment into `out`, echoing the effective config.
/// A non-zero `halt_at` throws Interrupted after that many phase training steps.
inline Outcome run(ExperimentConfig cfg, const fs::path& base_dir, const fs::path& out, bool resume,
                   std::size_t halt_at = 0) {
    cfg.digits = fs::absolute(config::resolve(cfg.digits, base_dir)).lexically_normal().string();
    cfg.out = out.string();
    fs::create_directories(out);
    {
        std::ofstream echo(out / "config.ini");
        config::echo(echo, cfg);
    }
    Runner runner(cfg, out, resume, halt_at);
    if (cfg.id == "digits-gan") run_digits_gan(runner);
    else if (cfg.id == "digits-noise") run_digits_noise(runner);
    else if (cfg.id == "neuromorphic-gan") run_neuromorphic(runner);
    else if (cfg.id == "temporal-gan" || cfg.id == "temporal-bayes" || cfg.id == "temporal-ml") run_temporal(runner);
    else if (cfg.id == "meta-continual") run_meta(runner);
    else run_gradcheck(runner);
    runner.write_results();
    return runner.outcome();
}

}  // namespace spikegan::experiments
