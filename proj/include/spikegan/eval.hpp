#pragma once

// Measures of generator quality: train-on-synthetic/test-on-real and the
// reverse, PCA projections, and burst/tonic mode coverage.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "spikegan/common.hpp"
#include "spikegan/datasets.hpp"
#include "spikegan/nn.hpp"
#include "spikegan/snn.hpp"
#include "spikegan/spike_train.hpp"
#include "spikegan/training.hpp"

namespace spikegan::eval {

/// Feature vectors with class labels.
struct LabeledSet {
    std::vector<std::vector<double>> x;
    std::vector<std::size_t> y;

    std::size_t size() const { return x.size(); }
    void add(std::vector<double> features, std::size_t label) {
        x.push_back(std::move(features));
        y.push_back(label);
    }
};

inline LabeledSet from_images(const std::vector<data::LabeledImage>& imgs) {
    LabeledSet s;
    for (const auto& img : imgs) s.add({img.pixels.begin(), img.pixels.end()}, img.label);
    return s;
}

// ---------------------------------------------------------------------------
// MLP classifier

struct ClassifierSpec {
    std::vector<std::size_t> hidden{100, 100};
    std::size_t epochs = 30;
    std::size_t batch = 16;
    double lr = 0.05;
};

inline nn::AnnParams make_classifier(std::size_t inputs, std::size_t classes, const ClassifierSpec& spec, Rng& rng) {
    nn::NetworkBuilder b(inputs, 1);
    for (auto h : spec.hidden) b.dense(h, nn::Activation::relu());
    b.dense(classes, nn::Activation::identity());
    auto net = b.build();
    nn::glorot_init(net, rng);
    return net;
}

/// Minibatch SGD on softmax cross-entropy over a shuffled epoch order.
inline nn::AnnParams train_classifier(const LabeledSet& train, std::size_t classes, const ClassifierSpec& spec,
                                      Rng& rng) {
    if (train.size() == 0) throw DatasetError("train_classifier: empty training set");
    auto net = make_classifier(train.x[0].size(), classes, spec, rng);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    Matrix grad_logits;
    for (std::size_t e = 0; e < spec.epochs; ++e) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
        for (std::size_t start = 0; start < order.size(); start += spec.batch) {
            const std::size_t end = std::min(order.size(), start + spec.batch);
            auto g = net.zeros_like();
            for (std::size_t k = start; k < end; ++k) {
                const auto& xi = train.x[order[k]];
                auto [logits, tape] = nn::forward(net, Matrix::column(xi));
                nn::softmax_cross_entropy(logits, train.y[order[k]], grad_logits);
                axpy(1.0, nn::backward(net, tape, grad_logits).values(), g.values());
            }
            nn::sgd_step(net, g, spec.lr / static_cast<double>(end - start));
        }
    }
    return net;
}

inline std::size_t predict(const nn::AnnParams& net, std::span<const double> x) {
    const auto out = nn::forward(net, Matrix::column({x.begin(), x.end()})).first;
    return nn::argmax(out.values());
}

inline double accuracy(const nn::AnnParams& net, const LabeledSet& test) {
    if (test.size() == 0) throw DatasetError("accuracy: empty test set");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < test.size(); ++i) hit += predict(net, test.x[i]) == test.y[i];
    return static_cast<double>(hit) / static_cast<double>(test.size());
}

inline void require_all_classes(const LabeledSet& s, std::size_t classes, const char* what) {
    std::vector<bool> seen(classes, false);
    for (auto y : s.y) {
        if (y >= classes) throw DatasetError(std::string(what) + ": label " + std::to_string(y) + " out of range");
        seen[y] = true;
    }
    for (std::size_t c = 0; c < classes; ++c)
        if (!seen[c]) throw DatasetError(std::string(what) + ": class " + std::to_string(c) + " absent");
}

/// Train on synthetic, test on real.
inline double tstr(const LabeledSet& synthetic, const LabeledSet& real_test, std::size_t classes,
                   const ClassifierSpec& spec, Rng& rng) {
    require_all_classes(synthetic, classes, "tstr synthetic set");
    return accuracy(train_classifier(synthetic, classes, spec, rng), real_test);
}

/// Train on real, test on synthetic.
inline double trts(const LabeledSet& real_train, const LabeledSet& synthetic, std::size_t classes,
                   const ClassifierSpec& spec, Rng& rng) {
    require_all_classes(synthetic, classes, "trts synthetic set");
    return accuracy(train_classifier(real_train, classes, spec, rng), synthetic);
}

/// Synthetic labelled set: for each label, n samples decoded from the generator
/// driven by the condition built by `make_example(label)`.
template <class MakeExample>
LabeledSet sample_labeled(const snn::Generator& gen, const train::Featurizer& feat, std::size_t classes,
                          std::size_t per_class, MakeExample&& make_example, Rng& rng) {
    LabeledSet s;
    for (std::size_t c = 0; c < classes; ++c) {
        const train::Example ex = make_example(c);
        for (std::size_t k = 0; k < per_class; ++k) {
            const auto x = gen.sample(ex.y, rng).readout(gen.topology);
            s.add(feat.decode_vector(x), c);
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// PCA

struct PcaResult {
    Eigen::MatrixXd components;  // features x n_components, orthonormal columns
    Eigen::VectorXd mean;
    Eigen::VectorXd eigenvalues;  // descending
    Eigen::MatrixXd real;        // n_real x n_components
    Eigen::MatrixXd synthetic;   // n_synth x n_components
};

inline Eigen::MatrixXd to_eigen(const std::vector<std::vector<double>>& rows) {
    Eigen::MatrixXd m(rows.size(), rows.empty() ? 0 : rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
    return m;
}

/// Components are fitted on the real set only and both sets are projected.
inline PcaResult pca_compare(const std::vector<std::vector<double>>& real,
                             const std::vector<std::vector<double>>& synthetic, std::size_t n_components = 2) {
    if (real.size() < n_components || real.empty())
        throw UsageError("pca_compare: " + std::to_string(real.size()) + " samples for " +
                         std::to_string(n_components) + " components");
    const Eigen::MatrixXd r = to_eigen(real);
    if (n_components > static_cast<std::size_t>(r.cols())) throw UsageError("pca_compare: too many components");
    PcaResult out;
    out.mean = r.colwise().mean();
    const Eigen::MatrixXd centred = r.rowwise() - out.mean.transpose();
    const Eigen::MatrixXd cov = centred.transpose() * centred / static_cast<double>(std::max<std::size_t>(real.size() - 1, 1));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    const auto k = static_cast<Eigen::Index>(n_components);
    const auto d = cov.rows();
    // Eigen sorts ascending; take the last k columns in reverse.
    out.components = es.eigenvectors().rightCols(k).rowwise().reverse();
    out.eigenvalues = es.eigenvalues().tail(k).reverse();
    out.real = centred * out.components;
    if (!synthetic.empty()) {
        const Eigen::MatrixXd s = to_eigen(synthetic);
        if (s.cols() != d) throw UsageError("pca_compare: feature dimensions differ");
        out.synthetic = (s.rowwise() - out.mean.transpose()) * out.components;
    } else {
        out.synthetic = Eigen::MatrixXd(0, k);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Burst / tonic mode coverage

enum class ModeLabel { burst, tonic, neither };

inline const char* mode_label_name(ModeLabel m) {
    switch (m) {
        case ModeLabel::burst: return "burst";
        case ModeLabel::tonic: return "tonic";
        case ModeLabel::neither: return "neither";
    }
    return "?";
}

inline constexpr double kCoverageThreshold = 0.5;

/// Pearson correlation; 0 when either side is constant.
inline double pearson(std::span<const double> a, std::span<const double> b) {
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n, mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0.0 || sbb <= 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

/// Best correlation of x against any phase of a mode's template, over every
/// cyclic rotation of x. Maximising over rotations makes the score invariant to
/// cyclic shifts of the input.
inline double mode_score(const SpikeTrain& x, data::SpikeMode m) {
    const std::size_t steps = x.steps();
    std::vector<double> v(steps), rotated(steps);
    for (std::size_t t = 0; t < steps; ++t) v[t] = x(0, t);
    std::vector<std::vector<double>> templates;
    for (std::size_t p = 0; p < data::mode_pattern(m).period(); ++p) {
        const auto tpl = data::mode_template(m, p, steps);
        std::vector<double> tv(steps);
        for (std::size_t t = 0; t < steps; ++t) tv[t] = tpl(0, t);
        templates.push_back(std::move(tv));
    }
    double best = -1.0;
    for (std::size_t s = 0; s < steps; ++s) {
        for (std::size_t t = 0; t < steps; ++t) rotated[t] = v[(t + s) % steps];
        for (const auto& tv : templates) best = std::max(best, pearson(rotated, tv));
    }
    return best;
}

struct ModeAssignment {
    ModeLabel label = ModeLabel::neither;
    double burst_score = 0.0;
    double tonic_score = 0.0;
};

inline ModeAssignment assign_mode(const SpikeTrain& x) {
    if (x.neurons() != 1) throw UsageError("assign_mode: expects a single-neuron train");
    if (x.steps() < data::mode_pattern(data::SpikeMode::burst).period())
        throw UsageError("assign_mode: train shorter than one burst period");
    ModeAssignment a;
    a.burst_score = mode_score(x, data::SpikeMode::burst);
    a.tonic_score = mode_score(x, data::SpikeMode::tonic);
    const double best = std::max(a.burst_score, a.tonic_score);
    if (best < kCoverageThreshold) a.label = ModeLabel::neither;
    else a.label = a.burst_score >= a.tonic_score ? ModeLabel::burst : ModeLabel::tonic;
    return a;
}

struct ModeCoverage {
    double burst = 0.0;
    double tonic = 0.0;
    double neither = 0.0;
    std::vector<ModeAssignment> assignments;
};

inline ModeCoverage mode_coverage(const std::vector<SpikeTrain>& samples) {
    ModeCoverage c;
    if (samples.empty()) return c;
    for (const auto& s : samples) {
        const auto a = assign_mode(s);
        c.assignments.push_back(a);
        (a.label == ModeLabel::burst ? c.burst : a.label == ModeLabel::tonic ? c.tonic : c.neither) += 1.0;
    }
    const double n = static_cast<double>(samples.size());
    c.burst /= n;
    c.tonic /= n;
    c.neither /= n;
    return c;
}

/// True when some model is >= `fraction` burst and some (other or same) model
/// is >= `fraction` tonic.
inline bool dual_coverage(const std::vector<ModeCoverage>& per_model, double fraction = 0.7) {
    bool burst = false, tonic = false;
    for (const auto& c : per_model) {
        burst = burst || c.burst >= fraction;
        tonic = tonic || c.tonic >= fraction;
    }
    return burst && tonic;
}

// ---------------------------------------------------------------------------
// Spiking classifier trained by maximum likelihood: inputs drive the network,
// one visible neuron per class is clamped to fire throughout when its class is
// the label. Prediction picks the visible neuron with the most spikes when the
// network runs freely.

struct SnnClassifierSpec {
    std::size_t hidden = 16;
    std::size_t window = 5;
    std::size_t epochs = 5;
    std::size_t batch = 8;
    double lr = 0.05;
    std::size_t votes = 5;  // free-running episodes per prediction
};

struct SnnClassifier {
    snn::Generator net;
    std::size_t classes = 0;
};

inline SpikeTrain class_target(std::size_t label, std::size_t classes, std::size_t steps) {
    SpikeTrain s(classes, steps);
    for (std::size_t t = 0; t < steps; ++t) s.set(label, t, true);
    return s;
}

inline SnnClassifier train_snn_classifier(const std::vector<SpikeTrain>& inputs, const std::vector<std::size_t>& labels,
                                          std::size_t classes, const SnnClassifierSpec& spec, Rng& rng) {
    if (inputs.empty()) throw DatasetError("train_snn_classifier: empty training set");
    const std::size_t steps = inputs[0].steps();
    auto topo = snn::SnnTopology::fully_connected(inputs[0].neurons(), spec.hidden, classes, true);
    snn::SnnParams p(topo, codec::exp_basis(spec.window, 2.0), codec::exp_basis(spec.window, 2.0));
    snn::init_normal(p, topo, rng);
    SnnClassifier c{{topo, p}, classes};
    train::TrainConfig cfg;
    cfg.steps = steps;
    cfg.lr_gen = spec.lr;
    std::vector<std::size_t> order(inputs.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t e = 0; e < spec.epochs; ++e) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
        for (std::size_t start = 0; start < order.size(); start += spec.batch) {
            std::vector<train::MlExample> batch;
            for (std::size_t k = start; k < std::min(order.size(), start + spec.batch); ++k)
                batch.push_back({class_target(labels[order[k]], classes, steps), inputs[order[k]]});
            train::ml_train_step(c.net, batch, cfg, rng);
        }
    }
    return c;
}

inline std::size_t predict(const SnnClassifier& c, const SpikeTrain& input, std::size_t votes, Rng& rng) {
    std::vector<double> counts(c.classes, 0.0);
    for (std::size_t v = 0; v < votes; ++v) {
        const auto tr = snn::forward_sample(c.net.params, c.net.topology, input, rng, false);
        const auto& ro = c.net.topology.readout();
        for (std::size_t k = 0; k < c.classes; ++k) counts[k] += static_cast<double>(tr.spikes.count(ro[k]));
        // Ties broken by summed membrane potential.
        for (std::size_t k = 0; k < c.classes; ++k)
            for (std::size_t t = 0; t < input.steps(); ++t) counts[k] += 1e-6 * sigmoid(tr.potentials(ro[k], t));
    }
    return nn::argmax(counts);
}

inline double accuracy(const SnnClassifier& c, const std::vector<SpikeTrain>& inputs,
                       const std::vector<std::size_t>& labels, std::size_t votes, Rng& rng) {
    if (inputs.empty()) throw DatasetError("accuracy: empty test set");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) hit += predict(c, inputs[i], votes, rng) == labels[i];
    return static_cast<double>(hit) / static_cast<double>(inputs.size());
}

// ---------------------------------------------------------------------------
// Report

struct EvalReport {
    std::string metric;
    double value = 0.0;
    std::size_t n_train = 0;
    std::size_t n_test = 0;
    std::uint64_t seed = 0;
    std::string note;
};

inline void write_reports_csv(std::ostream& out, const std::vector<EvalReport>& reports) {
    out << "metric,value,n_train,n_test,seed,note\n";
    for (const auto& r : reports)
        out << r.metric << ',' << r.value << ',' << r.n_train << ',' << r.n_test << ',' << r.seed << ',' << r.note
            << '\n';
}

/// Two columns per set: real_pc1, real_pc2, synth_pc1, synth_pc2; shorter set padded with blanks.
inline void write_pca_csv(std::ostream& out, const PcaResult& p) {
    const auto k = p.real.cols();
    for (Eigen::Index c = 0; c < k; ++c) out << (c ? "," : "") << "real_pc" << c + 1;
    for (Eigen::Index c = 0; c < k; ++c) out << ",synth_pc" << c + 1;
    out << '\n';
    const auto rows = std::max(p.real.rows(), p.synthetic.rows());
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < k; ++c) {
            if (c) out << ',';
            if (r < p.real.rows()) out << p.real(r, c);
        }
        for (Eigen::Index c = 0; c < k; ++c) {
            out << ',';
            if (r < p.synthetic.rows()) out << p.synthetic(r, c);
        }
        out << '\n';
    }
}

}  // namespace spikegan::eval
