#pragma once

// Probabilistic GLM spiking network: topology, parameters, sequential sampling,
// likelihoods and the per-neuron local gradients that drive every learning rule.
//
// Indexing: "sources" use a unified index space where [0, n_exogenous) are the
// exogenous input rows and n_exogenous + i is neuron i. Neurons are 0-based and
// split into hidden and read-out sets. Time is 0-based internally: the window at
// step t covers spikes t-1, ..., t-window, with anything before t=0 equal to zero.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include "spikegan/codec.hpp"
#include "spikegan/common.hpp"
#include "spikegan/spike_train.hpp"
#include "spikegan/tensor.hpp"

namespace spikegan::snn {

struct Synapse {
    std::size_t source = 0;  // unified source index
    std::size_t target = 0;  // neuron index

    friend bool operator==(const Synapse&, const Synapse&) = default;
};

class SnnTopology {
public:
    SnnTopology() = default;

    /// Validates the graph: hidden and read-out sets partition the neurons, no
    /// loops except per-neuron feedback, every read-out neuron is reachable from
    /// an exogenous input. Throws TopologyError otherwise.
    SnnTopology(std::size_t n_exogenous, std::vector<std::size_t> hidden, std::vector<std::size_t> readout,
                std::vector<Synapse> synapses, std::vector<bool> feedback)
        : n_exogenous_(n_exogenous),
          hidden_(std::move(hidden)),
          readout_(std::move(readout)),
          synapses_(std::move(synapses)),
          feedback_(std::move(feedback)) {
        n_neurons_ = hidden_.size() + readout_.size();
        validate();
    }

    /// Exogenous inputs feed every neuron, every hidden neuron feeds every
    /// read-out neuron. Hidden neurons are 0..H-1, read-out neurons H..H+R-1.
    static SnnTopology fully_connected(std::size_t n_exogenous, std::size_t n_hidden, std::size_t n_readout,
                                       bool feedback = true) {
        std::vector<std::size_t> hidden(n_hidden), readout(n_readout);
        for (std::size_t i = 0; i < n_hidden; ++i) hidden[i] = i;
        for (std::size_t i = 0; i < n_readout; ++i) readout[i] = n_hidden + i;
        std::vector<Synapse> syn;
        syn.reserve(n_exogenous * (n_hidden + n_readout) + n_hidden * n_readout);
        for (std::size_t i = 0; i < n_hidden + n_readout; ++i)
            for (std::size_t e = 0; e < n_exogenous; ++e) syn.push_back({e, i});
        for (std::size_t r = 0; r < n_readout; ++r)
            for (std::size_t h = 0; h < n_hidden; ++h) syn.push_back({n_exogenous + h, n_hidden + r});
        return SnnTopology(n_exogenous, std::move(hidden), std::move(readout), std::move(syn),
                           std::vector<bool>(n_hidden + n_readout, feedback));
    }

    std::size_t n_exogenous() const { return n_exogenous_; }
    std::size_t n_neurons() const { return n_neurons_; }
    std::size_t n_sources() const { return n_exogenous_ + n_neurons_; }
    const std::vector<std::size_t>& hidden() const { return hidden_; }
    const std::vector<std::size_t>& readout() const { return readout_; }
    const std::vector<Synapse>& synapses() const { return synapses_; }
    const std::vector<bool>& feedback() const { return feedback_; }
    bool has_feedback(std::size_t neuron) const { return feedback_[neuron]; }
    /// Synapse indices terminating at a neuron, in synapse-list order.
    const std::vector<std::size_t>& incoming(std::size_t neuron) const { return incoming_[neuron]; }
    /// Causal evaluation order (topological, ties by neuron id).
    const std::vector<std::size_t>& order() const { return order_; }

    friend bool operator==(const SnnTopology& a, const SnnTopology& b) {
        return a.n_exogenous_ == b.n_exogenous_ && a.hidden_ == b.hidden_ && a.readout_ == b.readout_ &&
               a.synapses_ == b.synapses_ && a.feedback_ == b.feedback_;
    }

private:
    void validate() {
        const std::size_t n = n_neurons_;
        if (feedback_.size() != n) throw TopologyError("feedback flags must cover every neuron");
        std::vector<int> role(n, 0);
        for (auto h : hidden_) {
            if (h >= n || role[h] != 0) throw TopologyError("hidden/read-out ids must partition the neurons");
            role[h] = 1;
        }
        for (auto r : readout_) {
            if (r >= n || role[r] != 0) throw TopologyError("hidden/read-out ids must partition the neurons");
            role[r] = 2;
        }

        incoming_.assign(n, {});
        std::vector<std::vector<std::size_t>> out_edges(n_sources());
        std::vector<std::size_t> indegree(n, 0);
        for (std::size_t s = 0; s < synapses_.size(); ++s) {
            const auto& syn = synapses_[s];
            if (syn.target >= n || syn.source >= n_sources())
                throw TopologyError("synapse " + std::to_string(s) + " references an unknown node");
            if (syn.source == n_exogenous_ + syn.target)
                throw TopologyError("synapse " + std::to_string(s) + " is a self-loop; use the feedback flag");
            for (auto other : incoming_[syn.target])
                if (synapses_[other].source == syn.source)
                    throw TopologyError("duplicate synapse into neuron " + std::to_string(syn.target));
            incoming_[syn.target].push_back(s);
            out_edges[syn.source].push_back(syn.target);
            if (syn.source >= n_exogenous_) ++indegree[syn.target];
        }

        // Kahn's algorithm, smallest ready id first.
        std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
        for (std::size_t i = 0; i < n; ++i)
            if (indegree[i] == 0) ready.push(i);
        order_.clear();
        while (!ready.empty()) {
            const auto i = ready.top();
            ready.pop();
            order_.push_back(i);
            for (auto j : out_edges[n_exogenous_ + i])
                if (--indegree[j] == 0) ready.push(j);
        }
        if (order_.size() != n) throw TopologyError("synapse graph contains a loop; no causal order exists");

        std::vector<bool> reached(n_sources(), false);
        std::vector<std::size_t> stack;
        for (std::size_t e = 0; e < n_exogenous_; ++e) {
            reached[e] = true;
            stack.push_back(e);
        }
        while (!stack.empty()) {
            const auto s = stack.back();
            stack.pop_back();
            for (auto j : out_edges[s])
                if (!reached[n_exogenous_ + j]) {
                    reached[n_exogenous_ + j] = true;
                    stack.push_back(n_exogenous_ + j);
                }
        }
        for (auto r : readout_)
            if (!reached[n_exogenous_ + r])
                throw TopologyError("read-out neuron " + std::to_string(r) + " is unreachable from exogenous inputs");
    }

    std::size_t n_exogenous_ = 0;
    std::size_t n_neurons_ = 0;
    std::vector<std::size_t> hidden_;
    std::vector<std::size_t> readout_;
    std::vector<Synapse> synapses_;
    std::vector<bool> feedback_;
    std::vector<std::vector<std::size_t>> incoming_;
    std::vector<std::size_t> order_;
};

/// Trainable vector phi = {synaptic weights, feedback weights, biases} plus the
/// fixed bases. Layout of values(): per synapse K_a weights (synapse order),
/// per neuron K_b feedback weights, per neuron one bias.
class SnnParams {
public:
    SnnParams() = default;
    SnnParams(const SnnTopology& topo, BasisMatrix synaptic, BasisMatrix feedback)
        : syn_basis_(std::move(synaptic)),
          fb_basis_(std::move(feedback)),
          n_synapses_(topo.synapses().size()),
          n_neurons_(topo.n_neurons()) {
        if (syn_basis_.window() != fb_basis_.window())
            throw UsageError("SnnParams: synaptic and feedback bases need the same window length");
        values_.assign(n_synapses_ * syn_basis_.count() + n_neurons_ * (fb_basis_.count() + 1), 0.0);
    }

    const BasisMatrix& synaptic_basis() const { return syn_basis_; }
    const BasisMatrix& feedback_basis() const { return fb_basis_; }
    std::size_t window() const { return syn_basis_.window(); }
    std::size_t n_synapses() const { return n_synapses_; }
    std::size_t n_neurons() const { return n_neurons_; }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    std::size_t size() const { return values_.size(); }

    std::size_t synapse_offset(std::size_t s) const { return s * syn_basis_.count(); }
    std::size_t feedback_offset(std::size_t i) const {
        return n_synapses_ * syn_basis_.count() + i * fb_basis_.count();
    }
    std::size_t bias_offset(std::size_t i) const {
        return n_synapses_ * syn_basis_.count() + n_neurons_ * fb_basis_.count() + i;
    }

    std::span<double> synapse_weights(std::size_t s) {
        return {values_.data() + synapse_offset(s), syn_basis_.count()};
    }
    std::span<const double> synapse_weights(std::size_t s) const {
        return {values_.data() + synapse_offset(s), syn_basis_.count()};
    }
    std::span<double> feedback_weights(std::size_t i) {
        return {values_.data() + feedback_offset(i), fb_basis_.count()};
    }
    std::span<const double> feedback_weights(std::size_t i) const {
        return {values_.data() + feedback_offset(i), fb_basis_.count()};
    }
    double& bias(std::size_t i) { return values_[bias_offset(i)]; }
    double bias(std::size_t i) const { return values_[bias_offset(i)]; }

    bool compatible_with(const SnnTopology& topo) const {
        return n_synapses_ == topo.synapses().size() && n_neurons_ == topo.n_neurons();
    }
    bool same_shape(const SnnParams& o) const {
        return n_synapses_ == o.n_synapses_ && n_neurons_ == o.n_neurons_ && syn_basis_ == o.syn_basis_ &&
               fb_basis_ == o.fb_basis_;
    }

    friend bool operator==(const SnnParams&, const SnnParams&) = default;

private:
    BasisMatrix syn_basis_;
    BasisMatrix fb_basis_;
    std::size_t n_synapses_ = 0;
    std::size_t n_neurons_ = 0;
    std::vector<double> values_;
};

/// Weights ~ N(0, stddev^2), biases zero.
inline void init_normal(SnnParams& p, const SnnTopology& topo, Rng& rng, double stddev = 0.1) {
    auto v = p.values();
    std::fill(v.begin(), v.end(), 0.0);
    for (std::size_t s = 0; s < p.n_synapses(); ++s)
        for (double& w : p.synapse_weights(s)) w = stddev * standard_normal(rng);
    for (std::size_t i = 0; i < p.n_neurons(); ++i)
        if (topo.has_feedback(i))
            for (double& w : p.feedback_weights(i)) w = stddev * standard_normal(rng);
}

// ---------------------------------------------------------------------------
// Single-neuron primitives

inline double spike_probability(double u) { return sigmoid(u); }

struct PresynapticInput {
    std::span<const double> weights;       // K_a synaptic weights
    std::span<const std::uint8_t> window;  // s_{t-1}, ..., s_{t-window}
};

/// u = sum_j (A w_j) . window_j + (B w_fb) . feedback_window + bias.
inline double membrane_potential(const BasisMatrix& syn_basis, const BasisMatrix& fb_basis,
                                 std::span<const PresynapticInput> inputs, std::span<const double> fb_weights,
                                 std::span<const std::uint8_t> fb_window, double bias) {
    const std::size_t win = syn_basis.window();
    auto filtered = [win](const BasisMatrix& basis, std::span<const double> w, std::span<const std::uint8_t> s) {
        if (s.size() != win)
            throw UsageError("membrane_potential: window length " + std::to_string(s.size()) + " != " +
                             std::to_string(win));
        if (w.size() != basis.count()) throw UsageError("membrane_potential: weight count != basis count");
        double acc = 0.0;
        for (std::size_t l = 0; l < win; ++l) {
            if (!s[l]) continue;
            for (std::size_t k = 0; k < basis.count(); ++k) acc += basis(l, k) * w[k];
        }
        return acc;
    };
    double u = 0.0;
    for (const auto& in : inputs) u += filtered(syn_basis, in.weights, in.window);
    if (!fb_weights.empty()) u += filtered(fb_basis, fb_weights, fb_window);
    return u + bias;
}

struct LocalGradient {
    std::vector<double> weights;  // d/dw of log p(s | u) for the filter behind `window`
    double bias;                  // d/dgamma
};

/// grad_w = basis^T window * (s - sigmoid(u)); grad_bias = s - sigmoid(u).
inline LocalGradient local_gradient(const BasisMatrix& basis, std::span<const std::uint8_t> window, bool spike,
                                    double u) {
    if (window.size() != basis.window()) throw UsageError("local_gradient: window length mismatch");
    const double err = (spike ? 1.0 : 0.0) - sigmoid(u);
    LocalGradient g{std::vector<double>(basis.count(), 0.0), err};
    for (std::size_t l = 0; l < basis.window(); ++l)
        if (window[l])
            for (std::size_t k = 0; k < basis.count(); ++k) g.weights[k] += basis(l, k) * err;
    return g;
}

// ---------------------------------------------------------------------------
// Network-level simulation

namespace detail {

/// Filtered spike history at one step: basis^T window for every source (synaptic
/// basis) and every neuron (feedback basis).
struct Traces {
    std::vector<double> syn;  // n_sources * K_a
    std::vector<double> fb;   // n_neurons * K_b
};

inline bool source_spike(const SnnTopology& topo, const SpikeTrain& y, const SpikeTrain& s, std::size_t src,
                         std::size_t t) {
    return src < topo.n_exogenous() ? y(src, t) : s(src - topo.n_exogenous(), t);
}

inline void compute_traces(const SnnTopology& topo, const SnnParams& p, const SpikeTrain& y, const SpikeTrain& s,
                           std::size_t t, Traces& tr) {
    const auto& A = p.synaptic_basis();
    const auto& B = p.feedback_basis();
    const std::size_t ka = A.count(), kb = B.count(), win = p.window();
    tr.syn.assign(topo.n_sources() * ka, 0.0);
    tr.fb.assign(topo.n_neurons() * kb, 0.0);
    const std::size_t lags = std::min(win, t);
    for (std::size_t src = 0; src < topo.n_sources(); ++src) {
        const bool is_neuron = src >= topo.n_exogenous();
        const std::size_t i = is_neuron ? src - topo.n_exogenous() : 0;
        for (std::size_t l = 0; l < lags; ++l) {
            if (!source_spike(topo, y, s, src, t - 1 - l)) continue;
            for (std::size_t k = 0; k < ka; ++k) tr.syn[src * ka + k] += A(l, k);
            if (is_neuron)
                for (std::size_t k = 0; k < kb; ++k) tr.fb[i * kb + k] += B(l, k);
        }
    }
}

inline double potential(const SnnTopology& topo, const SnnParams& p, std::size_t i, const Traces& tr) {
    const std::size_t ka = p.synaptic_basis().count(), kb = p.feedback_basis().count();
    const auto vals = p.values();
    double u = 0.0;
    for (auto s : topo.incoming(i)) {
        const double* w = vals.data() + p.synapse_offset(s);
        const double* x = tr.syn.data() + topo.synapses()[s].source * ka;
        for (std::size_t k = 0; k < ka; ++k) u += w[k] * x[k];
    }
    if (topo.has_feedback(i)) {
        const double* w = vals.data() + p.feedback_offset(i);
        const double* x = tr.fb.data() + i * kb;
        for (std::size_t k = 0; k < kb; ++k) u += w[k] * x[k];
    }
    return u + vals[p.bias_offset(i)];
}

/// g += scale * d log p(s_i | u_i) / d phi for neuron i at the current step.
inline void accumulate_gradient(const SnnTopology& topo, const SnnParams& p, std::size_t i, const Traces& tr,
                                double err, double scale, std::span<double> g) {
    const std::size_t ka = p.synaptic_basis().count(), kb = p.feedback_basis().count();
    const double e = err * scale;
    if (e == 0.0) return;
    for (auto s : topo.incoming(i)) {
        double* gw = g.data() + p.synapse_offset(s);
        const double* x = tr.syn.data() + topo.synapses()[s].source * ka;
        for (std::size_t k = 0; k < ka; ++k) gw[k] += x[k] * e;
    }
    if (topo.has_feedback(i)) {
        double* gw = g.data() + p.feedback_offset(i);
        const double* x = tr.fb.data() + i * kb;
        for (std::size_t k = 0; k < kb; ++k) gw[k] += x[k] * e;
    }
    g[p.bias_offset(i)] += e;
}

inline void check_shapes(const SnnParams& p, const SnnTopology& topo, const SpikeTrain& y) {
    if (!p.compatible_with(topo)) throw UsageError("SnnParams do not match the topology");
    if (y.neurons() != topo.n_exogenous())
        throw UsageError("exogenous input has " + std::to_string(y.neurons()) + " rows, topology expects " +
                         std::to_string(topo.n_exogenous()));
}

}  // namespace detail

/// Generic causal sweep. For each step t and neuron i (causal order) computes
/// u, asks `rule(i, t, u)` for the spike, stores it in `spikes`, then calls
/// `visit(i, t, u, spike, traces)`. `spikes` must be n_neurons x T; rules that
/// clamp neurons read their targets from it before it is overwritten.
template <class Rule, class Visit>
void run_episode(const SnnParams& p, const SnnTopology& topo, const SpikeTrain& y, SpikeTrain& spikes, Rule&& rule,
                 Visit&& visit) {
    detail::check_shapes(p, topo, y);
    if (spikes.neurons() != topo.n_neurons() || spikes.steps() != y.steps())
        throw UsageError("run_episode: spike buffer shape mismatch");
    detail::Traces tr;
    for (std::size_t t = 0; t < y.steps(); ++t) {
        detail::compute_traces(topo, p, y, spikes, t, tr);
        for (auto i : topo.order()) {
            const double u = detail::potential(topo, p, i, tr);
            const bool s = rule(i, t, u);
            spikes.set(i, t, s);
            visit(i, t, u, s, tr);
        }
    }
}

/// Everything recorded while sampling one episode.
struct EpisodeTrace {
    SpikeTrain spikes;        // all neurons, n_neurons x T
    Matrix potentials;        // u, n_neurons x T
    std::vector<double> grad; // accumulated d log p(x, h | y) / d phi; empty if not requested
    double log_prob = 0.0;    // log p(x, h | y) of the sampled trajectory

    SpikeTrain readout(const SnnTopology& topo) const { return select(topo.readout()); }
    SpikeTrain hidden(const SnnTopology& topo) const { return select(topo.hidden()); }

    SpikeTrain select(const std::vector<std::size_t>& ids) const {
        SpikeTrain out(ids.size(), spikes.steps());
        for (std::size_t r = 0; r < ids.size(); ++r)
            for (std::size_t t = 0; t < spikes.steps(); ++t) out.set(r, t, spikes(ids[r], t));
        return out;
    }
};

/// Samples every neuron from Bernoulli(sigmoid(u)) step by step and
/// accumulates the local gradients of the sampled trajectory.
inline EpisodeTrace forward_sample(const SnnParams& p, const SnnTopology& topo, const SpikeTrain& y, Rng& rng,
                                   bool with_gradient = true) {
    EpisodeTrace tr;
    tr.spikes = SpikeTrain(topo.n_neurons(), y.steps());
    tr.potentials = Matrix(topo.n_neurons(), y.steps());
    if (with_gradient) tr.grad.assign(p.size(), 0.0);
    run_episode(
        p, topo, y, tr.spikes, [&](std::size_t, std::size_t, double u) { return bernoulli(rng, sigmoid(u)); },
        [&](std::size_t i, std::size_t t, double u, bool s, const detail::Traces& traces) {
            tr.potentials(i, t) = u;
            tr.log_prob += bernoulli_log_prob(s, u);
            if (with_gradient) detail::accumulate_gradient(topo, p, i, traces, (s ? 1.0 : 0.0) - sigmoid(u), 1.0, tr.grad);
        });
    return tr;
}

namespace detail {

inline SpikeTrain assemble(const SnnTopology& topo, const SpikeTrain& x, const SpikeTrain& h, std::size_t steps) {
    if (x.neurons() != topo.readout().size() || h.neurons() != topo.hidden().size())
        throw UsageError("read-out/hidden trains do not match the topology");
    if (x.steps() != steps || h.steps() != steps) throw UsageError("spike trains differ in length");
    SpikeTrain s(topo.n_neurons(), steps);
    for (std::size_t r = 0; r < x.neurons(); ++r)
        for (std::size_t t = 0; t < steps; ++t) s.set(topo.readout()[r], t, x(r, t));
    for (std::size_t k = 0; k < h.neurons(); ++k)
        for (std::size_t t = 0; t < steps; ++t) s.set(topo.hidden()[k], t, h(k, t));
    return s;
}

}  // namespace detail

/// log p(x, h | y) = sum_t sum_i log Bernoulli(s_{i,t} | sigmoid(u_{i,t})).
inline double log_likelihood(const SnnParams& p, const SnnTopology& topo, const SpikeTrain& x, const SpikeTrain& h,
                             const SpikeTrain& y) {
    auto s = detail::assemble(topo, x, h, y.steps());
    double ll = 0.0;
    run_episode(
        p, topo, y, s, [&s](std::size_t i, std::size_t t, double) { return s(i, t); },
        [&](std::size_t, std::size_t, double u, bool spike, const detail::Traces&) {
            ll += bernoulli_log_prob(spike, u);
        });
    return ll;
}

/// Exact gradient of log p(x, h | y) for a fixed trajectory.
inline std::vector<double> log_likelihood_gradient(const SnnParams& p, const SnnTopology& topo, const SpikeTrain& x,
                                                   const SpikeTrain& h, const SpikeTrain& y) {
    auto s = detail::assemble(topo, x, h, y.steps());
    std::vector<double> g(p.size(), 0.0);
    run_episode(
        p, topo, y, s, [&s](std::size_t i, std::size_t t, double) { return s(i, t); },
        [&](std::size_t i, std::size_t, double u, bool spike, const detail::Traces& tr) {
            detail::accumulate_gradient(topo, p, i, tr, (spike ? 1.0 : 0.0) - sigmoid(u), 1.0, g);
        });
    return g;
}

/// Membrane potentials implied by a full neuron spike matrix.
inline Matrix membrane_potentials(const SnnParams& p, const SnnTopology& topo, const SpikeTrain& spikes,
                                  const SpikeTrain& y) {
    SpikeTrain s = spikes;
    Matrix u(topo.n_neurons(), y.steps());
    run_episode(
        p, topo, y, s, [&spikes](std::size_t i, std::size_t t, double) { return spikes(i, t); },
        [&](std::size_t i, std::size_t t, double v, bool, const detail::Traces&) { u(i, t) = v; });
    return u;
}

/// Convenience bundle of a topology and its parameters.
struct Generator {
    SnnTopology topology;
    SnnParams params;

    EpisodeTrace sample(const SpikeTrain& y, Rng& rng, bool with_gradient = false) const {
        return forward_sample(params, topology, y, rng, with_gradient);
    }
};

}  // namespace spikegan::snn
