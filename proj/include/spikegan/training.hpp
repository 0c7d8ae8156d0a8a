#pragma once

// Learning procedures for the spiking generator: adversarial training against
// an ANN discriminator (single parameter vector and SVGD particle ensemble) and
// the maximum-likelihood baseline.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spikegan/codec.hpp"
#include "spikegan/common.hpp"
#include "spikegan/nn.hpp"
#include "spikegan/snn.hpp"

namespace spikegan::train {

using nn::AnnParams;
using nn::GenLoss;
using snn::EpisodeTrace;
using snn::SnnParams;
using snn::SnnTopology;

enum class Decode { rate, time_surface, none };

inline const char* decode_name(Decode d) {
    switch (d) {
        case Decode::rate: return "rate";
        case Decode::time_surface: return "time_surface";
        case Decode::none: return "none";
    }
    return "?";
}

/// One conditioned training pair.
struct Example {
    SpikeTrain y;                   // exogenous generator input
    std::vector<double> condition;  // appended to decoded synthetic output (vector modes)
    Matrix real;                    // discriminator input for the real sample
    std::size_t label = 0;
};

/// Maps generator output to discriminator input. Vector modes decode the
/// read-out train and append the example's condition vector; Decode::none keeps
/// the raw train (channels x T) and, if conditioned, stacks y underneath.
struct Featurizer {
    Decode decode = Decode::rate;
    double tau_s = 2.0;
    bool conditioned = true;

    std::vector<double> decode_vector(const SpikeTrain& x) const {
        return decode == Decode::time_surface ? codec::time_surface_decode(x, tau_s) : codec::rate_decode(x);
    }

    Matrix from_vector(std::span<const double> v, const Example& ex) const {
        std::vector<double> f(v.begin(), v.end());
        if (conditioned) f.insert(f.end(), ex.condition.begin(), ex.condition.end());
        return Matrix::column(std::move(f));
    }

    Matrix from_spikes(const SpikeTrain& x, const Example& ex) const {
        if (decode != Decode::none) {
            const auto v = decode_vector(x);
            return from_vector(v, ex);
        }
        const std::size_t extra = conditioned ? ex.y.neurons() : 0;
        Matrix m(x.neurons() + extra, x.steps());
        for (std::size_t i = 0; i < x.neurons(); ++i)
            for (std::size_t t = 0; t < x.steps(); ++t) m(i, t) = x(i, t) ? 1.0 : 0.0;
        for (std::size_t i = 0; i < extra; ++i)
            for (std::size_t t = 0; t < x.steps(); ++t) m(x.neurons() + i, t) = ex.y(i, t) ? 1.0 : 0.0;
        return m;
    }

    Matrix synthetic(const SpikeTrain& x, const Example& ex) const { return from_spikes(x, ex); }
};

struct TrainConfig {
    double lr_disc = 1e-3;
    double lr_gen = 1e-2;
    std::size_t batch = 32;
    std::size_t steps = 5;  // episode length T
    GenLoss gen_loss = GenLoss::non_saturating;
    double svgd_step = 1e-2;
    double svgd_bandwidth = 1.0;
    bool reward_baseline = false;  // subtract the batch-mean reward
    std::size_t iterations = 1000;
    std::uint64_t seed = 1;
};

struct StepMetrics {
    double mean_d_real = 0.0;
    double mean_d_synth = 0.0;
    double disc_loss = 0.0;
    double gen_loss = 0.0;
    double mean_reward = 0.0;
};

// ---------------------------------------------------------------------------
// Building blocks

/// B episodes from one parameter vector. Episode i of particle j uses the
/// stream derived from (step_seed, j, i).
inline std::vector<EpisodeTrace> sample_episodes(const SnnParams& p, const SnnTopology& topo,
                                                 std::span<const Example> batch, std::uint64_t step_seed,
                                                 std::size_t particle, bool with_gradient = true) {
    std::vector<EpisodeTrace> out;
    out.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        Rng stream = derive_stream(step_seed, {particle, i});
        out.push_back(snn::forward_sample(p, topo, batch[i].y, stream, with_gradient));
    }
    return out;
}

/// (1/B) sum_i r_i g_i : REINFORCE estimate of d E[r] / d phi.
inline std::vector<double> reinforce_gradient(std::span<const EpisodeTrace> episodes, std::span<const double> rewards) {
    if (episodes.size() != rewards.size() || episodes.empty())
        throw UsageError("reinforce_gradient: need one reward per episode");
    std::vector<double> g(episodes.front().grad.size(), 0.0);
    for (std::size_t i = 0; i < episodes.size(); ++i) {
        if (episodes[i].grad.size() != g.size()) throw UsageError("reinforce_gradient: episode without gradient");
        axpy(rewards[i], episodes[i].grad, g);
    }
    const double inv = 1.0 / static_cast<double>(episodes.size());
    for (double& v : g) v *= inv;
    return g;
}

inline std::vector<double> centred(std::span<const double> r) {
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= static_cast<double>(r.size());
    std::vector<double> out(r.begin(), r.end());
    for (double& v : out) v -= mean;
    return out;
}

/// Accumulates gradients of the discriminator loss -[log D(real) + log(1-D(synth))].
class DiscGradient {
public:
    explicit DiscGradient(const AnnParams& disc) : disc_(disc), grad_(disc.zeros_like()) {}

    double add_real(const Matrix& input, double weight = 1.0) {
        auto [out, tape] = nn::forward(disc_, input);
        const double d = out[0];
        Matrix og(1, 1, weight * nn::disc_loss_grad_real(d));
        axpy(1.0, nn::backward(disc_, tape, og).values(), grad_.values());
        return d;
    }
    double add_synth(const Matrix& input, double weight = 1.0) {
        auto [out, tape] = nn::forward(disc_, input);
        const double d = out[0];
        Matrix og(1, 1, weight * nn::disc_loss_grad_synth(d));
        axpy(1.0, nn::backward(disc_, tape, og).values(), grad_.values());
        return d;
    }
    /// Gradient of the loss averaged with the given scale (1/B typically).
    AnnParams finish(double scale) {
        for (double& v : grad_.values()) v *= scale;
        return std::move(grad_);
    }

private:
    const AnnParams& disc_;
    AnnParams grad_;
};

inline void require_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + what);
}

// ---------------------------------------------------------------------------
// Adversarial training

/// One SpikeGAN iteration. Both updates use the parameters as they were at the
/// start of the step; only real_batch[0, cfg.batch) is used.
inline StepMetrics spikegan_step(snn::Generator& gen, AnnParams& disc, std::span<const Example> real_batch,
                                 const Featurizer& feat, const TrainConfig& cfg, Rng& rng) {
    if (real_batch.size() < cfg.batch || cfg.batch == 0)
        throw UsageError("spikegan_step: batch holds " + std::to_string(real_batch.size()) + " examples, need " +
                         std::to_string(cfg.batch));
    const auto batch = real_batch.first(cfg.batch);
    const std::uint64_t step_seed = rng();
    const auto episodes = sample_episodes(gen.params, gen.topology, batch, step_seed, 0);

    StepMetrics m;
    DiscGradient dg(disc);
    std::vector<double> d_real(batch.size()), d_synth(batch.size()), rewards(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) d_real[i] = dg.add_real(batch[i].real);
    for (std::size_t i = 0; i < batch.size(); ++i)
        d_synth[i] = dg.add_synth(feat.synthetic(episodes[i].readout(gen.topology), batch[i]));
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    AnnParams disc_grad = dg.finish(inv_b);

    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto losses = nn::gan_losses(d_real[i], d_synth[i], cfg.gen_loss);
        rewards[i] = nn::generator_reward(d_synth[i], cfg.gen_loss);
        m.mean_d_real += d_real[i] * inv_b;
        m.mean_d_synth += d_synth[i] * inv_b;
        m.disc_loss += losses.disc * inv_b;
        m.gen_loss += losses.gen * inv_b;
        m.mean_reward += rewards[i] * inv_b;
    }
    require_finite(m.disc_loss, "discriminator loss");
    require_finite(m.gen_loss, "generator loss");

    if (cfg.reward_baseline) rewards = centred(rewards);
    const auto gen_grad = reinforce_gradient(episodes, rewards);
    nn::sgd_step(gen.params.values(), gen_grad, cfg.lr_gen, nn::Direction::descent);
    nn::sgd_step(disc, disc_grad, cfg.lr_disc, nn::Direction::descent);
    return m;
}

// ---------------------------------------------------------------------------
// SVGD

struct KernelValue {
    double value;
    std::vector<double> grad_b;  // d kappa / d b
};

/// kappa(a, b) = exp(-||a - b||^2 / h); d kappa / d b = 2 (a - b) kappa / h.
inline KernelValue svgd_kernel(std::span<const double> a, std::span<const double> b, double bandwidth = 1.0) {
    if (a.size() != b.size()) throw UsageError("svgd_kernel: particle shapes differ");
    const double k = std::exp(-squared_distance(a, b) / bandwidth);
    KernelValue kv{k, std::vector<double>(a.size())};
    const double c = 2.0 * k / bandwidth;
    for (std::size_t i = 0; i < a.size(); ++i) kv.grad_b[i] = c * (a[i] - b[i]);
    return kv;
}

/// Simultaneous update from a snapshot, constant prior:
///   phi_j -= eta * sum_j' [ kappa(phi_j, phi_j') G_j' - d kappa(phi_j, phi_j') / d phi_j' ]
/// where G_j' is the gradient of the objective being minimised.
inline void svgd_update(std::span<SnnParams> particles, const std::vector<std::vector<double>>& grads, double eta,
                        double bandwidth = 1.0) {
    const std::size_t n = particles.size();
    if (grads.size() != n || n == 0) throw UsageError("svgd_update: one gradient per particle required");
    for (std::size_t j = 0; j < n; ++j) {
        if (!particles[j].same_shape(particles[0]) || grads[j].size() != particles[0].size())
            throw UsageError("svgd_update: particle shape mismatch");
        for (double g : grads[j])
            if (!std::isfinite(g)) throw NumericError("svgd_update: non-finite particle gradient");
    }
    std::vector<std::vector<double>> snapshot;
    snapshot.reserve(n);
    for (const auto& p : particles) snapshot.emplace_back(p.values().begin(), p.values().end());

    for (std::size_t j = 0; j < n; ++j) {
        std::vector<double> dir(snapshot[j].size(), 0.0);
        for (std::size_t jp = 0; jp < n; ++jp) {
            const auto kv = svgd_kernel(snapshot[j], snapshot[jp], bandwidth);
            for (std::size_t k = 0; k < dir.size(); ++k) dir[k] += kv.value * grads[jp][k] - kv.grad_b[k];
        }
        auto v = particles[j].values();
        for (std::size_t k = 0; k < dir.size(); ++k) v[k] = snapshot[j][k] - eta * dir[k];
    }
}

struct BayesMetrics {
    StepMetrics overall;
    std::vector<double> particle_d_synth;  // mean D(synthetic) per particle
};

/// One Bayes-SpikeGAN iteration over a particle ensemble sharing `topo`.
/// Rewards are -log D for every particle; the discriminator takes one step on
/// the loss averaged over all particles' synthetic batches.
inline BayesMetrics bayes_spikegan_step(const SnnTopology& topo, std::vector<SnnParams>& particles, AnnParams& disc,
                                        std::span<const Example> real_batch, const Featurizer& feat,
                                        const TrainConfig& cfg, Rng& rng) {
    if (particles.empty()) throw UsageError("bayes_spikegan_step: empty particle set");
    for (const auto& p : particles)
        if (!p.same_shape(particles[0]) || !p.compatible_with(topo))
            throw UsageError("bayes_spikegan_step: particle shape mismatch");
    if (real_batch.size() < cfg.batch || cfg.batch == 0)
        throw UsageError("bayes_spikegan_step: batch shorter than configured size");
    const auto batch = real_batch.first(cfg.batch);
    const std::size_t n_particles = particles.size();
    const std::uint64_t step_seed = rng();
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    const double inv_j = 1.0 / static_cast<double>(n_particles);

    BayesMetrics m;
    DiscGradient dg(disc);
    std::vector<double> d_real(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) d_real[i] = dg.add_real(batch[i].real);

    std::vector<std::vector<double>> grads(n_particles);
    for (std::size_t j = 0; j < n_particles; ++j) {
        const auto episodes = sample_episodes(particles[j], topo, batch, step_seed, j);
        std::vector<double> rewards(batch.size());
        double mean_synth = 0.0;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const double d = dg.add_synth(feat.synthetic(episodes[i].readout(topo), batch[i]), inv_j);
            rewards[i] = nn::generator_reward(d, GenLoss::non_saturating);
            const auto losses = nn::gan_losses(d_real[i], d, GenLoss::non_saturating);
            m.overall.disc_loss += losses.disc * inv_b * inv_j;
            m.overall.gen_loss += losses.gen * inv_b * inv_j;
            m.overall.mean_reward += rewards[i] * inv_b * inv_j;
            mean_synth += d * inv_b;
        }
        m.particle_d_synth.push_back(mean_synth);
        m.overall.mean_d_synth += mean_synth * inv_j;
        if (cfg.reward_baseline) rewards = centred(rewards);
        grads[j] = reinforce_gradient(episodes, rewards);
    }
    for (double d : d_real) m.overall.mean_d_real += d * inv_b;
    require_finite(m.overall.disc_loss, "discriminator loss");
    require_finite(m.overall.gen_loss, "generator loss");

    AnnParams disc_grad = dg.finish(inv_b);
    svgd_update(particles, grads, cfg.svgd_step, cfg.svgd_bandwidth);
    nn::sgd_step(disc, disc_grad, cfg.lr_disc, nn::Direction::descent);
    return m;
}

// ---------------------------------------------------------------------------
// Maximum likelihood

struct MlExample {
    SpikeTrain x;  // targets for the read-out (visible) neurons
    SpikeTrain y;  // exogenous input
};

struct MlGradient {
    std::vector<double> grad;   // ascent direction on the visible log-likelihood
    double visible_log_lik = 0; // sum_t l_t for this episode
};

/// One clamped episode. Visible neurons follow their targets and contribute
/// the exact local gradient; hidden neurons are sampled and their score
/// functions are accumulated into an eligibility trace. The learning signal
/// l_t = sum_{i visible} log p(x_{i,t} | u_{i,t}) multiplies the trace of hidden
/// scores from steps before t (the only hidden spikes l_t depends on).
inline MlGradient ml_gradient(const SnnParams& p, const SnnTopology& topo, const MlExample& ex, Rng& rng) {
    const std::size_t steps = ex.y.steps();
    if (ex.x.steps() != steps) throw UsageError("ml_gradient: target length differs from T");
    if (ex.x.neurons() != topo.readout().size()) throw UsageError("ml_gradient: target rows != read-out neurons");
    SpikeTrain s(topo.n_neurons(), steps);
    std::vector<bool> visible(topo.n_neurons(), false);
    for (std::size_t r = 0; r < topo.readout().size(); ++r) {
        visible[topo.readout()[r]] = true;
        for (std::size_t t = 0; t < steps; ++t) s.set(topo.readout()[r], t, ex.x(r, t));
    }
    MlGradient out{std::vector<double>(p.size(), 0.0), 0.0};
    const bool has_hidden = !topo.hidden().empty();
    std::vector<double> trace(has_hidden ? p.size() : 0, 0.0), step_scores(has_hidden ? p.size() : 0, 0.0);
    double signal = 0.0;
    std::size_t current_t = 0;
    auto close_step = [&]() {
        if (!has_hidden) return;
        axpy(signal, trace, out.grad);
        axpy(1.0, step_scores, trace);
        std::fill(step_scores.begin(), step_scores.end(), 0.0);
    };
    snn::run_episode(
        p, topo, ex.y, s,
        [&](std::size_t i, std::size_t t, double u) { return visible[i] ? s(i, t) : bernoulli(rng, sigmoid(u)); },
        [&](std::size_t i, std::size_t t, double u, bool spike, const snn::detail::Traces& tr) {
            if (t != current_t) {
                close_step();
                signal = 0.0;
                current_t = t;
            }
            const double err = (spike ? 1.0 : 0.0) - sigmoid(u);
            if (visible[i]) {
                const double lp = bernoulli_log_prob(spike, u);
                signal += lp;
                out.visible_log_lik += lp;
                snn::detail::accumulate_gradient(topo, p, i, tr, err, 1.0, out.grad);
            } else {
                snn::detail::accumulate_gradient(topo, p, i, tr, err, 1.0, step_scores);
            }
        });
    if (steps > 0) close_step();
    return out;
}

struct MlMetrics {
    double mean_visible_log_lik = 0.0;
};

/// Ascent on the clamped visible log-likelihood, averaged over the batch.
inline MlMetrics ml_train_step(snn::Generator& gen, std::span<const MlExample> batch, const TrainConfig& cfg,
                               Rng& rng) {
    if (batch.empty()) throw UsageError("ml_train_step: empty batch");
    const std::uint64_t step_seed = rng();
    std::vector<double> g(gen.params.size(), 0.0);
    MlMetrics m;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (batch[i].x.steps() != cfg.steps)
            throw UsageError("ml_train_step: target length " + std::to_string(batch[i].x.steps()) + " != T=" +
                             std::to_string(cfg.steps));
        Rng stream = derive_stream(step_seed, {0, i});
        const auto r = ml_gradient(gen.params, gen.topology, batch[i], stream);
        axpy(inv_b, r.grad, g);
        m.mean_visible_log_lik += r.visible_log_lik * inv_b;
    }
    require_finite(m.mean_visible_log_lik, "visible log-likelihood");
    nn::sgd_step(gen.params.values(), g, cfg.lr_gen, nn::Direction::ascent);
    return m;
}

}  // namespace spikegan::train
