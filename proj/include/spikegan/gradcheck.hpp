#pragma once

// Self-checks run by the gradcheck experiment: analytic gradients against
// central differences, and the REINFORCE estimator against exact enumeration.

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "spikegan/codec.hpp"
#include "spikegan/common.hpp"
#include "spikegan/nn.hpp"
#include "spikegan/snn.hpp"
#include "spikegan/training.hpp"

namespace spikegan::gradcheck {

struct CheckResult {
    std::string name;
    std::size_t parameters = 0;
    double error = 0.0;      // max relative error, or max |z| for statistical checks
    double tolerance = 0.0;
    bool pass = false;
};

inline std::vector<double> finite_differences(std::span<double> x, const std::function<double()>& f, double h) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f();
        x[i] = keep - h;
        const double down = f();
        x[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

inline double max_relative_error(std::span<const double> a, std::span<const double> b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a[i] - b[i]) / std::max({std::abs(a[i]), std::abs(b[i]), 1e-6}));
    return worst;
}

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    Matrix m(r, c);
    for (double& v : m.values()) v = standard_normal(rng);
    return m;
}

/// Loss = sum_k c_k * out_k with fixed random c, checked against central differences.
inline double network_error(nn::AnnParams& net, const Matrix& input, Rng& rng) {
    nn::glorot_init(net, rng);
    for (double& v : net.values()) v += 0.1 * standard_normal(rng);
    const auto [rows, cols] = net.output_shape();
    const Matrix coeff = random_matrix(rows, cols, rng);
    auto loss = [&]() {
        const auto out = nn::forward(net, input).first;
        double s = 0.0;
        for (std::size_t k = 0; k < out.size(); ++k) s += coeff[k] * out[k];
        return s;
    };
    auto [out, tape] = nn::forward(net, input);
    const auto g = nn::backward(net, tape, coeff);
    const auto fd = finite_differences(net.values(), loss, 1e-5);
    return max_relative_error(g.values(), fd);
}

inline std::vector<CheckResult> check_layers(std::size_t trials, Rng& rng) {
    using nn::Activation;
    const std::vector<std::pair<std::string, Activation>> acts{{"identity", Activation::identity()},
                                                               {"relu", Activation::relu()},
                                                               {"leaky_relu", Activation::leaky_relu(0.2)},
                                                               {"sigmoid", Activation::sigmoid()}};
    std::vector<CheckResult> out;
    auto record = [&](const std::string& name, auto make, std::size_t rows, std::size_t cols) {
        CheckResult r{name, 0, 0.0, 1e-5, true};
        for (std::size_t k = 0; k < trials; ++k) {
            auto net = make();
            r.parameters = net.size();
            r.error = std::max(r.error, network_error(net, random_matrix(rows, cols, rng), rng));
        }
        r.pass = r.error < r.tolerance && r.parameters <= 200;
        out.push_back(r);
    };
    for (const auto& [name, act] : acts) {
        record("dense/" + name, [&] { return nn::NetworkBuilder(6, 1).dense(5, act).build(); }, 6, 1);
        record("conv1d/" + name, [&] { return nn::NetworkBuilder(3, 10).conv1d(4, 4, 2, act).build(); }, 3, 10);
    }
    record("conv1d+flatten+dense",
           [&] {
               return nn::NetworkBuilder(2, 10)
                   .conv1d(3, 4, 2, Activation::leaky_relu(0.2))
                   .conv1d(2, 2, 1, Activation::leaky_relu(0.2))
                   .flatten()
                   .dense(1, Activation::sigmoid())
                   .build();
           },
           2, 10);
    record("dense-mlp",
           [&] {
               return nn::NetworkBuilder(5, 1)
                   .dense(8, Activation::relu())
                   .dense(6, Activation::leaky_relu(0.1))
                   .dense(1, Activation::sigmoid())
                   .build();
           },
           5, 1);
    return out;
}

/// Episode log-likelihood gradient (local rule accumulated over time) on
/// random topologies with hidden and read-out neurons.
inline std::vector<CheckResult> check_episode_gradient(std::size_t trials, Rng& rng) {
    struct Case {
        std::string name;
        std::size_t exo, hidden, readout, window, k;
        bool raised;
    };
    const std::vector<Case> cases{{"snn/exp-basis", 2, 2, 2, 4, 2, false},
                                  {"snn/raised-cosine", 1, 3, 2, 6, 3, true},
                                  {"snn/no-hidden", 3, 0, 2, 5, 2, false}};
    std::vector<CheckResult> out;
    for (const auto& c : cases) {
        CheckResult r{c.name, 0, 0.0, 1e-5, true};
        for (std::size_t trial = 0; trial < trials; ++trial) {
            const auto topo = snn::SnnTopology::fully_connected(c.exo, c.hidden, c.readout, true);
            const auto basis = c.raised ? codec::raised_cosine_basis(c.window, c.k) : codec::exp_basis(c.window, 2.0);
            snn::SnnParams p(topo, basis, basis);
            for (double& v : p.values()) v = 0.7 * standard_normal(rng);
            const std::size_t steps = 8;
            SpikeTrain y(c.exo, steps), x(c.readout, steps), h(c.hidden, steps);
            for (auto* s : {&y, &x, &h})
                for (std::size_t i = 0; i < s->neurons(); ++i)
                    for (std::size_t t = 0; t < steps; ++t) s->set(i, t, bernoulli(rng, 0.5));
            const auto g = snn::log_likelihood_gradient(p, topo, x, h, y);
            const auto fd = finite_differences(p.values(), [&] { return snn::log_likelihood(p, topo, x, h, y); }, 1e-5);
            r.parameters = p.size();
            r.error = std::max(r.error, max_relative_error(g, fd));
        }
        r.pass = r.error < r.tolerance && r.parameters <= 200;
        out.push_back(r);
    }
    return out;
}

/// One neuron, T=2, fixed random discriminator on the raw train: the Monte
/// Carlo REINFORCE gradient must sit within 3 standard errors of the exact
/// gradient sum_x p(x) r(x) d log p(x).
inline CheckResult check_reinforce(std::size_t episodes, Rng& rng) {
    const auto topo = snn::SnnTopology::fully_connected(1, 0, 1, true);
    snn::SnnParams p(topo, codec::exp_basis(2, 2.0), codec::exp_basis(2, 2.0));
    for (double& v : p.values()) v = 0.8 * standard_normal(rng);
    auto disc = nn::NetworkBuilder(2, 1).dense(1, nn::Activation::sigmoid()).build();
    for (double& v : disc.values()) v = standard_normal(rng);
    SpikeTrain y(1, 2);
    y.set(0, 0, true);
    y.set(0, 1, true);
    const SpikeTrain h(0, 2);
    auto reward = [&](const SpikeTrain& x) {
        const double d = nn::forward_scalar(disc, Matrix::column({x(0, 0) ? 1.0 : 0.0, x(0, 1) ? 1.0 : 0.0}));
        return nn::generator_reward(d, nn::GenLoss::non_saturating);
    };
    std::vector<double> exact(p.size(), 0.0);
    for (int code = 0; code < 4; ++code) {
        const auto x = SpikeTrain::from_values(1, 2, {code & 1, (code >> 1) & 1});
        const double prob = std::exp(snn::log_likelihood(p, topo, x, h, y));
        const auto g = snn::log_likelihood_gradient(p, topo, x, h, y);
        for (std::size_t d = 0; d < p.size(); ++d) exact[d] += prob * reward(x) * g[d];
    }
    std::vector<double> sum(p.size(), 0.0), sq(p.size(), 0.0);
    for (std::size_t k = 0; k < episodes; ++k) {
        const auto tr = snn::forward_sample(p, topo, y, rng);
        const double r = reward(tr.readout(topo));
        for (std::size_t d = 0; d < p.size(); ++d) {
            sum[d] += r * tr.grad[d];
            sq[d] += r * tr.grad[d] * r * tr.grad[d];
        }
    }
    CheckResult res{"reinforce/enumeration", p.size(), 0.0, 3.0, true};
    const double n = static_cast<double>(episodes);
    for (std::size_t d = 0; d < p.size(); ++d) {
        const double mean = sum[d] / n;
        const double se = std::sqrt(std::max(sq[d] / n - mean * mean, 0.0) / (n - 1.0));
        res.error = std::max(res.error, se > 0 ? std::abs(mean - exact[d]) / se : std::abs(mean - exact[d]) * 1e12);
    }
    res.pass = res.error <= res.tolerance;
    return res;
}

inline std::vector<CheckResult> check_svgd_kernel(std::size_t trials, Rng& rng) {
    CheckResult self{"svgd/self-kernel", 0, 0.0, 0.0, true};
    CheckResult grad{"svgd/kernel-gradient", 0, 0.0, 1e-6, true};
    for (std::size_t k = 0; k < trials; ++k) {
        std::vector<double> a(7), b(7);
        for (auto& v : a) v = 0.5 * standard_normal(rng);
        for (auto& v : b) v = 0.5 * standard_normal(rng);
        const auto kv = train::svgd_kernel(a, a, 1.0);
        double dev = std::abs(kv.value - 1.0);
        for (double g : kv.grad_b) dev = std::max(dev, std::abs(g));
        self.error = std::max(self.error, dev);
        const auto kb = train::svgd_kernel(a, b, 1.0);
        const auto fd = finite_differences(b, [&] { return train::svgd_kernel(a, b, 1.0).value; }, 1e-6);
        grad.error = std::max(grad.error, max_relative_error(kb.grad_b, fd));
        self.parameters = grad.parameters = a.size();
    }
    self.pass = self.error == 0.0;
    grad.pass = grad.error < grad.tolerance;
    return {self, grad};
}

inline std::vector<CheckResult> run_all(std::size_t trials, std::size_t episodes, std::uint64_t seed) {
    Rng rng = derive_stream(seed, {0x67726164});
    std::vector<CheckResult> all = check_layers(trials, rng);
    for (auto& r : check_episode_gradient(trials, rng)) all.push_back(r);
    all.push_back(check_reinforce(episodes, rng));
    for (auto& r : check_svgd_kernel(trials, rng)) all.push_back(r);
    return all;
}

inline void write_csv(std::ostream& out, const std::vector<CheckResult>& results) {
    out << "check,parameters,error,tolerance,pass\n";
    for (const auto& r : results) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "%.6e,%.1e", r.error, r.tolerance);
        out << r.name << ',' << r.parameters << ',' << buf << ',' << (r.pass ? "yes" : "no") << '\n';
    }
}

}  // namespace spikegan::gradcheck
