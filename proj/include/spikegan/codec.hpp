#pragma once

// Conversions between natural signals and spike trains, and the temporal basis
// matrices that parameterise synaptic and feedback filters.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "spikegan/common.hpp"
#include "spikegan/spike_train.hpp"

namespace spikegan {

/// window x count matrix; column k is one basis filter, row l its value at lag l
/// (lag 0 multiplies the most recent spike).
class BasisMatrix {
public:
    BasisMatrix() = default;
    BasisMatrix(std::size_t window, std::size_t count, std::vector<double> values)
        : window_(window), count_(count), values_(std::move(values)) {
        if (window_ == 0 || count_ == 0) throw UsageError("BasisMatrix: window and count must be >= 1");
        if (values_.size() != window_ * count_) throw UsageError("BasisMatrix: value count does not match shape");
    }

    std::size_t window() const { return window_; }
    std::size_t count() const { return count_; }
    double operator()(std::size_t lag, std::size_t k) const { return values_[lag * count_ + k]; }
    std::span<const double> values() const { return values_; }

    friend bool operator==(const BasisMatrix&, const BasisMatrix&) = default;

private:
    std::size_t window_ = 0;
    std::size_t count_ = 0;
    std::vector<double> values_;
};

namespace codec {

/// Single exponential-decay column exp(-lag / tau_f).
inline BasisMatrix exp_basis(std::size_t window, double tau_f) {
    if (window < 1) throw UsageError("exp_basis: window must be >= 1");
    if (!(tau_f > 0.0)) throw UsageError("exp_basis: decay constant must be > 0");
    std::vector<double> v(window);
    for (std::size_t l = 0; l < window; ++l) v[l] = std::exp(-static_cast<double>(l) / tau_f);
    return BasisMatrix(window, 1, std::move(v));
}

/// Raised cosines on a log-time axis:
///   B(l, k) = 0.5 * (1 + cos(pi * clamp((log(l + 1) - c_k) / w, -1, 1)))
/// with centres c_k evenly spaced over [0, log(window)] and width w equal to the
/// centre spacing. With one column the centre is 0 and w = max(log(window), 1).
inline BasisMatrix raised_cosine_basis(std::size_t window, std::size_t count) {
    if (window < 1) throw UsageError("raised_cosine_basis: window must be >= 1");
    if (count < 1) throw UsageError("raised_cosine_basis: need at least one column");
    const double span = std::log(static_cast<double>(window));
    const double width = count > 1 ? span / static_cast<double>(count - 1) : std::max(span, 1.0);
    // Degenerate window==1 with several columns: all centres collapse onto lag 0.
    const double safe_width = width > 0.0 ? width : 1.0;
    std::vector<double> v(window * count);
    for (std::size_t l = 0; l < window; ++l) {
        const double x = std::log(static_cast<double>(l) + 1.0);
        for (std::size_t k = 0; k < count; ++k) {
            const double centre = static_cast<double>(k) * width;
            const double arg = std::clamp((x - centre) / safe_width, -1.0, 1.0);
            v[l * count + k] = 0.5 * (1.0 + std::cos(std::numbers::pi * arg));
        }
    }
    return BasisMatrix(window, count, std::move(v));
}

/// One column per lag: filters are unconstrained window-length vectors.
inline BasisMatrix identity_basis(std::size_t window) {
    if (window < 1) throw UsageError("identity_basis: window must be >= 1");
    std::vector<double> v(window * window, 0.0);
    for (std::size_t l = 0; l < window; ++l) v[l * window + l] = 1.0;
    return BasisMatrix(window, window, std::move(v));
}

/// Bernoulli rate code: entry (i, t) ~ Bernoulli(v_i), independent.
inline SpikeTrain rate_encode(std::span<const double> v, std::size_t steps, Rng& rng) {
    for (std::size_t i = 0; i < v.size(); ++i)
        if (!(v[i] >= 0.0 && v[i] <= 1.0))
            throw UsageError("rate_encode: value " + std::to_string(v[i]) + " at index " + std::to_string(i) +
                             " outside [0,1]");
    SpikeTrain s(v.size(), steps);
    for (std::size_t i = 0; i < v.size(); ++i)
        for (std::size_t t = 0; t < steps; ++t) s.set(i, t, bernoulli(rng, v[i]));
    return s;
}

/// Spike count / T per row.
inline std::vector<double> rate_decode(const SpikeTrain& x) {
    if (x.steps() == 0) throw UsageError("rate_decode: empty train");
    std::vector<double> v(x.neurons());
    for (std::size_t i = 0; i < x.neurons(); ++i)
        v[i] = static_cast<double>(x.count(i)) / static_cast<double>(x.steps());
    return v;
}

/// Last sample of a causal exponential filter: sum_t x(i,t) exp(-(T-1-t)/tau_s)
/// (0-based t). Not normalised.
inline std::vector<double> time_surface_decode(const SpikeTrain& x, double tau_s) {
    if (!(tau_s > 0.0)) throw UsageError("time_surface_decode: tau_s must be > 0");
    const std::size_t steps = x.steps();
    std::vector<double> kernel(steps);
    for (std::size_t t = 0; t < steps; ++t) kernel[t] = std::exp(-static_cast<double>(steps - 1 - t) / tau_s);
    std::vector<double> v(x.neurons(), 0.0);
    for (std::size_t i = 0; i < x.neurons(); ++i)
        for (std::size_t t = 0; t < steps; ++t)
            if (x(i, t)) v[i] += kernel[t];
    return v;
}

inline std::vector<double> one_hot(std::size_t label, std::size_t n_classes) {
    if (label >= n_classes)
        throw UsageError("one_hot: label " + std::to_string(label) + " outside [0," + std::to_string(n_classes) +
                         ")");
    std::vector<double> v(n_classes, 0.0);
    v[label] = 1.0;
    return v;
}

}  // namespace codec
}  // namespace spikegan
