#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace spikegan {

// Error taxonomy shared by every module. The CLI maps these onto exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct UsageError : Error {
    using Error::Error;
};
struct TopologyError : Error {
    using Error::Error;
};
struct DatasetError : Error {
    using Error::Error;
};
struct ParseError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};

using Rng = std::mt19937_64;

/// Independent stream keyed by a base seed and an arbitrary tuple of indices
/// (episode, particle, ...). Same keys always give the same stream.
inline Rng derive_stream(std::uint64_t base, std::initializer_list<std::uint64_t> keys) {
    std::vector<std::uint32_t> words;
    words.reserve(2 + 2 * keys.size());
    words.push_back(static_cast<std::uint32_t>(base));
    words.push_back(static_cast<std::uint32_t>(base >> 32));
    for (auto k : keys) {
        words.push_back(static_cast<std::uint32_t>(k));
        words.push_back(static_cast<std::uint32_t>(k >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    return Rng(seq);
}

/// Uniform double in [0, 1) with 53 random bits; platform independent.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline bool bernoulli(Rng& rng, double p) {
    return uniform01(rng) < p;
}

/// Standard normal via Box-Muller on uniform01, so parameter initialisation
/// does not depend on the standard library's distribution implementation.
inline double standard_normal(Rng& rng) {
    constexpr double two_pi = 6.283185307179586476925;
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

/// Uniform integer in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    const auto i = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
    return i < n ? i : n - 1;
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// log(sigmoid(x)) without overflow for large |x|.
inline double log_sigmoid(double x) {
    if (x >= 0.0) return -std::log1p(std::exp(-x));
    return x - std::log1p(std::exp(x));
}

/// log Bernoulli(s | sigmoid(u)).
inline double bernoulli_log_prob(bool spike, double u) {
    return spike ? log_sigmoid(u) : log_sigmoid(-u);
}

}  // namespace spikegan
