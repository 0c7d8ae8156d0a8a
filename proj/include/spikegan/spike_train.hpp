#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spikegan/common.hpp"

namespace spikegan {

/// Binary neurons x timesteps matrix; the universal signal format.
class SpikeTrain {
public:
    SpikeTrain() = default;
    SpikeTrain(std::size_t neurons, std::size_t steps) : n_(neurons), t_(steps), bits_(neurons * steps, 0) {}

    /// Builds from integer values; anything other than 0/1 is a usage error.
    static SpikeTrain from_values(std::size_t neurons, std::size_t steps, std::span<const int> values) {
        if (values.size() != neurons * steps) throw UsageError("SpikeTrain: value count does not match shape");
        SpikeTrain s(neurons, steps);
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (values[i] != 0 && values[i] != 1)
                throw UsageError("SpikeTrain: non-binary value " + std::to_string(values[i]) + " at flat index " +
                                 std::to_string(i));
            s.bits_[i] = static_cast<std::uint8_t>(values[i]);
        }
        return s;
    }
    static SpikeTrain from_values(std::size_t neurons, std::size_t steps, std::initializer_list<int> values) {
        return from_values(neurons, steps, std::span<const int>(values.begin(), values.size()));
    }

    std::size_t neurons() const { return n_; }
    std::size_t steps() const { return t_; }

    bool operator()(std::size_t i, std::size_t t) const { return bits_[i * t_ + t] != 0; }
    void set(std::size_t i, std::size_t t, bool v) { bits_[i * t_ + t] = v ? 1 : 0; }

    std::span<const std::uint8_t> row(std::size_t i) const { return {bits_.data() + i * t_, t_}; }
    std::span<const std::uint8_t> bits() const { return bits_; }

    std::size_t count(std::size_t i) const {
        std::size_t c = 0;
        for (auto b : row(i)) c += b;
        return c;
    }
    std::size_t total() const {
        std::size_t c = 0;
        for (auto b : bits_) c += b;
        return c;
    }

    /// Rows [first, first+n) as a new train.
    SpikeTrain rows(std::size_t first, std::size_t n) const {
        SpikeTrain out(n, t_);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t t = 0; t < t_; ++t) out.set(i, t, (*this)(first + i, t));
        return out;
    }

    friend bool operator==(const SpikeTrain&, const SpikeTrain&) = default;

private:
    std::size_t n_ = 0;
    std::size_t t_ = 0;
    std::vector<std::uint8_t> bits_;
};

}  // namespace spikegan
