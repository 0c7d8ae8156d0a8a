#pragma once

// Real-data ingestion (UCI 8x8 digits) and synthetic data generation: noise
// corruption, rotated digit-pair tasks, burst/tonic spike sequences.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "spikegan/common.hpp"
#include "spikegan/spike_train.hpp"

namespace spikegan::data {

inline constexpr std::size_t kImageSide = 8;
inline constexpr std::size_t kPixels = kImageSide * kImageSide;

struct LabeledImage {
    std::array<double, kPixels> pixels{};  // row-major, values in [0,1]
    std::size_t label = 0;

    friend bool operator==(const LabeledImage&, const LabeledImage&) = default;
};

/// Parses one optdigits line: 64 integers in 0..16 then a label in 0..9.
inline LabeledImage parse_digits_line(std::string_view line, std::size_t line_no) {
    auto fail = [line_no](const std::string& why) {
        return ParseError("digits line " + std::to_string(line_no) + ": " + why);
    };
    LabeledImage img;
    std::size_t field = 0;
    std::size_t pos = 0;
    while (pos <= line.size()) {
        auto comma = line.find(',', pos);
        if (comma == std::string_view::npos) comma = line.size();
        auto tok = line.substr(pos, comma - pos);
        while (!tok.empty() && (tok.front() == ' ' || tok.front() == '\t')) tok.remove_prefix(1);
        while (!tok.empty() && (tok.back() == ' ' || tok.back() == '\t' || tok.back() == '\r')) tok.remove_suffix(1);
        int v = 0;
        auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (tok.empty() || ec != std::errc{} || ptr != tok.data() + tok.size())
            throw fail("field " + std::to_string(field + 1) + " is not an integer");
        if (field < kPixels) {
            if (v < 0 || v > 16) throw fail("pixel value " + std::to_string(v) + " outside 0..16");
            img.pixels[field] = static_cast<double>(v) / 16.0;
        } else if (field == kPixels) {
            if (v < 0 || v > 9) throw fail("label " + std::to_string(v) + " outside 0..9");
            img.label = static_cast<std::size_t>(v);
        } else {
            throw fail("more than 65 fields");
        }
        ++field;
        pos = comma + 1;
    }
    if (field != kPixels + 1) throw fail("expected 65 fields, found " + std::to_string(field));
    return img;
}

inline std::vector<LabeledImage> load_digits(std::istream& in) {
    std::vector<LabeledImage> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        out.push_back(parse_digits_line(line, line_no));
    }
    return out;
}

inline std::vector<LabeledImage> load_digits(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DatasetError("cannot open digits file '" + path + "'");
    return load_digits(in);
}

/// Writes the same 65-integer shape; pixels are rounded to the 0..16 grid.
inline void save_digits(std::ostream& out, const std::vector<LabeledImage>& images) {
    for (const auto& img : images) {
        for (double p : img.pixels) out << static_cast<int>(std::lround(std::clamp(p, 0.0, 1.0) * 16.0)) << ',';
        out << img.label << '\n';
    }
}

/// Deterministic split: every `test_every`-th image goes to the test set.
inline std::pair<std::vector<LabeledImage>, std::vector<LabeledImage>> split_train_test(
    const std::vector<LabeledImage>& all, std::size_t test_every) {
    if (test_every < 2) throw UsageError("split_train_test: test_every must be >= 2");
    std::pair<std::vector<LabeledImage>, std::vector<LabeledImage>> out;
    for (std::size_t i = 0; i < all.size(); ++i) (i % test_every == test_every - 1 ? out.second : out.first).push_back(all[i]);
    return out;
}

inline std::vector<LabeledImage> filter_labels(const std::vector<LabeledImage>& all,
                                               const std::vector<std::size_t>& labels) {
    std::vector<LabeledImage> out;
    for (const auto& img : all)
        if (std::find(labels.begin(), labels.end(), img.label) != labels.end()) out.push_back(img);
    return out;
}

/// Adds U(0,1) noise to floor(fraction*64) distinct random pixels, clamping to [0,1].
inline LabeledImage corrupt(const LabeledImage& img, double fraction, Rng& rng) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw UsageError("corrupt: fraction outside [0,1]");
    const auto n = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(kPixels)));
    std::array<std::size_t, kPixels> idx;
    std::iota(idx.begin(), idx.end(), 0);
    // Partial Fisher-Yates: the first n entries are a uniform random subset.
    for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + uniform_index(rng, kPixels - i)]);
    LabeledImage out = img;
    for (std::size_t i = 0; i < n; ++i) {
        double& p = out.pixels[idx[i]];
        p = std::clamp(p + uniform01(rng), 0.0, 1.0);
    }
    return out;
}

/// Rotates the 8x8 grid by quarter_turns * 90 degrees: one turn sends (r, c) to (c, 7 - r).
inline LabeledImage rotate(const LabeledImage& img, int quarter_turns) {
    LabeledImage out = img;
    const int turns = ((quarter_turns % 4) + 4) % 4;
    for (int k = 0; k < turns; ++k) {
        LabeledImage next = out;
        for (std::size_t r = 0; r < kImageSide; ++r)
            for (std::size_t c = 0; c < kImageSide; ++c)
                next.pixels[c * kImageSide + (kImageSide - 1 - r)] = out.pixels[r * kImageSide + c];
        out = next;
    }
    return out;
}

/// Two-class task: images of digit_a (label 0) and digit_b (label 1), all
/// rotated by the same multiple of 90 degrees.
struct DigitTask {
    std::size_t digit_a = 0;
    std::size_t digit_b = 0;
    int rotation_degrees = 0;
    std::vector<LabeledImage> images;

    std::string id() const {
        return std::to_string(digit_a) + "-" + std::to_string(digit_b) + "-r" + std::to_string(rotation_degrees);
    }
};

inline DigitTask make_task(std::size_t digit_a, std::size_t digit_b, int rotation_degrees,
                           const std::vector<LabeledImage>& source) {
    if (digit_a == digit_b) throw UsageError("make_task: the two digits must differ");
    if (rotation_degrees % 90 != 0) throw UsageError("make_task: rotation must be a multiple of 90 degrees");
    DigitTask task{digit_a, digit_b, rotation_degrees, {}};
    std::size_t na = 0, nb = 0;
    for (const auto& img : source) {
        if (img.label != digit_a && img.label != digit_b) continue;
        auto r = rotate(img, rotation_degrees / 90);
        r.label = img.label == digit_a ? 0 : 1;
        (r.label == 0 ? na : nb)++;
        task.images.push_back(r);
    }
    if (na == 0 || nb == 0) throw DatasetError("make_task: no images for digit " + std::to_string(na == 0 ? digit_a : digit_b));
    return task;
}

// ---------------------------------------------------------------------------
// Burst / tonic temporal data

enum class SpikeMode { burst, tonic };

struct ModePattern {
    std::size_t on;
    std::size_t off;
    std::size_t period() const { return on + off; }
};

/// Burst: 5 spikes then 15 silent steps. Tonic: 2 spikes then 10 silent steps.
inline ModePattern mode_pattern(SpikeMode m) {
    return m == SpikeMode::burst ? ModePattern{5, 15} : ModePattern{2, 10};
}

inline const char* mode_name(SpikeMode m) { return m == SpikeMode::burst ? "burst" : "tonic"; }

/// Periodic template started at `phase` within its period, truncated to `steps`.
inline SpikeTrain mode_template(SpikeMode m, std::size_t phase, std::size_t steps) {
    const auto pat = mode_pattern(m);
    SpikeTrain s(1, steps);
    for (std::size_t t = 0; t < steps; ++t) s.set(0, t, (t + phase) % pat.period() < pat.on);
    return s;
}

struct TemporalExample {
    SpikeTrain x;
    SpikeMode mode = SpikeMode::burst;
    std::size_t phase = 0;
};

/// n sequences; mode ~ fair coin, phase ~ uniform over the mode's period.
inline std::vector<TemporalExample> make_burst_tonic(std::size_t n, std::size_t steps, Rng& rng) {
    if (steps < mode_pattern(SpikeMode::burst).period())
        throw UsageError("make_burst_tonic: T must cover one burst period (20 steps)");
    std::vector<TemporalExample> out;
    out.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        const SpikeMode m = bernoulli(rng, 0.5) ? SpikeMode::burst : SpikeMode::tonic;
        const std::size_t phase = uniform_index(rng, mode_pattern(m).period());
        out.push_back({mode_template(m, phase, steps), m, phase});
    }
    return out;
}

/// Constant one-row input of all ones.
inline SpikeTrain step_input(std::size_t steps) {
    if (steps < 1) throw UsageError("step_input: T must be >= 1");
    SpikeTrain s(1, steps);
    for (std::size_t t = 0; t < steps; ++t) s.set(0, t, true);
    return s;
}

// ---------------------------------------------------------------------------
// Binary SpikeTrain dump: uint32 LE n_neurons, uint32 LE T, then row-major bits
// packed LSB-first, padded to a whole byte at the end.

inline void write_spike_train(std::ostream& out, const SpikeTrain& s) {
    auto put32 = [&out](std::uint32_t v) {
        for (int b = 0; b < 4; ++b) out.put(static_cast<char>((v >> (8 * b)) & 0xFF));
    };
    put32(static_cast<std::uint32_t>(s.neurons()));
    put32(static_cast<std::uint32_t>(s.steps()));
    const auto bits = s.bits();
    for (std::size_t i = 0; i < bits.size(); i += 8) {
        std::uint8_t byte = 0;
        for (std::size_t b = 0; b < 8 && i + b < bits.size(); ++b) byte |= static_cast<std::uint8_t>(bits[i + b] << b);
        out.put(static_cast<char>(byte));
    }
}

inline SpikeTrain read_spike_train(std::istream& in) {
    auto get32 = [&in]() {
        std::uint32_t v = 0;
        for (int b = 0; b < 4; ++b) {
            const int c = in.get();
            if (c == EOF) throw ParseError("spike train dump: truncated header");
            v |= static_cast<std::uint32_t>(c & 0xFF) << (8 * b);
        }
        return v;
    };
    const std::size_t n = get32(), steps = get32();
    SpikeTrain s(n, steps);
    const std::size_t total = n * steps;
    for (std::size_t i = 0; i < total; i += 8) {
        const int c = in.get();
        if (c == EOF) throw ParseError("spike train dump: truncated payload");
        for (std::size_t b = 0; b < 8 && i + b < total; ++b) s.set((i + b) / steps, (i + b) % steps, (c >> b) & 1);
    }
    return s;
}

}  // namespace spikegan::data
