#include <gtest/gtest.h>

#include <filesystem>
#include <set>
#include <sstream>

#include "spikegan/codec.hpp"
#include "spikegan/datasets.hpp"

using namespace spikegan;
using namespace spikegan::data;

namespace {

std::string zeros_line(int label) {
    std::string s;
    for (int i = 0; i < 64; ++i) s += "0,";
    return s + std::to_string(label);
}

LabeledImage gradient_image() {
    LabeledImage img;
    for (std::size_t i = 0; i < kPixels; ++i) img.pixels[i] = static_cast<double>(i) / 63.0;
    img.label = 4;
    return img;
}

}  // namespace

TEST(Digits, ParsesZeroLine) {
    const auto img = parse_digits_line(zeros_line(3), 1);
    EXPECT_EQ(img.label, 3u);
    for (double p : img.pixels) EXPECT_EQ(p, 0.0);
}

TEST(Digits, FullIntensityMapsToOne) {
    std::string line = zeros_line(0);
    line.replace(0, 1, "16");
    EXPECT_EQ(parse_digits_line(line, 1).pixels[0], 1.0);
}

TEST(Digits, MalformedLineReportsLineNumber) {
    std::istringstream in(zeros_line(1) + "\n" + zeros_line(2) + "\n0,0,x\n");
    try {
        load_digits(in);
        FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
    EXPECT_THROW(parse_digits_line("17" + zeros_line(0).substr(1), 1), ParseError);
    EXPECT_THROW(parse_digits_line(zeros_line(10), 1), ParseError);
    EXPECT_THROW(parse_digits_line(zeros_line(1) + ",0", 1), ParseError);
}

TEST(Digits, MissingFileIsDatasetError) {
    EXPECT_THROW(load_digits(std::string("/nonexistent/optdigits.tra")), DatasetError);
}

TEST(Digits, SaveLoadRoundTrip) {
    std::vector<LabeledImage> imgs(3);
    for (std::size_t k = 0; k < 3; ++k) {
        for (std::size_t i = 0; i < kPixels; ++i) imgs[k].pixels[i] = static_cast<double>((i * 7 + k) % 17) / 16.0;
        imgs[k].label = k * 3;
    }
    std::stringstream buf;
    save_digits(buf, imgs);
    EXPECT_EQ(load_digits(buf), imgs);
}

TEST(Digits, BundledFileLoads) {
    const auto all = load_digits(std::string(SPIKEGAN_SOURCE_DIR) + "/data/optdigits.csv");
    EXPECT_EQ(all.size(), 1797u);
    std::set<std::size_t> labels;
    for (const auto& img : all) {
        labels.insert(img.label);
        for (double p : img.pixels) ASSERT_TRUE(p >= 0.0 && p <= 1.0);
    }
    EXPECT_EQ(labels.size(), 10u);
}

TEST(Digits, CanonicalTrainingSplitSize) {
    const std::string path = std::string(SPIKEGAN_SOURCE_DIR) + "/data/optdigits.tra";
    if (!std::filesystem::exists(path)) GTEST_SKIP() << "canonical optdigits.tra not present";
    EXPECT_EQ(load_digits(path).size(), 3823u);
}

TEST(Digits, SplitIsDeterministicPartition) {
    std::vector<LabeledImage> all(10);
    for (std::size_t i = 0; i < 10; ++i) all[i].label = i % 10;
    const auto [train, test] = split_train_test(all, 5);
    EXPECT_EQ(train.size(), 8u);
    EXPECT_EQ(test.size(), 2u);
    EXPECT_EQ(test[0].label, 4u);
    EXPECT_EQ(test[1].label, 9u);
}

TEST(Corrupt, ZeroFractionIsIdentity) {
    Rng rng(1);
    const auto img = gradient_image();
    EXPECT_EQ(corrupt(img, 0.0, rng), img);
}

TEST(Corrupt, FullFractionTouchesEveryPixel) {
    Rng rng(2);
    LabeledImage img;
    img.label = 7;
    const auto c = corrupt(img, 1.0, rng);
    EXPECT_EQ(c.label, 7u);
    for (double p : c.pixels) EXPECT_GT(p, 0.0);
}

TEST(Corrupt, ChangesExactlyFloorFractionPixels) {
    Rng rng(3);
    LabeledImage img;  // all zero, so every noisy pixel becomes positive
    for (double f : {0.1, 0.25, 0.5, 0.99}) {
        const auto c = corrupt(img, f, rng);
        std::size_t changed = 0;
        for (double p : c.pixels) changed += p > 0.0;
        EXPECT_EQ(changed, static_cast<std::size_t>(std::floor(f * 64.0)));
    }
}

TEST(Corrupt, StaysInRange) {
    Rng rng(4);
    LabeledImage bright;
    bright.pixels.fill(0.9);
    for (int k = 0; k < 100; ++k)
        for (double p : corrupt(bright, 0.5, rng).pixels) ASSERT_TRUE(p >= 0.0 && p <= 1.0);
    EXPECT_THROW(corrupt(bright, 1.5, rng), UsageError);
}

TEST(Rotate, QuarterTurnMapsCoordinates) {
    const auto img = gradient_image();
    const auto r = rotate(img, 1);
    for (std::size_t row = 0; row < 8; ++row)
        for (std::size_t col = 0; col < 8; ++col) EXPECT_EQ(r.pixels[col * 8 + (7 - row)], img.pixels[row * 8 + col]);
    EXPECT_EQ(rotate(img, 0), img);
    EXPECT_EQ(rotate(rotate(rotate(rotate(img, 1), 1), 1), 1), img);
    EXPECT_EQ(rotate(img, 4), img);
}

TEST(Task, RemapsLabelsAndRotates) {
    std::vector<LabeledImage> src;
    for (std::size_t l : {1u, 2u, 3u, 2u}) {
        auto img = gradient_image();
        img.label = l;
        src.push_back(img);
    }
    const auto task = make_task(2, 3, 180, src);
    ASSERT_EQ(task.images.size(), 3u);
    EXPECT_EQ(task.images[0].label, 0u);
    EXPECT_EQ(task.images[1].label, 1u);
    EXPECT_EQ(task.images[0].pixels[0], gradient_image().pixels[63]);
    EXPECT_EQ(task.id(), "2-3-r180");
    EXPECT_EQ(make_task(2, 3, 0, src).images[0].pixels, gradient_image().pixels);
    EXPECT_THROW(make_task(2, 2, 0, src), UsageError);
    EXPECT_THROW(make_task(2, 5, 0, src), DatasetError);
}

TEST(BurstTonic, PhaseZeroTemplates) {
    std::vector<int> burst(20, 0), tonic(12, 0);
    for (int t = 0; t < 5; ++t) burst[t] = 1;
    tonic[0] = tonic[1] = 1;
    EXPECT_EQ(mode_template(SpikeMode::burst, 0, 20), SpikeTrain::from_values(1, 20, std::span<const int>(burst)));
    EXPECT_EQ(mode_template(SpikeMode::tonic, 0, 12), SpikeTrain::from_values(1, 12, std::span<const int>(tonic)));
}

TEST(BurstTonic, SpikeCountsOverFiftySteps) {
    // Fifty steps are 2.5 burst periods: the trailing half period holds 0..5
    // spikes depending on phase, so counts span 10..15 and average 12.5.
    std::size_t total = 0;
    for (std::size_t phase = 0; phase < 20; ++phase) {
        const auto c = mode_template(SpikeMode::burst, phase, 50).total();
        EXPECT_GE(c, 10u);
        EXPECT_LE(c, 15u);
        total += c;
    }
    EXPECT_EQ(total, 250u);
    for (std::size_t phase = 0; phase < 12; ++phase) {
        const auto c = mode_template(SpikeMode::tonic, phase, 50).total();
        EXPECT_GE(c, 8u);
        EXPECT_LE(c, 10u);
    }
}

TEST(BurstTonic, GeneratedSequencesArePeriodicAndBalanced) {
    Rng rng(5);
    const auto set = make_burst_tonic(2000, 50, rng);
    std::size_t bursts = 0;
    for (const auto& ex : set) {
        const std::size_t period = mode_pattern(ex.mode).period();
        for (std::size_t t = period; t < 50; ++t) ASSERT_EQ(ex.x(0, t), ex.x(0, t - period));
        ASSERT_EQ(ex.x, mode_template(ex.mode, ex.phase, 50));
        bursts += ex.mode == SpikeMode::burst;
    }
    EXPECT_NEAR(static_cast<double>(bursts) / 2000.0, 0.5, 3.0 * 0.5 / std::sqrt(2000.0));
    EXPECT_THROW(make_burst_tonic(1, 10, rng), UsageError);
}

TEST(BurstTonic, DeterministicForSeed) {
    Rng a(6), b(6);
    const auto x = make_burst_tonic(50, 50, a), y = make_burst_tonic(50, 50, b);
    for (std::size_t k = 0; k < 50; ++k) EXPECT_EQ(x[k].x, y[k].x);
}

TEST(StepInput, AllOnes) {
    const auto s = step_input(3);
    EXPECT_EQ(s.neurons(), 1u);
    EXPECT_EQ(s, SpikeTrain::from_values(1, 3, {1, 1, 1}));
    EXPECT_EQ(codec::rate_decode(step_input(17))[0], 1.0);
    EXPECT_THROW(step_input(0), UsageError);
}

TEST(SpikeDump, RoundTrip) {
    Rng rng(7);
    for (auto [n, t] : {std::pair<std::size_t, std::size_t>{1, 50}, {3, 7}, {10, 5}, {0, 4}}) {
        std::vector<double> v(n, 0.4);
        const auto s = codec::rate_encode(v, t, rng);
        std::stringstream buf;
        write_spike_train(buf, s);
        EXPECT_EQ(buf.str().size(), 8 + (n * t + 7) / 8);
        EXPECT_EQ(read_spike_train(buf), s);
    }
    std::stringstream truncated(std::string("\x02\x00\x00\x00\x08\x00\x00\x00\x01", 9));
    EXPECT_THROW(read_spike_train(truncated), ParseError);
}
