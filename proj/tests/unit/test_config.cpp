#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "spikegan/config.hpp"

using namespace spikegan;
using namespace spikegan::config;

namespace {

using Kind = LayerDescriptor::Kind;

std::filesystem::path write_ini(const std::string& name, const std::string& text) {
    const auto dir = std::filesystem::temp_directory_path() / "spikegan-config-tests";
    std::filesystem::create_directories(dir);
    const auto path = dir / name;
    std::ofstream(path) << text;
    return path;
}

const char* kBase = R"([experiment]
id = digits-gan
seed = 4

[train]
steps = 5
batch = 8

[preset.desk]
train.batch = 16

[preset.paper]
train.steps = ?
)";

}  // namespace

TEST(ConvSpec, FullScaleDiscriminator) {
    const auto layers = parse_conv_spec("c128k4s2xc1k4s1x1");
    ASSERT_EQ(layers.size(), 3u);
    EXPECT_EQ(layers[0], (LayerDescriptor{Kind::conv1d, 128, 4, 2}));
    EXPECT_EQ(layers[1], (LayerDescriptor{Kind::conv1d, 1, 4, 1}));
    EXPECT_EQ(layers[2], (LayerDescriptor{Kind::dense, 1, 0, 0}));
}

TEST(ConvSpec, SingleUnitConv) {
    const auto layers = parse_conv_spec("c1k1s1");
    ASSERT_EQ(layers.size(), 1u);
    EXPECT_EQ(layers[0], (LayerDescriptor{Kind::conv1d, 1, 1, 1}));
}

TEST(ConvSpec, DenseLayers) {
    const auto layers = parse_conv_spec("d64xd32x1");
    ASSERT_EQ(layers.size(), 3u);
    EXPECT_EQ(layers[0].out, 64u);
    EXPECT_EQ(layers[1].out, 32u);
    EXPECT_EQ(layers[2].kind, Kind::dense);
}

TEST(ConvSpec, ZeroKernelReportsPosition) {
    try {
        parse_conv_spec("c2k0s1");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("position 3"), std::string::npos) << msg;
        EXPECT_NE(msg.find("kernel"), std::string::npos) << msg;
    }
}

TEST(ConvSpec, MalformedStrings) {
    for (const char* bad : {"", "x1", "c2k2", "c2k2s1x", "q3", "4x1", "c2k2s1xx1"})
        EXPECT_THROW(parse_conv_spec(bad), ParseError) << bad;
}

TEST(ConvSpec, BuildsNetworkOfExpectedShape) {
    Rng rng(1);
    const auto net = build_network(parse_conv_spec("c8k4s2xc1k4s1x1"), 64, 10, 0.2, rng);
    const auto [r, c] = net.output_shape();
    EXPECT_EQ(r, 1u);
    EXPECT_EQ(c, 1u);
    // 64*4*8+8, 8*4*1+1, 1*1+1
    EXPECT_EQ(net.size(), 2048u + 8u + 32u + 1u + 2u);
    EXPECT_THROW(build_network(parse_conv_spec("c8k12s1x1"), 64, 10, 0.2, rng), ConfigError);
    EXPECT_THROW(build_network(parse_conv_spec("d4"), 64, 1, 0.2, rng), ConfigError);
}

TEST(ConfigLoad, PresetThenOverrides) {
    const auto path = write_ini("base.ini", kBase);
    EXPECT_EQ(load(path).config.train.batch, 8u);
    EXPECT_EQ(load(path, "desk").config.train.batch, 16u);
    const auto c = load(path, "desk", {"train.batch=3", "experiment.seed=9"}).config;
    EXPECT_EQ(c.train.batch, 3u);
    EXPECT_EQ(c.seed, 9u);
    EXPECT_EQ(c.train.steps, 5u);
}

TEST(ConfigLoad, UnknownKeyIsRejected) {
    const auto path = write_ini("base.ini", kBase);
    EXPECT_THROW(load(path, "", {"train.bogus=1"}), ConfigError);
    EXPECT_THROW(load(path, "nope"), ConfigError);
    EXPECT_THROW(load(write_ini("bad.ini", "[train]\nsteps = five\n")), ConfigError);
}

TEST(ConfigLoad, RequiredKeyNamesTheFix) {
    const auto path = write_ini("base.ini", kBase);
    try {
        load(path, "paper");
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("train.steps"), std::string::npos) << msg;
        EXPECT_NE(msg.find("--set"), std::string::npos) << msg;
    }
    EXPECT_EQ(load(path, "paper", {"train.steps=12"}).config.train.steps, 12u);
}

TEST(ConfigLoad, EchoRoundTrips) {
    const auto path = write_ini("base.ini", kBase);
    const auto c = load(path, "desk", {"eval.noise_levels=0,0.25", "generator.basis=raised_cosine"}).config;
    std::ostringstream first;
    echo(first, c);
    const auto again = load(write_ini("echo.ini", first.str())).config;
    std::ostringstream second;
    echo(second, again);
    EXPECT_EQ(first.str(), second.str());
}

TEST(ConfigLoad, ShippedConfigsParse) {
    const std::filesystem::path dir = std::string(SPIKEGAN_SOURCE_DIR) + "/configs";
    std::size_t n = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.path().extension() != ".ini") continue;
        ++n;
        EXPECT_NO_THROW(load(e.path())) << e.path();
        EXPECT_NO_THROW(load(e.path(), "desk")) << e.path();
    }
    EXPECT_EQ(n, experiment_ids().size());
}
