#pragma once

// Experiment configuration: INI text (key = value, one section per module).
// A file may carry [preset.<name>] sections whose "section.key = value"
// entries override the base values when that preset is selected. A value of
// "?" marks a key the run must supply (e.g. via --set).

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "spikegan/common.hpp"
#include "spikegan/eval.hpp"
#include "spikegan/nn.hpp"
#include "spikegan/training.hpp"

namespace spikegan::config {

// ---------------------------------------------------------------------------
// Discriminator architecture strings

struct LayerDescriptor {
    enum class Kind { conv1d, dense } kind = Kind::dense;
    std::size_t out = 0;
    std::size_t kernel = 0;
    std::size_t stride = 0;

    friend bool operator==(const LayerDescriptor&, const LayerDescriptor&) = default;
};

/// Grammar: layers separated by 'x'. "c<out>k<kernel>s<stride>" is a 1-D conv,
/// "d<out>" a dense layer, and a bare integer (only as the last token) a dense
/// head of that width.
inline std::vector<LayerDescriptor> parse_conv_spec(const std::string& spec) {
    std::vector<LayerDescriptor> out;
    std::size_t pos = 0;
    auto fail = [&spec](std::size_t at, const std::string& why) -> void {
        throw ParseError("architecture '" + spec + "' at position " + std::to_string(at) + ": " + why);
    };
    auto number = [&](const char* what) {
        const std::size_t start = pos;
        std::size_t v = 0;
        const auto [ptr, ec] = std::from_chars(spec.data() + pos, spec.data() + spec.size(), v);
        if (ec != std::errc() || ptr == spec.data() + pos) fail(start, std::string("expected ") + what);
        pos = static_cast<std::size_t>(ptr - spec.data());
        if (v < 1) fail(start, std::string(what) + " must be >= 1");
        return v;
    };
    auto letter = [&](char c) {
        if (pos >= spec.size() || spec[pos] != c) fail(pos, std::string("expected '") + c + "'");
        ++pos;
    };
    if (spec.empty()) fail(0, "empty specification");
    while (pos < spec.size()) {
        const std::size_t start = pos;
        LayerDescriptor l;
        if (spec[pos] == 'c') {
            ++pos;
            l.kind = LayerDescriptor::Kind::conv1d;
            l.out = number("channel count");
            letter('k');
            l.kernel = number("kernel width");
            letter('s');
            l.stride = number("stride");
        } else if (spec[pos] == 'd') {
            ++pos;
            l.out = number("layer width");
        } else if (std::isdigit(static_cast<unsigned char>(spec[pos]))) {
            l.out = number("head width");
            if (pos != spec.size()) fail(start, "a bare dense head must be the last layer");
        } else {
            fail(pos, std::string("unexpected character '") + spec[pos] + "'");
        }
        out.push_back(l);
        if (pos < spec.size()) {
            letter('x');
            if (pos == spec.size()) fail(pos, "trailing 'x'");
        }
    }
    return out;
}

/// Builds a discriminator over (rows x cols) inputs. Hidden layers use leaky
/// ReLU, the last layer is squashed by a sigmoid and must have one output.
inline nn::AnnParams build_network(const std::vector<LayerDescriptor>& layers, std::size_t rows, std::size_t cols,
                                   double leaky_slope, Rng& rng) {
    if (layers.empty() || layers.back().out != 1)
        throw ConfigError("discriminator must end in a layer with a single output");
    nn::NetworkBuilder b(rows, cols);
    std::size_t cur_cols = cols;
    for (std::size_t k = 0; k < layers.size(); ++k) {
        const auto& l = layers[k];
        const auto act = k + 1 == layers.size() ? nn::Activation::sigmoid() : nn::Activation::leaky_relu(leaky_slope);
        if (l.kind == LayerDescriptor::Kind::conv1d) {
            if (cur_cols == 1 && k > 0 && layers[k - 1].kind == LayerDescriptor::Kind::dense)
                throw ConfigError("conv layer cannot follow a dense layer");
            if (l.kernel > cur_cols)
                throw ConfigError("conv kernel " + std::to_string(l.kernel) + " exceeds input length " +
                                  std::to_string(cur_cols));
            b.conv1d(l.out, l.kernel, l.stride, act);
            cur_cols = nn::conv_output_length(cur_cols, l.kernel, l.stride);
        } else {
            if (cur_cols != 1) {
                b.flatten();
                cur_cols = 1;
            }
            b.dense(l.out, act);
        }
    }
    if (cur_cols != 1) b.flatten();
    auto net = b.build();
    nn::glorot_init(net, rng);
    return net;
}

// ---------------------------------------------------------------------------
// Experiment configuration

inline const std::vector<std::string>& experiment_ids() {
    static const std::vector<std::string> ids{"digits-gan",     "digits-noise",   "neuromorphic-gan", "temporal-gan",
                                              "temporal-bayes", "temporal-ml",    "meta-continual",   "gradcheck"};
    return ids;
}

struct ExperimentConfig {
    // [experiment]
    std::string id = "digits-gan";
    std::uint64_t seed = 1;
    std::string out;  // default runs/<id>-seed<seed>

    // [data]
    std::string digits = "data/optdigits.csv";
    std::vector<std::size_t> classes{0, 1};
    std::size_t test_every = 5;
    std::size_t temporal_samples = 10000;

    // [generator]
    std::size_t hidden = 16;
    std::size_t window = 5;
    std::string basis = "exp";  // exp | raised_cosine | identity
    std::size_t basis_count = 2;
    std::string feedback_basis = "exp";
    std::size_t feedback_count = 2;
    double tau_f = 2.0;
    double init_std = 0.1;
    double init_bias = 0.0;
    bool feedback = true;

    // [discriminator]
    std::string arch = "d64x1";
    std::string cnn_arch = "c128k4s2xc1k4s1x1";  // neuromorphic-gan CNN variant
    double leaky_slope = 0.2;

    // [train]
    train::TrainConfig train;
    std::string decode = "rate";  // rate | time_surface | none
    double tau_s = 2.0;
    std::size_t particles = 5;

    // [eval]
    std::size_t eval_every = 100;
    std::size_t samples_per_class = 200;
    std::string classifier = "ann";  // ann | snn
    std::vector<std::size_t> classifier_hidden{100, 100};
    std::size_t classifier_epochs = 30;
    std::size_t classifier_batch = 16;
    double classifier_lr = 0.05;
    std::size_t snn_hidden = 16;
    std::size_t snn_epochs = 5;
    double snn_lr = 0.05;
    std::size_t coverage_samples = 100;
    std::vector<double> noise_levels{0.0, 0.1, 0.5};
    std::size_t pca_components = 2;

    // [meta]
    std::size_t meta_tasks = 100;
    std::size_t meta_batches_per_task = 2;
    std::size_t meta_batch_size = 5;
    std::size_t meta_serve_steps = 10;
    std::size_t meta_tasks_per_update = 10;
    std::size_t meta_examples_per_task = 5;
    std::size_t meta_within_steps = 10;
    double meta_step = 0.1;
    std::vector<std::size_t> meta_digits{0, 1, 2, 3, 4, 5, 6};
    std::vector<std::size_t> meta_heldout_digits{7, 8, 9};
    std::size_t meta_heldout_steps = 200;
    std::size_t meta_eval_every = 10;

    // [gradcheck]
    std::size_t gradcheck_trials = 5;
    std::size_t gradcheck_episodes = 100000;

    // [output]
    std::size_t checkpoint_every = 500;
    bool plots = true;

    train::Decode decode_mode() const {
        if (decode == "rate") return train::Decode::rate;
        if (decode == "time_surface") return train::Decode::time_surface;
        return train::Decode::none;
    }
    eval::ClassifierSpec classifier_spec() const {
        return {classifier_hidden, classifier_epochs, classifier_batch, classifier_lr};
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& raw) {
    const auto s = trim(raw);
    T v{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        throw ConfigError("config key '" + key + "': cannot parse '" + raw + "' as a number");
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& raw) {
    const auto s = trim(raw);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + raw + "'");
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& raw) {
    std::vector<T> out;
    std::stringstream ss(raw);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!trim(item).empty()) out.push_back(parse_number<T>(key, item));
    return out;
}

inline std::string format(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <class T>
std::string join(const std::vector<T>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        if constexpr (std::is_floating_point_v<T>) s += format(v[i]);
        else s += std::to_string(v[i]);
    }
    return s;
}

/// A typed binding between "section.key" and a config field.
struct Field {
    std::string key;
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
};

}  // namespace detail

/// Every configurable key, in echo order.
inline std::vector<detail::Field> fields(ExperimentConfig& c) {
    using namespace detail;
    std::vector<Field> f;
    auto str = [&f](std::string key, std::string& v) {
        f.push_back({key, [&v](const std::string& s) { v = trim(s); }, [&v] { return v; }});
    };
    auto sz = [&f](std::string key, std::size_t& v) {
        f.push_back({key, [&v, key](const std::string& s) { v = parse_number<std::size_t>(key, s); },
                     [&v] { return std::to_string(v); }});
    };
    auto u64 = [&f](std::string key, std::uint64_t& v) {
        f.push_back({key, [&v, key](const std::string& s) { v = parse_number<std::uint64_t>(key, s); },
                     [&v] { return std::to_string(v); }});
    };
    auto real = [&f](std::string key, double& v) {
        f.push_back({key, [&v, key](const std::string& s) { v = parse_number<double>(key, s); },
                     [&v] { return format(v); }});
    };
    auto flag = [&f](std::string key, bool& v) {
        f.push_back({key, [&v, key](const std::string& s) { v = parse_bool(key, s); },
                     [&v] { return std::string(v ? "true" : "false"); }});
    };
    auto sizes = [&f](std::string key, std::vector<std::size_t>& v) {
        f.push_back({key, [&v, key](const std::string& s) { v = parse_list<std::size_t>(key, s); },
                     [&v] { return join(v); }});
    };
    auto reals = [&f](std::string key, std::vector<double>& v) {
        f.push_back({key, [&v, key](const std::string& s) { v = parse_list<double>(key, s); },
                     [&v] { return join(v); }});
    };
    auto gen_loss = [&f](std::string key, nn::GenLoss& v) {
        f.push_back({key,
                     [&v, key](const std::string& s) {
                         const auto t = trim(s);
                         if (t == "saturating") v = nn::GenLoss::saturating;
                         else if (t == "non_saturating") v = nn::GenLoss::non_saturating;
                         else throw ConfigError("config key '" + key + "': expected saturating|non_saturating");
                     },
                     [&v] { return std::string(v == nn::GenLoss::saturating ? "saturating" : "non_saturating"); }});
    };

    str("experiment.id", c.id);
    u64("experiment.seed", c.seed);
    str("experiment.out", c.out);

    str("data.digits", c.digits);
    sizes("data.classes", c.classes);
    sz("data.test_every", c.test_every);
    sz("data.temporal_samples", c.temporal_samples);

    sz("generator.hidden", c.hidden);
    sz("generator.window", c.window);
    str("generator.basis", c.basis);
    sz("generator.basis_count", c.basis_count);
    str("generator.feedback_basis", c.feedback_basis);
    sz("generator.feedback_count", c.feedback_count);
    real("generator.tau_f", c.tau_f);
    real("generator.init_std", c.init_std);
    real("generator.init_bias", c.init_bias);
    flag("generator.feedback", c.feedback);

    str("discriminator.arch", c.arch);
    str("discriminator.cnn_arch", c.cnn_arch);
    real("discriminator.leaky_slope", c.leaky_slope);

    real("train.lr_disc", c.train.lr_disc);
    real("train.lr_gen", c.train.lr_gen);
    sz("train.batch", c.train.batch);
    sz("train.steps", c.train.steps);
    gen_loss("train.gen_loss", c.train.gen_loss);
    real("train.svgd_step", c.train.svgd_step);
    real("train.svgd_bandwidth", c.train.svgd_bandwidth);
    flag("train.reward_baseline", c.train.reward_baseline);
    sz("train.iterations", c.train.iterations);
    str("train.decode", c.decode);
    real("train.tau_s", c.tau_s);
    sz("train.particles", c.particles);

    sz("eval.every", c.eval_every);
    sz("eval.samples_per_class", c.samples_per_class);
    str("eval.classifier", c.classifier);
    sizes("eval.classifier_hidden", c.classifier_hidden);
    sz("eval.classifier_epochs", c.classifier_epochs);
    sz("eval.classifier_batch", c.classifier_batch);
    real("eval.classifier_lr", c.classifier_lr);
    sz("eval.snn_hidden", c.snn_hidden);
    sz("eval.snn_epochs", c.snn_epochs);
    real("eval.snn_lr", c.snn_lr);
    sz("eval.coverage_samples", c.coverage_samples);
    reals("eval.noise_levels", c.noise_levels);
    sz("eval.pca_components", c.pca_components);

    sz("meta.tasks", c.meta_tasks);
    sz("meta.batches_per_task", c.meta_batches_per_task);
    sz("meta.batch_size", c.meta_batch_size);
    sz("meta.serve_steps", c.meta_serve_steps);
    sz("meta.tasks_per_update", c.meta_tasks_per_update);
    sz("meta.examples_per_task", c.meta_examples_per_task);
    sz("meta.within_steps", c.meta_within_steps);
    real("meta.step", c.meta_step);
    sizes("meta.digits", c.meta_digits);
    sizes("meta.heldout_digits", c.meta_heldout_digits);
    sz("meta.heldout_steps", c.meta_heldout_steps);
    sz("meta.eval_every", c.meta_eval_every);

    sz("gradcheck.trials", c.gradcheck_trials);
    sz("gradcheck.episodes", c.gradcheck_episodes);

    sz("output.checkpoint_every", c.checkpoint_every);
    flag("output.plots", c.plots);
    return f;
}

/// Checks value ranges and cross-field constraints.
inline void validate(const ExperimentConfig& c) {
    auto fail = [](const std::string& why) { throw ConfigError(why); };
    const auto& ids = experiment_ids();
    if (std::find(ids.begin(), ids.end(), c.id) == ids.end()) fail("unknown experiment id '" + c.id + "'");
    if (c.decode != "rate" && c.decode != "time_surface" && c.decode != "none")
        fail("train.decode must be rate, time_surface or none");
    for (const auto* b : {&c.basis, &c.feedback_basis})
        if (*b != "exp" && *b != "raised_cosine" && *b != "identity")
            fail("generator bases must be exp, raised_cosine or identity");
    if (c.classifier != "ann" && c.classifier != "snn") fail("eval.classifier must be ann or snn");
    if (c.window < 1) fail("generator.window must be >= 1");
    if (c.train.steps < 1) fail("train.steps must be >= 1");
    if (c.train.batch < 1) fail("train.batch must be >= 1");
    if (c.particles < 1) fail("train.particles must be >= 1");
    if (c.tau_s <= 0.0) fail("train.tau_s must be positive");
    if (c.classes.size() < 2 && (c.id == "digits-gan" || c.id == "digits-noise" || c.id == "neuromorphic-gan"))
        fail("data.classes needs at least two labels");
    for (auto k : c.classes)
        if (k > 9) fail("data.classes entries must be digits 0..9");
    for (double n : c.noise_levels)
        if (!(n >= 0.0 && n <= 1.0)) fail("eval.noise_levels must lie in [0,1]");
    if (c.meta_digits.size() < 2 || c.meta_heldout_digits.size() < 2)
        fail("meta.digits and meta.heldout_digits need at least two digits each");
    if (c.train.lr_disc < 0 || c.train.lr_gen < 0 || c.meta_step < 0) fail("learning rates must be non-negative");
    parse_conv_spec(c.arch);
    parse_conv_spec(c.cnn_arch);
}

struct Loaded {
    ExperimentConfig config;
    std::filesystem::path base_dir;  // relative dataset paths resolve against this first
};

/// Reads `path`, applies the named preset (empty = none) and then the
/// "section.key=value" overrides, in that order.
inline Loaded load(const std::filesystem::path& path, const std::string& preset = "",
                   const std::vector<std::string>& overrides = {}) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::read_ini(path.string(), tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(e.what());
    }
    Loaded out;
    out.base_dir = path.parent_path();
    auto f = fields(out.config);
    std::map<std::string, detail::Field*> by_key;
    for (auto& x : f) by_key[x.key] = &x;

    std::map<std::string, std::string> values;
    std::map<std::string, pt::ptree> presets;
    for (const auto& [section, body] : tree) {
        if (section.rfind("preset.", 0) == 0) {
            presets[section.substr(7)] = body;
            continue;
        }
        if (body.empty()) throw ConfigError("config: top-level key '" + section + "' outside any section");
        for (const auto& [key, v] : body) values[section + "." + key] = v.data();
    }
    if (!preset.empty()) {
        const auto it = presets.find(preset);
        if (it == presets.end()) throw ConfigError("config has no preset '" + preset + "'");
        for (const auto& [key, v] : it->second) values[key] = v.data();
    }
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not section.key=value");
        values[detail::trim(o.substr(0, eq))] = o.substr(eq + 1);
    }
    for (const auto& [key, v] : values) {
        const auto it = by_key.find(key);
        if (it == by_key.end()) throw ConfigError("unknown config key '" + key + "'");
        if (detail::trim(v) == "?")
            throw ConfigError("config key '" + key + "' is required" +
                              (preset.empty() ? std::string() : " under preset '" + preset + "'") +
                              "; supply it with --set " + key + "=<value>");
        it->second->set(v);
    }
    validate(out.config);
    return out;
}

/// Effective configuration as INI; reading it back reproduces the run.
inline void echo(std::ostream& out, ExperimentConfig c) {
    std::string section;
    for (const auto& f : fields(c)) {
        const auto dot = f.key.find('.');
        const auto s = f.key.substr(0, dot);
        if (s != section) {
            out << (section.empty() ? "" : "\n") << '[' << s << "]\n";
            section = s;
        }
        out << f.key.substr(dot + 1) << " = " << f.get() << '\n';
    }
}

/// Resolves a dataset path: absolute as is, else relative to the config file,
/// else relative to the working directory.
inline std::filesystem::path resolve(const std::string& p, const std::filesystem::path& base_dir) {
    const std::filesystem::path path(p);
    if (path.is_absolute()) return path;
    if (!base_dir.empty() && std::filesystem::exists(base_dir / path)) return base_dir / path;
    return path;
}

}  // namespace spikegan::config
