#pragma once

// Versioned text checkpoints. Doubles are stored as hexfloats so every value
// round-trips bit-exactly.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "spikegan/codec.hpp"
#include "spikegan/common.hpp"
#include "spikegan/nn.hpp"
#include "spikegan/snn.hpp"

namespace spikegan::ckpt {

inline constexpr int kFormatVersion = 1;

class Writer {
public:
    explicit Writer(std::ostream& out) : out_(out) {}

    Writer& tag(const std::string& t) {
        out_ << '\n' << t;
        return *this;
    }
    Writer& size(std::size_t v) {
        out_ << ' ' << v;
        return *this;
    }
    Writer& u64(std::uint64_t v) {
        out_ << ' ' << v;
        return *this;
    }
    Writer& real(double v) {
        char buf[64];
        std::snprintf(buf, sizeof buf, " %a", v);
        out_ << buf;
        return *this;
    }
    Writer& word(const std::string& w) {
        if (w.empty() || w.find_first_of(" \t\n") != std::string::npos)
            throw UsageError("checkpoint word must be non-empty without whitespace: '" + w + "'");
        out_ << ' ' << w;
        return *this;
    }
    template <class Range>
    Writer& reals(const Range& r) {
        size(std::size(r));
        for (double v : r) real(v);
        return *this;
    }
    template <class Range>
    Writer& sizes(const Range& r) {
        size(std::size(r));
        for (auto v : r) size(static_cast<std::size_t>(v));
        return *this;
    }

private:
    std::ostream& out_;
};

class Reader {
public:
    explicit Reader(std::istream& in) : in_(in) {}

    std::string word() {
        std::string w;
        if (!(in_ >> w)) throw ParseError("checkpoint: unexpected end of file");
        return w;
    }
    void expect(const std::string& t) {
        const auto w = word();
        if (w != t) throw ParseError("checkpoint: expected '" + t + "', found '" + w + "'");
    }
    std::size_t size() { return static_cast<std::size_t>(u64()); }
    std::uint64_t u64() {
        const auto w = word();
        char* end = nullptr;
        const auto v = std::strtoull(w.c_str(), &end, 10);
        if (end != w.c_str() + w.size()) throw ParseError("checkpoint: bad integer '" + w + "'");
        return v;
    }
    double real() {
        const auto w = word();
        char* end = nullptr;
        const double v = std::strtod(w.c_str(), &end);
        if (end != w.c_str() + w.size()) throw ParseError("checkpoint: bad number '" + w + "'");
        return v;
    }
    std::vector<double> reals() {
        std::vector<double> v(size());
        for (double& x : v) x = real();
        return v;
    }
    std::vector<std::size_t> sizes() {
        std::vector<std::size_t> v(size());
        for (auto& x : v) x = size();
        return v;
    }

private:
    std::istream& in_;
};

// ---------------------------------------------------------------------------
// RNG engine state (the standard textual form of mersenne_twister_engine).

inline void write_rng(Writer& w, const Rng& rng) {
    std::ostringstream s;
    s << rng;
    std::istringstream words(s.str());
    std::vector<std::string> parts;
    for (std::string p; words >> p;) parts.push_back(p);
    w.tag("rng").size(parts.size());
    for (const auto& p : parts) w.word(p);
}

inline Rng read_rng(Reader& r) {
    r.expect("rng");
    const auto n = r.size();
    std::string text;
    for (std::size_t i = 0; i < n; ++i) text += r.word() + ' ';
    std::istringstream s(text);
    Rng rng;
    if (!(s >> rng)) throw ParseError("checkpoint: corrupt rng state");
    return rng;
}

// ---------------------------------------------------------------------------
// Spiking network

inline void write_basis(Writer& w, const BasisMatrix& b) {
    w.tag("basis").size(b.window()).size(b.count()).reals(b.values());
}

inline BasisMatrix read_basis(Reader& r) {
    r.expect("basis");
    const auto window = r.size(), count = r.size();
    return BasisMatrix(window, count, r.reals());
}

inline void write_topology(Writer& w, const snn::SnnTopology& t) {
    w.tag("topology").size(t.n_exogenous());
    w.tag("hidden").sizes(t.hidden());
    w.tag("readout").sizes(t.readout());
    w.tag("synapses").size(t.synapses().size());
    for (const auto& s : t.synapses()) w.size(s.source).size(s.target);
    w.tag("feedback").sizes(t.feedback());
}

inline snn::SnnTopology read_topology(Reader& r) {
    r.expect("topology");
    const auto n_exo = r.size();
    r.expect("hidden");
    auto hidden = r.sizes();
    r.expect("readout");
    auto readout = r.sizes();
    r.expect("synapses");
    std::vector<snn::Synapse> syn(r.size());
    for (auto& s : syn) {
        s.source = r.size();
        s.target = r.size();
    }
    r.expect("feedback");
    const auto fb = r.sizes();
    return snn::SnnTopology(n_exo, std::move(hidden), std::move(readout), std::move(syn),
                            std::vector<bool>(fb.begin(), fb.end()));
}

inline void write_params(Writer& w, const snn::SnnParams& p) {
    w.tag("snn_params");
    write_basis(w, p.synaptic_basis());
    write_basis(w, p.feedback_basis());
    w.tag("values").reals(p.values());
}

inline snn::SnnParams read_params(Reader& r, const snn::SnnTopology& topo) {
    r.expect("snn_params");
    auto a = read_basis(r);
    auto b = read_basis(r);
    snn::SnnParams p(topo, std::move(a), std::move(b));
    r.expect("values");
    const auto v = r.reals();
    if (v.size() != p.size()) throw ParseError("checkpoint: generator parameter count does not match topology");
    std::copy(v.begin(), v.end(), p.values().begin());
    return p;
}

// ---------------------------------------------------------------------------
// Feed-forward network: architecture as builder calls, then the flat values.

inline const char* activation_word(nn::ActivationKind k) {
    switch (k) {
        case nn::ActivationKind::identity: return "identity";
        case nn::ActivationKind::relu: return "relu";
        case nn::ActivationKind::leaky_relu: return "leaky_relu";
        case nn::ActivationKind::sigmoid: return "sigmoid";
    }
    return "?";
}

inline nn::Activation read_activation(Reader& r) {
    const auto w = r.word();
    const double slope = r.real();
    if (w == "identity") return nn::Activation::identity();
    if (w == "relu") return nn::Activation::relu();
    if (w == "leaky_relu") return nn::Activation::leaky_relu(slope);
    if (w == "sigmoid") return nn::Activation::sigmoid();
    throw ParseError("checkpoint: unknown activation '" + w + "'");
}

inline void write_ann(Writer& w, const nn::AnnParams& net) {
    w.tag("ann").size(net.input_rows()).size(net.input_cols()).size(net.layers().size());
    for (const auto& l : net.layers()) {
        switch (l.kind) {
            case nn::LayerKind::dense: w.tag("dense").size(l.out); break;
            case nn::LayerKind::conv1d: w.tag("conv1d").size(l.out).size(l.kernel).size(l.stride); break;
            case nn::LayerKind::flatten: w.tag("flatten"); continue;
        }
        w.word(activation_word(l.activation.kind)).real(l.activation.slope);
    }
    w.tag("values").reals(net.values());
}

inline nn::AnnParams read_ann(Reader& r) {
    r.expect("ann");
    const auto rows = r.size(), cols = r.size(), n_layers = r.size();
    nn::NetworkBuilder b(rows, cols);
    for (std::size_t i = 0; i < n_layers; ++i) {
        const auto kind = r.word();
        if (kind == "dense") {
            const auto out = r.size();
            b.dense(out, read_activation(r));
        } else if (kind == "conv1d") {
            const auto out = r.size(), k = r.size(), s = r.size();
            b.conv1d(out, k, s, read_activation(r));
        } else if (kind == "flatten") {
            b.flatten();
        } else {
            throw ParseError("checkpoint: unknown layer '" + kind + "'");
        }
    }
    auto net = b.build();
    r.expect("values");
    const auto v = r.reals();
    if (v.size() != net.size()) throw ParseError("checkpoint: network parameter count does not match layers");
    std::copy(v.begin(), v.end(), net.values().begin());
    return net;
}

// ---------------------------------------------------------------------------
// Files

inline void write_header(Writer& w, const std::string& kind) {
    w.tag("spikegan-checkpoint").size(kFormatVersion).word(kind);
}

inline void read_header(Reader& r, const std::string& kind) {
    r.expect("spikegan-checkpoint");
    const auto version = r.size();
    if (version != kFormatVersion)
        throw ParseError("checkpoint: unsupported format version " + std::to_string(version));
    r.expect(kind);
}

/// Writes via a temporary file and rename so a crash never leaves a torn checkpoint.
template <class Fn>
void save_file(const std::filesystem::path& path, Fn&& body) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw Error("cannot write checkpoint '" + tmp + "'");
        Writer w(out);
        body(w);
        out << '\n';
        if (!out) throw Error("failed writing checkpoint '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

template <class Fn>
void load_file(const std::filesystem::path& path, Fn&& body) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
    Reader r(in);
    body(r);
}

}  // namespace spikegan::ckpt
