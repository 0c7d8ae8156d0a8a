#pragma once

// Hand-written feed-forward networks: dense and 1-D convolution layers with
// explicit forward/backward passes. Used for the adversarial discriminator and
// the evaluation classifiers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spikegan/common.hpp"
#include "spikegan/tensor.hpp"

namespace spikegan::nn {

enum class ActivationKind { identity, relu, leaky_relu, sigmoid };

struct Activation {
    ActivationKind kind = ActivationKind::identity;
    double slope = 0.01;  // leaky_relu only

    static Activation identity() { return {}; }
    static Activation relu() { return {ActivationKind::relu}; }
    static Activation leaky_relu(double slope = 0.01) { return {ActivationKind::leaky_relu, slope}; }
    static Activation sigmoid() { return {ActivationKind::sigmoid}; }

    double apply(double z) const {
        switch (kind) {
            case ActivationKind::relu: return z > 0.0 ? z : 0.0;
            case ActivationKind::leaky_relu: return z > 0.0 ? z : slope * z;
            case ActivationKind::sigmoid: return spikegan::sigmoid(z);
            case ActivationKind::identity: break;
        }
        return z;
    }

    /// d apply / dz, given both the pre-activation and the activation value.
    double derivative(double z, double a) const {
        switch (kind) {
            case ActivationKind::relu: return z > 0.0 ? 1.0 : 0.0;
            case ActivationKind::leaky_relu: return z > 0.0 ? 1.0 : slope;
            case ActivationKind::sigmoid: return a * (1.0 - a);
            case ActivationKind::identity: break;
        }
        return 1.0;
    }

    friend bool operator==(const Activation&, const Activation&) = default;
};

enum class LayerKind { dense, conv1d, flatten };

/// One layer. Dense consumes an n x 1 column; Conv1d consumes channels x length;
/// Flatten turns channels x length into (channels*length) x 1.
/// Weight layouts: dense [out][in], conv [out][in][kernel].
struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    std::size_t in = 0;   // input features (dense) or channels (conv)
    std::size_t out = 0;  // output features or channels
    std::size_t kernel = 0;
    std::size_t stride = 1;
    std::size_t in_length = 0;   // conv/flatten: input length
    std::size_t out_length = 0;  // conv: output length
    Activation activation;
    std::size_t weight_offset = 0;
    std::size_t weight_count = 0;
    std::size_t bias_offset = 0;
    std::size_t bias_count = 0;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline std::size_t conv_output_length(std::size_t length, std::size_t kernel, std::size_t stride) {
    if (kernel == 0 || stride == 0) throw ConfigError("conv1d: kernel and stride must be >= 1");
    if (length < kernel)
        throw ConfigError("conv1d: input length " + std::to_string(length) + " shorter than kernel " +
                          std::to_string(kernel));
    return (length - kernel) / stride + 1;
}

/// Parameters of a feed-forward network (the discriminator's Phi). All weights
/// and biases live in one contiguous vector so optimisers and meta-updates can
/// treat the network as a flat parameter vector.
class AnnParams {
public:
    AnnParams() = default;

    std::size_t input_rows() const { return input_rows_; }
    std::size_t input_cols() const { return input_cols_; }
    const std::vector<LayerSpec>& layers() const { return layers_; }
    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    std::size_t size() const { return values_.size(); }

    std::span<double> weights(std::size_t l) {
        return {values_.data() + layers_[l].weight_offset, layers_[l].weight_count};
    }
    std::span<const double> weights(std::size_t l) const {
        return {values_.data() + layers_[l].weight_offset, layers_[l].weight_count};
    }
    std::span<double> bias(std::size_t l) {
        return {values_.data() + layers_[l].bias_offset, layers_[l].bias_count};
    }
    std::span<const double> bias(std::size_t l) const {
        return {values_.data() + layers_[l].bias_offset, layers_[l].bias_count};
    }

    /// Same architecture, all parameters zero. Used as a gradient accumulator.
    AnnParams zeros_like() const {
        AnnParams z = *this;
        std::fill(z.values_.begin(), z.values_.end(), 0.0);
        return z;
    }

    bool same_shape(const AnnParams& other) const {
        return input_rows_ == other.input_rows_ && input_cols_ == other.input_cols_ &&
               layers_ == other.layers_;
    }

    /// Output shape of the final layer.
    std::pair<std::size_t, std::size_t> output_shape() const { return {out_rows_, out_cols_}; }

    friend bool operator==(const AnnParams&, const AnnParams&) = default;

private:
    friend class NetworkBuilder;
    std::size_t input_rows_ = 0;
    std::size_t input_cols_ = 0;
    std::size_t out_rows_ = 0;
    std::size_t out_cols_ = 0;
    std::vector<LayerSpec> layers_;
    std::vector<double> values_;
};

/// Builds an AnnParams while tracking the running activation shape. Parameters
/// start at zero; call glorot_init() to randomise.
class NetworkBuilder {
public:
    NetworkBuilder(std::size_t input_rows, std::size_t input_cols)
        : rows_(input_rows), cols_(input_cols) {
        net_.input_rows_ = input_rows;
        net_.input_cols_ = input_cols;
    }

    NetworkBuilder& dense(std::size_t out, Activation act) {
        if (cols_ != 1)
            throw ConfigError("dense layer needs a column input; insert flatten after conv layers");
        LayerSpec l;
        l.kind = LayerKind::dense;
        l.in = rows_;
        l.out = out;
        l.activation = act;
        push(l, out * rows_, out);
        rows_ = out;
        return *this;
    }

    NetworkBuilder& conv1d(std::size_t out_channels, std::size_t kernel, std::size_t stride, Activation act) {
        LayerSpec l;
        l.kind = LayerKind::conv1d;
        l.in = rows_;
        l.out = out_channels;
        l.kernel = kernel;
        l.stride = stride;
        l.in_length = cols_;
        l.out_length = conv_output_length(cols_, kernel, stride);
        l.activation = act;
        push(l, out_channels * rows_ * kernel, out_channels);
        rows_ = out_channels;
        cols_ = l.out_length;
        return *this;
    }

    NetworkBuilder& flatten() {
        LayerSpec l;
        l.kind = LayerKind::flatten;
        l.in = rows_;
        l.in_length = cols_;
        l.out = rows_ * cols_;
        push(l, 0, 0);
        rows_ = rows_ * cols_;
        cols_ = 1;
        return *this;
    }

    AnnParams build() const {
        AnnParams n = net_;
        n.out_rows_ = rows_;
        n.out_cols_ = cols_;
        return n;
    }

private:
    void push(LayerSpec l, std::size_t n_weights, std::size_t n_bias) {
        l.weight_offset = net_.values_.size();
        l.weight_count = n_weights;
        l.bias_offset = l.weight_offset + n_weights;
        l.bias_count = n_bias;
        net_.values_.resize(net_.values_.size() + n_weights + n_bias, 0.0);
        net_.layers_.push_back(l);
    }

    std::size_t rows_;
    std::size_t cols_;
    AnnParams net_;
};

/// Weights ~ U(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))), biases zero.
inline void glorot_init(AnnParams& net, Rng& rng) {
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
        const auto& spec = net.layers()[l];
        if (spec.kind == LayerKind::flatten) continue;
        const double k = spec.kind == LayerKind::conv1d ? static_cast<double>(spec.kernel) : 1.0;
        const double fan_in = static_cast<double>(spec.in) * k;
        const double fan_out = static_cast<double>(spec.out) * k;
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        for (double& w : net.weights(l)) w = (2.0 * uniform01(rng) - 1.0) * limit;
        for (double& b : net.bias(l)) b = 0.0;
    }
}

/// Cached inputs and pre-activations of one forward pass. A tape may feed
/// exactly one backward pass.
class GradientTape {
public:
    bool consumed() const { return consumed_; }

private:
    friend std::pair<Matrix, GradientTape> forward(const AnnParams&, const Matrix&);
    friend AnnParams backward(const AnnParams&, GradientTape&, const Matrix&, Matrix*);
    std::vector<Matrix> inputs_;
    std::vector<Matrix> pre_;
    std::vector<Matrix> post_;
    std::size_t param_count_ = 0;
    bool consumed_ = false;
};

namespace detail {

inline Matrix dense_forward(const LayerSpec& l, std::span<const double> w, std::span<const double> b,
                            const Matrix& x) {
    Matrix z(l.out, 1);
    const double* xin = x.values().data();
    for (std::size_t o = 0; o < l.out; ++o) {
        const double* row = w.data() + o * l.in;
        double acc = b[o];
        for (std::size_t i = 0; i < l.in; ++i) acc += row[i] * xin[i];
        z[o] = acc;
    }
    return z;
}

inline Matrix conv_forward(const LayerSpec& l, std::span<const double> w, std::span<const double> b,
                           const Matrix& x) {
    Matrix z(l.out, l.out_length);
    for (std::size_t o = 0; o < l.out; ++o) {
        for (std::size_t p = 0; p < l.out_length; ++p) {
            double acc = b[o];
            const std::size_t start = p * l.stride;
            for (std::size_t c = 0; c < l.in; ++c) {
                const double* wk = w.data() + (o * l.in + c) * l.kernel;
                const double* xs = x.values().data() + c * l.in_length + start;
                for (std::size_t k = 0; k < l.kernel; ++k) acc += wk[k] * xs[k];
            }
            z(o, p) = acc;
        }
    }
    return z;
}

}  // namespace detail

/// Runs the network on one input. Throws ConfigError on a shape mismatch.
inline std::pair<Matrix, GradientTape> forward(const AnnParams& net, const Matrix& input) {
    if (input.rows() != net.input_rows() || input.cols() != net.input_cols())
        throw ConfigError("forward: input " + std::to_string(input.rows()) + "x" + std::to_string(input.cols()) +
                          " does not match network input " + std::to_string(net.input_rows()) + "x" +
                          std::to_string(net.input_cols()));
    GradientTape tape;
    tape.param_count_ = net.size();
    Matrix x = input;
    for (std::size_t li = 0; li < net.layers().size(); ++li) {
        const auto& l = net.layers()[li];
        tape.inputs_.push_back(x);
        Matrix z;
        switch (l.kind) {
            case LayerKind::dense: z = detail::dense_forward(l, net.weights(li), net.bias(li), x); break;
            case LayerKind::conv1d: z = detail::conv_forward(l, net.weights(li), net.bias(li), x); break;
            case LayerKind::flatten: z = x.reshaped(x.size(), 1); break;
        }
        Matrix a = z;
        if (l.kind != LayerKind::flatten)
            for (double& v : a.values()) v = l.activation.apply(v);
        tape.pre_.push_back(std::move(z));
        tape.post_.push_back(a);
        x = std::move(a);
    }
    return {std::move(x), std::move(tape)};
}

/// Backpropagates output_grad (dL/d output) through the cached pass and returns
/// dL/d params in the same layout as `net`. If input_grad is non-null it also
/// receives dL/d input. The tape is consumed.
inline AnnParams backward(const AnnParams& net, GradientTape& tape, const Matrix& output_grad,
                          Matrix* input_grad = nullptr) {
    if (tape.consumed_) throw UsageError("backward: gradient tape already consumed");
    if (tape.param_count_ != net.size() || tape.inputs_.size() != net.layers().size())
        throw UsageError("backward: tape was produced by a different network");
    tape.consumed_ = true;

    AnnParams grads = net.zeros_like();
    Matrix delta = output_grad;  // dL/d activation of current layer
    if (delta.size() != tape.post_.back().size()) throw UsageError("backward: output_grad shape mismatch");

    for (std::size_t li = net.layers().size(); li-- > 0;) {
        const auto& l = net.layers()[li];
        const Matrix& x = tape.inputs_[li];
        if (l.kind == LayerKind::flatten) {
            delta = delta.reshaped(x.rows(), x.cols());
            continue;
        }
        const Matrix& z = tape.pre_[li];
        const Matrix& a = tape.post_[li];
        for (std::size_t i = 0; i < delta.size(); ++i) delta[i] *= l.activation.derivative(z[i], a[i]);

        auto w = net.weights(li);
        auto gw = grads.weights(li);
        auto gb = grads.bias(li);
        Matrix dx(x.rows(), x.cols());
        if (l.kind == LayerKind::dense) {
            for (std::size_t o = 0; o < l.out; ++o) {
                const double d = delta[o];
                gb[o] += d;
                if (d == 0.0) continue;
                double* grow = gw.data() + o * l.in;
                const double* wrow = w.data() + o * l.in;
                for (std::size_t i = 0; i < l.in; ++i) {
                    grow[i] += d * x[i];
                    dx[i] += d * wrow[i];
                }
            }
        } else {
            for (std::size_t o = 0; o < l.out; ++o) {
                for (std::size_t p = 0; p < l.out_length; ++p) {
                    const double d = delta(o, p);
                    gb[o] += d;
                    if (d == 0.0) continue;
                    const std::size_t start = p * l.stride;
                    for (std::size_t c = 0; c < l.in; ++c) {
                        const std::size_t base = (o * l.in + c) * l.kernel;
                        for (std::size_t k = 0; k < l.kernel; ++k) {
                            gw[base + k] += d * x(c, start + k);
                            dx(c, start + k) += d * w[base + k];
                        }
                    }
                }
            }
        }
        delta = std::move(dx);
    }
    if (input_grad) *input_grad = std::move(delta);
    return grads;
}

/// Scalar network output (discriminators, 1-output heads).
inline double forward_scalar(const AnnParams& net, const Matrix& input) {
    return forward(net, input).first[0];
}

// ---------------------------------------------------------------------------
// Adversarial losses

enum class GenLoss { saturating, non_saturating };

inline constexpr double kProbEps = 1e-7;

inline double clamp_prob(double p) {
    return std::min(std::max(p, kProbEps), 1.0 - kProbEps);
}

struct GanLosses {
    double disc;
    double gen;
};

/// disc = -[log D(real) + log(1 - D(synth))];
/// gen  = log(1 - D(synth)) (saturating) or -log D(synth) (non-saturating).
inline GanLosses gan_losses(double d_real, double d_synth, GenLoss mode) {
    const double r = clamp_prob(d_real);
    const double s = clamp_prob(d_synth);
    const double disc = -(std::log(r) + std::log(1.0 - s));
    const double gen = mode == GenLoss::saturating ? std::log(1.0 - s) : -std::log(s);
    return {disc, gen};
}

/// Generator reward psi_2(D) for one synthetic sample; the generator descends
/// on E[reward].
inline double generator_reward(double d_synth, GenLoss mode) {
    return gan_losses(0.5, d_synth, mode).gen;
}

/// dL/dD for the discriminator loss terms, consistent with the clamped loss.
inline double disc_loss_grad_real(double d_real) { return -1.0 / std::max(d_real, kProbEps); }
inline double disc_loss_grad_synth(double d_synth) { return 1.0 / std::max(1.0 - d_synth, kProbEps); }

// ---------------------------------------------------------------------------
// Optimiser

enum class Direction { descent, ascent };

/// params -= lr * grads (descent) or params += lr * grads (ascent). A non-finite
/// gradient aborts the step with NumericError and leaves params untouched.
inline void sgd_step(std::span<double> params, std::span<const double> grads, double lr,
                     Direction dir = Direction::descent) {
    if (params.size() != grads.size())
        throw UsageError("sgd_step: " + std::to_string(params.size()) + " params vs " +
                         std::to_string(grads.size()) + " gradients");
    for (std::size_t i = 0; i < grads.size(); ++i)
        if (!std::isfinite(grads[i]))
            throw NumericError("sgd_step: non-finite gradient " + std::to_string(grads[i]) + " at index " +
                               std::to_string(i) + " of " + std::to_string(grads.size()));
    const double scale = dir == Direction::descent ? -lr : lr;
    for (std::size_t i = 0; i < grads.size(); ++i) params[i] += scale * grads[i];
}

inline void sgd_step(AnnParams& net, const AnnParams& grads, double lr, Direction dir = Direction::descent) {
    if (!net.same_shape(grads)) throw UsageError("sgd_step: gradient architecture mismatch");
    sgd_step(net.values(), grads.values(), lr, dir);
}

// ---------------------------------------------------------------------------
// Classification helpers

/// Softmax cross-entropy on a logit column. Returns the loss and writes
/// dL/dlogits into grad.
inline double softmax_cross_entropy(const Matrix& logits, std::size_t label, Matrix& grad) {
    const std::size_t n = logits.size();
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, logits[i]);
    double sum = 0.0;
    grad = Matrix(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < n; ++i) {
        grad[i] = std::exp(logits[i] - mx);
        sum += grad[i];
    }
    for (std::size_t i = 0; i < n; ++i) grad[i] /= sum;
    const double loss = -std::log(std::max(grad[label], 1e-300));
    grad[label] -= 1.0;
    return loss;
}

inline std::size_t argmax(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

}  // namespace spikegan::nn
