#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ldn/core_math.hpp"
#include "ldn/error.hpp"
#include "ldn/simd.hpp"
#include "ldn/tensor.hpp"

namespace ldn {

enum class Mode { training, inference };

/// Parameters of one distance layer: neuron i computes ||x - weights.row(i)||_p + bias[i],
/// shifted by a batch or running mean on hidden layers.
template <typename T>
struct LayerParams {
    Tensor<T> weights;  // outputs x inputs
    std::vector<T> bias;
    std::vector<T> running_mean;

    LayerParams() = default;
    LayerParams(std::size_t outputs, std::size_t inputs)
        : weights(outputs, inputs), bias(outputs, T(0)), running_mean(outputs, T(0)) {}

    std::size_t inputs() const noexcept { return weights.cols(); }
    std::size_t outputs() const noexcept { return weights.rows(); }

    bool operator==(const LayerParams&) const = default;
};

/// A fully connected l_inf-distance net evaluated with an l_p relaxation.
template <typename T>
struct DistanceNet {
    std::vector<LayerParams<T>> layers;
    PExponent p = PExponent::infinity();
    double temperature = 1.0;  // only scales logits inside the cross-entropy loss
    Mode mode = Mode::inference;
    double momentum = 0.1;  // running-mean update rate

    std::size_t depth() const noexcept { return layers.size(); }
    std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().inputs(); }
    std::size_t class_count() const { return layers.empty() ? 0 : layers.back().outputs(); }

    /// (input_dim, n_1, ..., n_L)
    std::vector<std::size_t> dims() const {
        std::vector<std::size_t> d;
        if (layers.empty()) return d;
        d.push_back(input_dim());
        for (const auto& l : layers) d.push_back(l.outputs());
        return d;
    }

    /// Mean-shift normalisation is applied on hidden layers only.
    bool is_shifted(std::size_t layer) const noexcept { return layer + 1 < layers.size(); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.weights.size() + l.bias.size();
        return n;
    }

    /// Throws on broken invariants (dims, finiteness, temperature).
    void validate() const {
        if (layers.empty()) throw InvalidArgument("DistanceNet: no layers");
        if (!(temperature > 0.0) || !std::isfinite(temperature))
            throw InvalidArgument("DistanceNet: temperature must be positive and finite");
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const auto& layer = layers[l];
            if (layer.outputs() == 0 || layer.inputs() == 0)
                throw ShapeError("DistanceNet: layer " + std::to_string(l) + " has an empty dimension");
            if (l > 0 && layer.inputs() != layers[l - 1].outputs())
                throw ShapeError("DistanceNet: layer " + std::to_string(l) + " expects " +
                                 std::to_string(layer.inputs()) + " inputs but previous layer has " +
                                 std::to_string(layers[l - 1].outputs()) + " outputs");
            if (layer.bias.size() != layer.outputs() || layer.running_mean.size() != layer.outputs())
                throw ShapeError("DistanceNet: layer " + std::to_string(l) + " bias/running_mean size mismatch");
            auto finite = [](T v) { return std::isfinite(static_cast<double>(v)); };
            for (T v : layer.weights.flat())
                if (!finite(v)) throw NumericError("DistanceNet: non-finite weight in layer " + std::to_string(l));
            for (std::size_t i = 0; i < layer.outputs(); ++i)
                if (!finite(layer.bias[i]) || !finite(layer.running_mean[i]))
                    throw NumericError("DistanceNet: non-finite bias/running mean in layer " + std::to_string(l));
        }
    }

    template <typename U>
    DistanceNet<U> cast() const {
        DistanceNet<U> out;
        out.p = p;
        out.temperature = temperature;
        out.mode = mode;
        out.momentum = momentum;
        for (const auto& l : layers) {
            LayerParams<U> c;
            c.weights = l.weights.template cast<U>();
            c.bias.assign(l.bias.begin(), l.bias.end());
            c.running_mean.assign(l.running_mean.begin(), l.running_mean.end());
            out.layers.push_back(std::move(c));
        }
        return out;
    }

    /// Copy evaluated at p = inf in inference mode, the setting in which margins certify.
    DistanceNet certifiable() const {
        DistanceNet out = *this;
        out.p = PExponent::infinity();
        out.mode = Mode::inference;
        return out;
    }
};

/// Cached activations of one layer for the backward pass.
template <typename T>
struct LayerTrace {
    Tensor<T> input;                // batch x inputs
    Tensor<T> distance;             // batch x outputs, before the shift
    Tensor<T> output;               // batch x outputs, after shift and bias
    std::vector<double> batch_mean; // per neuron; empty unless shifted in training mode
    Tensor<double> scale;           // max_k |x_k - w_k| (finite p only)
    Tensor<double> power_sum;       // sum_k (|x_k - w_k| / scale)^p (finite p only)
};

template <typename T>
struct ForwardTrace {
    std::vector<LayerTrace<T>> layers;
    Tensor<T> logits;
    PExponent p;
    Mode mode = Mode::inference;
    const void* owner = nullptr;
};

template <typename T>
struct ForwardResult {
    Tensor<T> logits;
    std::optional<ForwardTrace<T>> trace;
};

template <typename T>
struct ParamGrads {
    std::vector<Tensor<T>> weights;
    std::vector<std::vector<T>> bias;
    double temperature = 0.0;  // filled in by the loss, not by backward()
    Tensor<T> input;           // d loss / d batch, only when requested
};

namespace detail {

inline void warn_input_range_once() {
    static std::atomic<bool> warned{false};
    if (!warned.exchange(true))
        std::cerr << "[ldn] warning: network input has entries outside [0, 1]\n";
}

template <typename T>
void check_input_range(const Tensor<T>& batch) {
    for (T v : batch.flat())
        if (!(v >= T(0) && v <= T(1))) {
            warn_input_range_once();
            return;
        }
}

/// Distances ||x_b - w_i||_p for every (b, i); fills scale/power_sum for finite p.
template <typename T>
void layer_distances(const LayerParams<T>& layer, const Tensor<T>& in, PExponent p, Tensor<T>& dist,
                     Tensor<double>* scale, Tensor<double>* power_sum) {
    const std::size_t batch = in.rows(), n_in = layer.inputs(), n_out = layer.outputs();
    dist = Tensor<T>(batch, n_out);
    if (scale) *scale = Tensor<double>(batch, n_out);
    if (power_sum) *power_sum = Tensor<double>(batch, n_out);
    for (std::size_t b = 0; b < batch; ++b) {
        const T* x = in.row(b).data();
        for (std::size_t i = 0; i < n_out; ++i) {
            const T* w = layer.weights.row(i).data();
            const T m = max_abs_diff(x, w, n_in);
            double d = static_cast<double>(m);
            if (p.is_finite() && m > T(0)) {
                const double inv = static_cast<double>(T(1) / m);
                const double s = pow_ratio_sum(x, w, n_in, inv, p.value());
                d = static_cast<double>(m) * std::pow(s, 1.0 / p.value());
                if (scale) (*scale)(b, i) = static_cast<double>(m);
                if (power_sum) (*power_sum)(b, i) = s;
            }
            dist(b, i) = static_cast<T>(d);
        }
    }
}

}  // namespace detail

/// Forward pass. In training mode hidden layers subtract the batch mean (and update
/// running means); in inference mode they subtract the running mean.
template <typename T>
ForwardResult<T> forward(DistanceNet<T>& net, const Tensor<T>& batch, bool keep_trace = false) {
    if (net.layers.empty()) throw InvalidArgument("forward: network has no layers");
    if (batch.cols() != net.input_dim())
        throw ShapeError("forward: batch has " + std::to_string(batch.cols()) + " columns, network expects " +
                         std::to_string(net.input_dim()));
    if (net.mode == Mode::training && batch.rows() < 2)
        throw InvalidArgument(
            "forward: mean-shift normalisation needs a batch of at least 2 in training mode; "
            "switch the network to inference mode to evaluate single samples");
    detail::check_input_range(batch);

    ForwardResult<T> result;
    ForwardTrace<T> trace;
    trace.p = net.p;
    trace.mode = net.mode;
    trace.owner = &net;
    const bool finite = net.p.is_finite();

    Tensor<T> current = batch;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        auto& layer = net.layers[l];
        LayerTrace<T> lt;
        Tensor<T> dist;
        detail::layer_distances(layer, current, net.p, dist, keep_trace && finite ? &lt.scale : nullptr,
                                keep_trace && finite ? &lt.power_sum : nullptr);
        const std::size_t rows = current.rows(), n_out = layer.outputs();
        Tensor<T> out(rows, n_out);
        std::vector<double> shift(n_out, 0.0);
        if (net.is_shifted(l)) {
            if (net.mode == Mode::training) {
                for (std::size_t i = 0; i < n_out; ++i) {
                    double mu = 0.0;
                    for (std::size_t b = 0; b < rows; ++b) mu += static_cast<double>(dist(b, i));
                    shift[i] = mu / static_cast<double>(rows);
                    layer.running_mean[i] = static_cast<T>((1.0 - net.momentum) * static_cast<double>(layer.running_mean[i]) +
                                                           net.momentum * shift[i]);
                }
                if (keep_trace) lt.batch_mean = shift;
            } else {
                for (std::size_t i = 0; i < n_out; ++i) shift[i] = static_cast<double>(layer.running_mean[i]);
            }
        }
        for (std::size_t b = 0; b < rows; ++b)
            for (std::size_t i = 0; i < n_out; ++i)
                out(b, i) = static_cast<T>(static_cast<double>(dist(b, i)) - shift[i] + static_cast<double>(layer.bias[i]));
        if (keep_trace) {
            lt.input = std::move(current);
            lt.distance = std::move(dist);
            lt.output = out;
            trace.layers.push_back(std::move(lt));
        }
        current = std::move(out);
    }
    result.logits = std::move(current);
    if (keep_trace) {
        trace.logits = result.logits;
        result.trace = std::move(trace);
    }
    return result;
}

/// Inference-mode logits of a const network; never touches running means.
template <typename T>
Tensor<T> infer(const DistanceNet<T>& net, const Tensor<T>& batch) {
    DistanceNet<T>& shared = const_cast<DistanceNet<T>&>(net);
    if (net.mode == Mode::inference) return forward(shared, batch, false).logits;
    DistanceNet<T> copy = net;
    copy.mode = Mode::inference;
    return forward(copy, batch, false).logits;
}

/// Reverse pass of forward(). Mean-shift layers in training mode backpropagate
/// through the batch mean (gradient minus its batch mean).
template <typename T>
ParamGrads<T> backward(const DistanceNet<T>& net, const ForwardTrace<T>& trace, const Tensor<T>& logits_grad,
                       bool want_input_grad = false) {
    if (trace.layers.empty() || trace.owner == nullptr)
        throw InvalidArgument("backward: missing trace (call forward with keep_trace = true)");
    if (trace.owner != &net || trace.layers.size() != net.layers.size() || !(trace.p == net.p) ||
        trace.mode != net.mode)
        throw InvalidArgument("backward: stale trace (network changed since the forward pass)");
    if (logits_grad.rows() != trace.logits.rows() || logits_grad.cols() != trace.logits.cols())
        throw ShapeError("backward: logits_grad shape does not match logits");

    const std::size_t depth = net.layers.size();
    ParamGrads<T> grads;
    grads.weights.resize(depth);
    grads.bias.resize(depth);
    const bool finite = net.p.is_finite();
    const double p = net.p.value();

    Tensor<T> gout = logits_grad;
    for (std::size_t l = depth; l-- > 0;) {
        const auto& layer = net.layers[l];
        const auto& lt = trace.layers[l];
        const std::size_t rows = gout.rows(), n_in = layer.inputs(), n_out = layer.outputs();
        auto& gw = grads.weights[l];
        gw = Tensor<T>(n_out, n_in);
        auto& gb = grads.bias[l];
        gb.assign(n_out, T(0));

        std::vector<double> gmean(n_out, 0.0);
        for (std::size_t i = 0; i < n_out; ++i) {
            double s = 0.0;
            for (std::size_t b = 0; b < rows; ++b) s += static_cast<double>(gout(b, i));
            gb[i] = static_cast<T>(s);
            if (net.is_shifted(l) && net.mode == Mode::training) gmean[i] = s / static_cast<double>(rows);
        }

        const bool need_gx = l > 0 || want_input_grad;
        Tensor<T> gin(need_gx ? rows : 0, need_gx ? n_in : 0);
        for (std::size_t b = 0; b < rows; ++b) {
            const T* x = lt.input.row(b).data();
            T* gx = need_gx ? gin.row(b).data() : nullptr;
            for (std::size_t i = 0; i < n_out; ++i) {
                const double g = static_cast<double>(gout(b, i)) - gmean[i];
                if (g == 0.0) continue;
                const T* w = layer.weights.row(i).data();
                T* gwi = gw.row(i).data();
                if (!finite) {
                    const std::size_t k = detail::argmax_abs_diff(x, w, n_in);
                    const T v = x[k] - w[k];
                    if (v == T(0)) continue;
                    const T signed_g = static_cast<T>(v > T(0) ? g : -g);
                    if (gx) gx[k] += signed_g;
                    gwi[k] -= signed_g;
                } else {
                    const double m = lt.scale(b, i);
                    if (m == 0.0) continue;
                    const double coef = g * std::pow(lt.power_sum(b, i), (1.0 - p) / p);
                    const double inv = static_cast<double>(T(1) / static_cast<T>(m));
                    detail::pow_ratio_grad(x, w, n_in, inv, p, coef, gx, gwi);
                }
            }
        }
        gout = std::move(gin);
    }
    if (want_input_grad) grads.input = std::move(gout);
    return grads;
}

/// Identity-style initialisation: neuron i of each layer copies input coordinate
/// (i mod fan_in) through a -1 weight, then N(0, noise_std) noise on every weight.
template <typename T = float>
DistanceNet<T> init_identity(const std::vector<std::size_t>& dims, std::uint64_t seed, double noise_std = 0.05,
                             PExponent p = PExponent(8.0)) {
    if (dims.size() < 2) throw InvalidArgument("init_identity: need at least input and output dims");
    for (std::size_t d : dims)
        if (d == 0) throw InvalidArgument("init_identity: zero-width layer");
    if (!(noise_std >= 0.0)) throw InvalidArgument("init_identity: noise_std must be >= 0");
    DistanceNet<T> net;
    net.p = p;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, noise_std > 0.0 ? noise_std : 1.0);
    for (std::size_t l = 1; l < dims.size(); ++l) {
        LayerParams<T> layer(dims[l], dims[l - 1]);
        for (std::size_t i = 0; i < dims[l]; ++i) {
            layer.weights(i, i % dims[l - 1]) = T(-1);
            if (noise_std > 0.0)
                for (std::size_t k = 0; k < dims[l - 1]; ++k)
                    layer.weights(i, k) += static_cast<T>(noise_std > 0.0 ? noise(rng) : 0.0);
        }
        net.layers.push_back(std::move(layer));
    }
    return net;
}

/// prod_l fan_in(l)^(1/p): the l_inf Lipschitz bound of an l_p-distance net; 1 at p = inf.
template <typename T>
double lipschitz_upper_bound(const DistanceNet<T>& net) {
    if (net.p.is_infinite()) return 1.0;
    double log_bound = 0.0;
    for (const auto& layer : net.layers) log_bound += std::log(static_cast<double>(layer.inputs()));
    return std::exp(log_bound / net.p.value());
}

/// Closed-form bound for a net with the given dims without materialising it.
inline double lipschitz_upper_bound(const std::vector<std::size_t>& dims, PExponent p) {
    if (p.is_infinite()) return 1.0;
    double log_bound = 0.0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) log_bound += std::log(static_cast<double>(dims[l]));
    return std::exp(log_bound / p.value());
}

/// Views over trainable tensors in a fixed order: W_1, b_1, ..., W_L, b_L.
template <typename T>
std::vector<std::span<T>> parameter_views(DistanceNet<T>& net) {
    std::vector<std::span<T>> views;
    for (auto& l : net.layers) {
        views.push_back(l.weights.flat());
        views.emplace_back(l.bias);
    }
    return views;
}

template <typename T>
std::vector<std::span<const T>> gradient_views(const ParamGrads<T>& g) {
    std::vector<std::span<const T>> views;
    for (std::size_t l = 0; l < g.weights.size(); ++l) {
        views.push_back(g.weights[l].flat());
        views.emplace_back(g.bias[l]);
    }
    return views;
}

}  // namespace ldn
