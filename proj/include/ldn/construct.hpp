#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ldn/checkpoint.hpp"
#include "ldn/data.hpp"
#include "ldn/error.hpp"
#include "ldn/network.hpp"

namespace ldn {

/// max_i ||x_i||_inf; the constructions are valid on inputs in [0, this]^d.
inline double domain_bound(const LabeledDataset& data) {
    double m = 0.0;
    for (float v : data.samples.flat()) m = std::max(m, std::abs(static_cast<double>(v)));
    return m;
}

inline double two_layer_constant(const LabeledDataset& data) { return std::max(4.0 * domain_bound(data), 1.0); }

/// Activations of the multi-layer construction stay within [-2M, 2M].
inline double multi_layer_constant(const LabeledDataset& data) {
    const double m = domain_bound(data);
    return std::max(4.0 * (m + 2.0 * m), 1.0);
}

namespace detail {
inline void check_constructible(const LabeledDataset& data) {
    if (data.empty()) throw InvalidArgument("construct: empty dataset");
    if (data.classes == 0) throw InvalidArgument("construct: dataset declares no classes");
    std::vector<std::size_t> count(data.classes, 0);
    for (auto y : data.labels) {
        if (y >= data.classes) throw InvalidArgument("construct: label out of range");
        ++count[y];
    }
    std::string empty;
    for (std::size_t j = 0; j < data.classes; ++j)
        if (count[j] == 0) empty += (empty.empty() ? "" : ", ") + std::to_string(j);
    if (!empty.empty()) throw InvalidArgument("construct: classes with no samples: " + empty);
}
}  // namespace detail

/// Hidden neuron i sits at training point x_i; output j is
/// -min_{i: y_i = j} ||x - x_i||_inf on the data domain.
template <typename T = float>
DistanceNet<T> build_two_layer(const LabeledDataset& data) {
    detail::check_constructible(data);
    const std::size_t n = data.size(), d = data.dim(), k = data.classes;
    const T c = static_cast<T>(two_layer_constant(data));
    DistanceNet<T> net;
    net.p = PExponent::infinity();
    LayerParams<T> hidden(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t q = 0; q < d; ++q) hidden.weights(i, q) = static_cast<T>(data.samples(i, q));
    LayerParams<T> out(k, n);
    for (std::size_t i = 0; i < n; ++i) out.weights(data.labels[i], i) = c;
    std::ranges::fill(out.bias, -c);
    net.layers.push_back(std::move(hidden));
    net.layers.push_back(std::move(out));
    return net;
}

/// Hidden width ceil(n / (L - 1)) + K + 2d of build_multi_layer.
inline std::size_t multi_layer_width(std::size_t n, std::size_t classes, std::size_t d, std::size_t layers) {
    if (layers < 2) throw InvalidArgument("build_multi_layer: need at least 2 layers");
    return (n + layers - 2) / (layers - 1) + classes + 2 * d;
}

/// L-layer net with the same outputs as build_two_layer. Each hidden layer holds
/// I (x), I~ (-x), O (running per-class max of -distance) and S (distances to
/// one chunk of the training points), in that order.
template <typename T = float>
DistanceNet<T> build_multi_layer(const LabeledDataset& data, std::size_t layers) {
    detail::check_constructible(data);
    const std::size_t n = data.size(), d = data.dim(), k = data.classes;
    const std::size_t width = multi_layer_width(n, k, d, layers);
    if (width > kMaxLayerWidth)
        throw InvalidArgument("build_multi_layer: hidden width " + std::to_string(width) + " overflows the limit");
    const std::size_t chunk = width - k - 2 * d;
    const std::size_t o_at = 2 * d, s_at = 2 * d + k;
    const double m = domain_bound(data);
    const T c = static_cast<T>(multi_layer_constant(data));
    const std::size_t hidden_layers = layers - 1;
    auto chunk_begin = [&](std::size_t l) { return (n * l + hidden_layers - 1) / hidden_layers; };

    DistanceNet<T> net;
    net.p = PExponent::infinity();
    for (std::size_t l = 0; l < hidden_layers; ++l) {
        const std::size_t fan_in = l == 0 ? d : width;
        LayerParams<T> layer(width, fan_in);
        std::ranges::fill(layer.bias, -c);
        for (std::size_t q = 0; q < d; ++q) {
            if (l == 0) {
                layer.weights(q, q) = -c;
                layer.weights(d + q, q) = c;
            } else {
                layer.weights(q, q) = -c;
                layer.weights(d + q, d + q) = -c;
            }
        }
        for (std::size_t j = 0; j < k; ++j) {
            if (l == 0) {
                // no chunk seen yet: ||x||_inf - 2M stays below every -distance
                layer.bias[o_at + j] = static_cast<T>(-2.0 * m);
            } else {
                layer.weights(o_at + j, o_at + j) = -c;
            }
        }
        if (l > 0) {
            for (std::size_t i = chunk_begin(l - 1); i < chunk_begin(l); ++i)
                layer.weights(o_at + data.labels[i], s_at + i - chunk_begin(l - 1)) = c;
        }
        for (std::size_t s = 0; s < chunk; ++s) {
            const std::size_t i = chunk_begin(l) + s;
            const std::size_t row = s_at + s;
            layer.bias[row] = T(0);
            if (i >= chunk_begin(l + 1)) continue;
            for (std::size_t q = 0; q < d; ++q) {
                const T xq = static_cast<T>(data.samples(i, q));
                if (l == 0) {
                    layer.weights(row, q) = xq;
                } else {
                    layer.weights(row, q) = xq - c;
                    layer.weights(row, d + q) = -xq - c;
                }
            }
            if (l > 0) layer.bias[row] = -c;
        }
        net.layers.push_back(std::move(layer));
    }
    LayerParams<T> out(k, width);
    std::ranges::fill(out.bias, -c);
    for (std::size_t j = 0; j < k; ++j) out.weights(j, o_at + j) = -c;
    const std::size_t last = hidden_layers - 1;
    for (std::size_t i = chunk_begin(last); i < chunk_begin(last + 1); ++i)
        out.weights(data.labels[i], s_at + i - chunk_begin(last)) = c;
    net.layers.push_back(std::move(out));
    return net;
}

}  // namespace ldn
