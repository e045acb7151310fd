#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "ldn/error.hpp"
#include "ldn/tensor.hpp"

namespace ldn {

struct SeparationReport {
    double r = 0.0;  // half the minimum inter-class l_inf distance
    std::size_t first = 0;
    std::size_t second = 0;
    std::uint64_t pairs_examined = 0;
    std::size_t samples_examined = 0;
};

/// r = 1/2 min_{y_i != y_j} ||x_i - x_j||_inf over the first `limit` rows (all when 0).
/// Each pair scan stops as soon as one coordinate gap reaches the running minimum.
template <typename T>
SeparationReport r_separation(const Tensor<T>& samples, std::span<const std::uint32_t> labels, std::size_t limit = 0) {
    if (samples.rows() != labels.size()) throw ShapeError("r_separation: sample/label count mismatch");
    const std::size_t n = limit == 0 ? labels.size() : std::min(limit, labels.size());
    bool two_classes = false;
    for (std::size_t i = 1; i < n && !two_classes; ++i) two_classes = labels[i] != labels[0];
    if (!two_classes) throw InvalidArgument("r_separation: need samples from at least two classes");

    const std::size_t d = samples.cols();
    SeparationReport rep;
    rep.samples_examined = n;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        const T* a = samples.row(i).data();
        for (std::size_t j = i + 1; j < n; ++j) {
            if (labels[i] == labels[j]) continue;
            ++rep.pairs_examined;
            const T* b = samples.row(j).data();
            double m = 0.0;
            std::size_t k = 0;
            for (; k < d; ++k) {
                m = std::max(m, std::abs(static_cast<double>(a[k]) - static_cast<double>(b[k])));
                if (m >= best) break;
            }
            if (k == d && m < best) {
                best = m;
                rep.first = i;
                rep.second = j;
            }
        }
    }
    rep.r = best / 2.0;
    return rep;
}

template <typename T>
SeparationReport r_separation(const Tensor<T>& samples, const std::vector<std::uint32_t>& labels,
                              std::size_t limit = 0) {
    return r_separation(samples, std::span<const std::uint32_t>(labels), limit);
}

}  // namespace ldn
