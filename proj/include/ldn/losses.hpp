#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ldn/core_math.hpp"
#include "ldn/error.hpp"
#include "ldn/tensor.hpp"

namespace ldn {

enum class LossKind {
    hinge,                      // max(theta - margin, 0)
    scaled_ce,                  // CE(s * z, y)
    ce_threshold,               // CE(s * (z - theta e_y), y)
    composite_fixed_lambda,     // lambda * CE(s * z, y) + clipped hinge
    composite_decaying_lambda,  // same, lambda taken from the schedule
};

inline std::string to_string(LossKind k) {
    switch (k) {
        case LossKind::hinge: return "hinge";
        case LossKind::scaled_ce: return "scaled_ce";
        case LossKind::ce_threshold: return "ce_threshold";
        case LossKind::composite_fixed_lambda: return "composite_fixed_lambda";
        case LossKind::composite_decaying_lambda: return "composite_decaying_lambda";
    }
    return "?";
}

inline LossKind parse_loss_kind(const std::string& s) {
    if (s == "hinge") return LossKind::hinge;
    if (s == "scaled_ce") return LossKind::scaled_ce;
    if (s == "ce_threshold") return LossKind::ce_threshold;
    if (s == "composite_fixed_lambda") return LossKind::composite_fixed_lambda;
    if (s == "composite_decaying_lambda" || s == "composite") return LossKind::composite_decaying_lambda;
    throw InvalidArgument("unknown loss kind '" + s + "'");
}

struct LossSpec {
    LossKind kind = LossKind::composite_decaying_lambda;
    double theta = 1.0;
    double lambda = 0.0;  // used by composite_fixed_lambda

    void validate() const {
        if (!(theta > 0.0) || !std::isfinite(theta)) throw InvalidArgument("LossSpec: theta must be positive");
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidArgument("LossSpec: lambda must be >= 0");
    }
    bool uses_temperature() const noexcept { return kind != LossKind::hinge; }
};

struct LossValue {
    double loss = 0.0;
    std::vector<double> grad_logits;
    double grad_s = 0.0;
};

namespace detail {

template <typename T>
void check_label(std::span<const T> logits, std::size_t y) {
    if (logits.size() < 2) throw InvalidArgument("loss: need at least two logits");
    if (y >= logits.size())
        throw InvalidArgument("loss: label " + std::to_string(y) + " out of range for " +
                              std::to_string(logits.size()) + " classes");
}

/// Index of max_{j != y} logits[j], lowest index on ties.
template <typename T>
std::size_t runner_up(std::span<const T> logits, std::size_t y) {
    std::size_t best = y == 0 ? 1 : 0;
    for (std::size_t j = best + 1; j < logits.size(); ++j)
        if (j != y && logits[j] > logits[best]) best = j;
    return best;
}

}  // namespace detail

/// logits[y] - max_{j != y} logits[j]
template <typename T>
double margin(std::span<const T> logits, std::size_t y) {
    detail::check_label(logits, y);
    return static_cast<double>(logits[y]) - static_cast<double>(logits[detail::runner_up(logits, y)]);
}

template <typename T>
double margin(const std::vector<T>& logits, std::size_t y) {
    return margin(std::span<const T>(logits), y);
}

/// max(theta - margin, 0)
template <typename T>
LossValue hinge_loss(std::span<const T> logits, std::size_t y, double theta) {
    detail::check_label(logits, y);
    if (!(theta > 0.0)) throw InvalidArgument("hinge_loss: theta must be positive");
    LossValue out;
    out.grad_logits.assign(logits.size(), 0.0);
    const std::size_t j = detail::runner_up(logits, y);
    const double m = static_cast<double>(logits[y]) - static_cast<double>(logits[j]);
    if (m < theta) {
        out.loss = theta - m;
        out.grad_logits[y] = -1.0;
        out.grad_logits[j] = 1.0;
    }
    return out;
}

/// min(max(1 - margin / theta, 0), 1). Gradient vanishes on both plateaus and at the kinks.
template <typename T>
LossValue clipped_hinge(std::span<const T> logits, std::size_t y, double theta) {
    detail::check_label(logits, y);
    if (!(theta > 0.0)) throw InvalidArgument("clipped_hinge: theta must be positive");
    LossValue out;
    out.grad_logits.assign(logits.size(), 0.0);
    const std::size_t j = detail::runner_up(logits, y);
    const double m = static_cast<double>(logits[y]) - static_cast<double>(logits[j]);
    out.loss = std::min(std::max(1.0 - m / theta, 0.0), 1.0);
    if (m > 0.0 && m < theta) {
        out.grad_logits[y] = -1.0 / theta;
        out.grad_logits[j] = 1.0 / theta;
    }
    return out;
}

/// log sum exp(s z) - s z_y with gradients for z and s.
template <typename T>
LossValue scaled_ce(std::span<const T> logits, std::size_t y, double s) {
    detail::check_label(logits, y);
    if (!(s > 0.0)) throw InvalidArgument("scaled_ce: temperature must be positive");
    const std::size_t k = logits.size();
    std::vector<double> sz(k);
    for (std::size_t i = 0; i < k; ++i) sz[i] = s * static_cast<double>(logits[i]);
    const double lse = log_sum_exp(std::span<const double>(sz));
    LossValue out;
    out.loss = lse - sz[y];
    out.grad_logits.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
        const double delta = std::exp(sz[i] - lse) - (i == y ? 1.0 : 0.0);
        out.grad_logits[i] = s * delta;
        out.grad_s += delta * static_cast<double>(logits[i]);
    }
    return out;
}

/// scaled_ce with logits[y] lowered by theta.
template <typename T>
LossValue ce_threshold(std::span<const T> logits, std::size_t y, double s, double theta) {
    detail::check_label(logits, y);
    if (!(theta >= 0.0)) throw InvalidArgument("ce_threshold: theta must be >= 0");
    std::vector<double> shifted(logits.begin(), logits.end());
    shifted[y] -= theta;
    return scaled_ce(std::span<const double>(shifted), y, s);
}

/// lambda * scaled_ce + clipped_hinge
template <typename T>
LossValue composite_loss(std::span<const T> logits, std::size_t y, double theta, double lambda, double s) {
    if (!(lambda >= 0.0)) throw InvalidArgument("composite_loss: lambda must be >= 0");
    LossValue out = clipped_hinge(logits, y, theta);
    if (lambda > 0.0) {
        const LossValue ce = scaled_ce(logits, y, s);
        out.loss += lambda * ce.loss;
        for (std::size_t i = 0; i < out.grad_logits.size(); ++i) out.grad_logits[i] += lambda * ce.grad_logits[i];
        out.grad_s = lambda * ce.grad_s;
    }
    return out;
}

/// The loss selected by `spec`; `lambda` overrides spec.lambda for the decaying kind.
template <typename T>
LossValue evaluate_loss(const LossSpec& spec, std::span<const T> logits, std::size_t y, double s, double lambda) {
    switch (spec.kind) {
        case LossKind::hinge: return hinge_loss(logits, y, spec.theta);
        case LossKind::scaled_ce: return scaled_ce(logits, y, s);
        case LossKind::ce_threshold: return ce_threshold(logits, y, s, spec.theta);
        case LossKind::composite_fixed_lambda: return composite_loss(logits, y, spec.theta, spec.lambda, s);
        case LossKind::composite_decaying_lambda: return composite_loss(logits, y, spec.theta, lambda, s);
    }
    throw InvalidArgument("evaluate_loss: unknown loss kind");
}

template <typename T>
struct BatchLoss {
    double loss = 0.0;         // mean over the batch
    Tensor<T> grad_logits;     // d mean-loss / d logits
    double grad_s = 0.0;
    std::size_t correct = 0;   // argmax == label (margin > 0)
};

template <typename T>
BatchLoss<T> batch_loss(const LossSpec& spec, const Tensor<T>& logits, std::span<const std::uint32_t> labels, double s,
                        double lambda) {
    if (logits.rows() != labels.size()) throw ShapeError("batch_loss: logits/labels row mismatch");
    if (labels.empty()) throw InvalidArgument("batch_loss: empty batch");
    BatchLoss<T> out;
    out.grad_logits = Tensor<T>(logits.rows(), logits.cols());
    const double inv_n = 1.0 / static_cast<double>(labels.size());
    for (std::size_t b = 0; b < labels.size(); ++b) {
        auto row = std::span<const T>(logits.row(b));
        const LossValue v = evaluate_loss(spec, row, labels[b], s, lambda);
        out.loss += v.loss * inv_n;
        out.grad_s += v.grad_s * inv_n;
        for (std::size_t k = 0; k < v.grad_logits.size(); ++k)
            out.grad_logits(b, k) = static_cast<T>(v.grad_logits[k] * inv_n);
        if (margin(row, labels[b]) > 0.0) ++out.correct;
    }
    return out;
}

}  // namespace ldn
