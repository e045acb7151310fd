#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ldn/error.hpp"
#include "ldn/simd.hpp"

namespace ldn {

/// Exponent of an l_p distance: a real p >= 1, or +infinity.
class PExponent {
public:
    constexpr PExponent() = default;
    /// Throws InvalidArgument for p < 1 or NaN. +inf is accepted.
    explicit PExponent(double p) : value_(p) {
        if (!(p >= 1.0)) throw InvalidArgument("p-exponent must be >= 1, got " + std::to_string(p));
    }
    static constexpr PExponent infinity() {
        PExponent e;
        e.value_ = std::numeric_limits<double>::infinity();
        return e;
    }

    constexpr double value() const noexcept { return value_; }
    constexpr bool is_infinite() const noexcept { return value_ == std::numeric_limits<double>::infinity(); }
    constexpr bool is_finite() const noexcept { return !is_infinite(); }

    constexpr bool operator==(const PExponent&) const = default;

private:
    double value_ = std::numeric_limits<double>::infinity();
};

/// "inf" for the infinite exponent, shortest round-trip decimal otherwise.
inline std::string to_string(PExponent p) {
    if (p.is_infinite()) return "inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", p.value());
    return buf;
}

namespace detail {
template <typename T>
void check_same_length(std::span<const T> x, std::span<const T> w, const char* op) {
    if (x.size() != w.size())
        throw ShapeError(std::string(op) + ": length mismatch (" + std::to_string(x.size()) + " vs " +
                         std::to_string(w.size()) + ")");
    if (x.empty()) throw ShapeError(std::string(op) + ": empty input");
}
}  // namespace detail

/// ||x - w||_p, evaluated in max-factored form m * (sum_k (|x_k - w_k|/m)^p)^(1/p).
/// Always accumulates in double; finite for any p and |entries| well beyond 1e6.
template <typename T>
double lp_distance(std::span<const T> x, std::span<const T> w, PExponent p) {
    detail::check_same_length(x, w, "lp_distance");
    double m = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k)
        m = std::max(m, std::abs(static_cast<double>(x[k]) - static_cast<double>(w[k])));
    if (p.is_infinite() || m == 0.0) return m;
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k)
        s += std::pow(std::abs(static_cast<double>(x[k]) - static_cast<double>(w[k])) / m, p.value());
    return m * std::pow(s, 1.0 / p.value());
}

template <typename T>
double lp_distance(const std::vector<T>& x, const std::vector<T>& w, PExponent p) {
    return lp_distance(std::span<const T>(x), std::span<const T>(w), p);
}

struct LpGradient {
    std::vector<double> grad_x;
    std::vector<double> grad_w;
};

/// Gradient of ||x - w||_p with respect to x and w.
///
/// Finite p: grad_x_k = sign(v_k) * t_k^(p-1) * S^((1-p)/p), where v = x - w,
/// t_k = |v_k| / max|v| and S = sum_j t_j^p. This is sign(v_k) (|v_k| / ||v||_p)^(p-1)
/// without overflow. p = inf: one-hot at the lowest index of max |v_k|.
/// x == w yields zero vectors. grad_w = -grad_x.
template <typename T>
LpGradient lp_distance_grad(std::span<const T> x, std::span<const T> w, PExponent p) {
    detail::check_same_length(x, w, "lp_distance_grad");
    const std::size_t n = x.size();
    LpGradient g{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
    std::vector<double> v(n);
    double m = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        v[k] = static_cast<double>(x[k]) - static_cast<double>(w[k]);
        m = std::max(m, std::abs(v[k]));
    }
    if (m == 0.0) return g;
    if (p.is_infinite()) {
        std::size_t k = 0;
        while (std::abs(v[k]) != m) ++k;
        g.grad_x[k] = v[k] > 0.0 ? 1.0 : -1.0;
        g.grad_w[k] = -g.grad_x[k];
        return g;
    }
    const double pv = p.value();
    double s = 0.0;
    for (double vk : v) s += std::pow(std::abs(vk) / m, pv);
    const double scale = std::pow(s, (1.0 - pv) / pv);
    for (std::size_t k = 0; k < n; ++k) {
        if (v[k] == 0.0) continue;
        const double u = std::pow(std::abs(v[k]) / m, pv - 1.0) * scale;
        g.grad_x[k] = v[k] > 0.0 ? u : -u;
        g.grad_w[k] = -g.grad_x[k];
    }
    return g;
}

template <typename T>
LpGradient lp_distance_grad(const std::vector<T>& x, const std::vector<T>& w, PExponent p) {
    return lp_distance_grad(std::span<const T>(x), std::span<const T>(w), p);
}

/// log(sum_i exp(z_i)) shifted by max(z).
template <typename T>
double log_sum_exp(std::span<const T> z) {
    if (z.empty()) throw InvalidArgument("log_sum_exp: empty vector");
    double m = -std::numeric_limits<double>::infinity();
    for (T v : z) m = std::max(m, static_cast<double>(v));
    double s = 0.0;
    for (T v : z) s += std::exp(static_cast<double>(v) - m);
    return m + std::log(s);
}

template <typename T>
double log_sum_exp(const std::vector<T>& z) {
    return log_sum_exp(std::span<const T>(z));
}

}  // namespace ldn
