#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "ldn/core_math.hpp"
#include "ldn/error.hpp"

namespace ldn {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.99;
    double epsilon = 1e-10;
};

/// Moments for a fixed list of parameter tensors.
struct AdamState {
    AdamConfig config;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    AdamState() = default;
    explicit AdamState(const std::vector<std::size_t>& sizes, AdamConfig cfg = {}) : config(cfg) {
        if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0))
            throw InvalidArgument("Adam: betas must lie in [0, 1)");
        if (!(cfg.epsilon > 0.0)) throw InvalidArgument("Adam: epsilon must be positive");
        for (std::size_t n : sizes) {
            m.emplace_back(n, 0.0);
            v.emplace_back(n, 0.0);
        }
    }
};

/// One bias-corrected Adam update. `names` labels tensors in error messages.
/// `lr_scale[i]` multiplies lr for tensor i (empty means 1 everywhere).
template <typename T>
void adam_step(AdamState& state, std::span<const std::span<T>> params, std::span<const std::span<const T>> grads,
               double lr, std::span<const double> lr_scale = {}, std::span<const std::string> names = {}) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw ShapeError("adam_step: expected " + std::to_string(state.m.size()) + " tensors, got " +
                         std::to_string(params.size()) + " params and " + std::to_string(grads.size()) + " grads");
    auto label = [&](std::size_t i) { return i < names.size() ? names[i] : "tensor " + std::to_string(i); };
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].size() != state.m[i].size() || grads[i].size() != state.m[i].size())
            throw ShapeError("adam_step: size mismatch for " + label(i));
        for (T g : grads[i])
            if (std::isnan(static_cast<double>(g))) throw NumericError("adam_step: NaN gradient in " + label(i));
    }
    const auto& c = state.config;
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double step_lr = lr * (i < lr_scale.size() ? lr_scale[i] : 1.0);
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t k = 0; k < m.size(); ++k) {
            const double g = static_cast<double>(grads[i][k]);
            m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g;
            v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
            const double update = step_lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + c.epsilon);
            params[i][k] = static_cast<T>(static_cast<double>(params[i][k]) - update);
        }
    }
}

template <typename T>
void adam_step(AdamState& state, const std::vector<std::span<T>>& params,
               const std::vector<std::span<const T>>& grads, double lr, const std::vector<double>& lr_scale = {},
               const std::vector<std::string>& names = {}) {
    adam_step<T>(state, std::span<const std::span<T>>(params), std::span<const std::span<const T>>(grads), lr,
                 std::span<const double>(lr_scale), std::span<const std::string>(names));
}

/// lr0 * (1 + cos(pi * epoch / total)) / 2
inline double cosine_lr(std::size_t epoch, std::size_t total_epochs, double lr0) {
    if (epoch >= total_epochs)
        throw InvalidArgument("cosine_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                              std::to_string(total_epochs) + ")");
    return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(total_epochs)));
}

/// Stage lengths and endpoints of the p and lambda schedules.
struct ScheduleConfig {
    std::size_t e1 = 0;  // p = p_start, lambda = lambda0
    std::size_t e2 = 0;  // geometric growth of p, decay of lambda
    std::size_t e3 = 0;  // p = inf, lambda = 0
    double p_start = 8.0;
    double p_end = 1000.0;
    double lambda0 = 0.1;
    double lambda_end = 5e-4;
    double lr0 = 0.03;

    std::size_t total_epochs() const noexcept { return e1 + e2 + e3; }

    void validate() const {
        if (!(p_start >= 1.0) || !(p_end >= p_start) || !std::isfinite(p_end))
            throw InvalidArgument("ScheduleConfig: need 1 <= p_start <= p_end < inf");
        if (!(lambda0 >= 0.0) || !(lambda_end >= 0.0) || lambda_end > lambda0)
            throw InvalidArgument("ScheduleConfig: need 0 <= lambda_end <= lambda0");
        if (lambda0 == 0.0 && lambda_end > 0.0) throw InvalidArgument("ScheduleConfig: lambda0 = 0 with lambda_end > 0");
        if (!(lr0 > 0.0)) throw InvalidArgument("ScheduleConfig: lr0 must be positive");
        if (total_epochs() == 0) throw InvalidArgument("ScheduleConfig: zero total epochs");
    }
};

namespace detail {
/// Geometric interpolation from a (epoch e1) to b (epoch e1 + e2 - 1).
inline double relaxation_point(std::size_t epoch, const ScheduleConfig& cfg, double a, double b) {
    if (cfg.e2 <= 1) return b;
    const double frac = static_cast<double>(epoch - cfg.e1) / static_cast<double>(cfg.e2 - 1);
    return a * std::pow(b / a, frac);
}

inline void check_epoch(std::size_t epoch, const ScheduleConfig& cfg, const char* op) {
    if (epoch >= cfg.total_epochs())
        throw InvalidArgument(std::string(op) + ": epoch " + std::to_string(epoch) + " outside [0, " +
                              std::to_string(cfg.total_epochs()) + ")");
}
}  // namespace detail

inline PExponent p_schedule(std::size_t epoch, const ScheduleConfig& cfg) {
    detail::check_epoch(epoch, cfg, "p_schedule");
    if (epoch < cfg.e1) return PExponent(cfg.p_start);
    if (epoch < cfg.e1 + cfg.e2) return PExponent(detail::relaxation_point(epoch, cfg, cfg.p_start, cfg.p_end));
    return PExponent::infinity();
}

inline double lambda_schedule(std::size_t epoch, const ScheduleConfig& cfg) {
    detail::check_epoch(epoch, cfg, "lambda_schedule");
    if (cfg.lambda0 == 0.0 && cfg.lambda_end > 0.0)
        throw InvalidArgument("lambda_schedule: lambda0 = 0 with lambda_end > 0");
    if (epoch < cfg.e1) return cfg.lambda0;
    if (epoch < cfg.e1 + cfg.e2) {
        if (cfg.lambda0 == 0.0) return 0.0;
        if (cfg.lambda_end == 0.0) return epoch + 1 < cfg.e1 + cfg.e2 ? cfg.lambda0 : 0.0;
        return detail::relaxation_point(epoch, cfg, cfg.lambda0, cfg.lambda_end);
    }
    return 0.0;
}

}  // namespace ldn
