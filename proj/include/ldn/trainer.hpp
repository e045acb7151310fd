#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ldn/certify.hpp"
#include "ldn/data.hpp"
#include "ldn/losses.hpp"
#include "ldn/network.hpp"
#include "ldn/optim.hpp"

namespace ldn {

/// Random crop after zero padding, plus an optional horizontal flip.
struct Augmentation {
    std::size_t pad = 0;
    bool flip = false;

    bool is_identity() const noexcept { return pad == 0 && !flip; }
};

struct TrainConfig {
    std::vector<std::size_t> dims;  // input, hidden..., classes
    ScheduleConfig schedule;
    LossSpec loss;
    std::size_t batch_size = 512;
    std::uint64_t seed = 0;
    Augmentation augment;
    double eps = 0.1;                   // evaluation radius for certified metrics
    std::filesystem::path metrics_path;  // empty: no CSV
    std::size_t eval_subset = 0;        // evaluate on the first N samples of each split; 0 = all
    bool log_wall_time = true;          // false writes NA so the CSV is reproducible
    double init_noise = 0.05;
    double temperature_lr_scale = 0.2;

    void validate() const {
        if (dims.size() < 2) throw InvalidArgument("TrainConfig: dims needs an input and an output width");
        for (std::size_t d : dims)
            if (d == 0) throw InvalidArgument("TrainConfig: zero width in dims");
        if (batch_size < 2) throw InvalidArgument("TrainConfig: batch_size must be >= 2 for mean-shift normalisation");
        if (!(eps >= 0.0)) throw InvalidArgument("TrainConfig: eps must be >= 0");
        if (!(init_noise >= 0.0)) throw InvalidArgument("TrainConfig: init_noise must be >= 0");
        if (!(temperature_lr_scale > 0.0)) throw InvalidArgument("TrainConfig: temperature_lr_scale must be > 0");
        schedule.validate();
        loss.validate();
    }
};

struct MetricsRow {
    std::size_t epoch = 0;
    PExponent p;
    double lambda = 0.0;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double train_cert_acc = 0.0;
    double test_acc = 0.0;
    double test_cert_acc = 0.0;
    double wall_seconds = 0.0;
};

struct TrainResult {
    DistanceNet<float> net;
    std::vector<MetricsRow> metrics;
};

struct EvalResult {
    double clean_acc = 0.0;
    double cert_acc = 0.0;
    std::optional<double> pgd_acc;
};

inline constexpr const char* kMetricsHeader =
    "epoch,p,lambda,lr,train_loss,train_acc,train_cert_acc,test_acc,test_cert_acc,wall_seconds";

namespace detail {

inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t tag) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(tag)};
    return std::mt19937_64(seq);
}

inline Geometry resolve_geometry(const std::optional<Geometry>& g, std::size_t dim) {
    if (g) {
        if (g->size() != dim) throw ShapeError("augment_batch: geometry does not match the sample dimension");
        return *g;
    }
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(dim))));
    if (side * side != dim)
        throw InvalidArgument("augment_batch: samples of dimension " + std::to_string(dim) +
                              " are not square images and the dataset carries no geometry");
    return {1, side, side};
}

inline std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

}  // namespace detail

/// Pads each image with `pad` zeros, crops back to the original size at a random
/// offset and flips horizontally with probability 1/2 when enabled.
inline Tensor<float> augment_batch(const Tensor<float>& batch, const std::optional<Geometry>& geometry,
                                   const Augmentation& spec, std::mt19937_64& rng) {
    if (spec.is_identity()) return batch;
    const Geometry g = detail::resolve_geometry(geometry, batch.cols());
    std::uniform_int_distribution<std::size_t> offset(0, 2 * spec.pad);
    std::bernoulli_distribution coin(0.5);
    Tensor<float> out(batch.rows(), batch.cols());
    const auto h = static_cast<std::ptrdiff_t>(g.height), w = static_cast<std::ptrdiff_t>(g.width);
    const auto pad = static_cast<std::ptrdiff_t>(spec.pad);
    for (std::size_t b = 0; b < batch.rows(); ++b) {
        const auto oy = static_cast<std::ptrdiff_t>(offset(rng)) - pad;
        const auto ox = static_cast<std::ptrdiff_t>(offset(rng)) - pad;
        const bool flip = spec.flip && coin(rng);
        const auto src = batch.row(b);
        auto dst = out.row(b);
        for (std::size_t c = 0; c < g.channels; ++c) {
            const std::size_t plane = c * g.height * g.width;
            for (std::ptrdiff_t y = 0; y < h; ++y) {
                const std::ptrdiff_t sy = y + oy;
                for (std::ptrdiff_t x = 0; x < w; ++x) {
                    const std::ptrdiff_t sx = (flip ? w - 1 - x : x) + ox;
                    if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                    dst[plane + static_cast<std::size_t>(y * w + x)] = src[plane + static_cast<std::size_t>(sy * w + sx)];
                }
            }
        }
    }
    return out;
}

/// Adam over the network tensors plus the temperature, which gets its own
/// moments and a scaled learning rate.
struct TrainerOptimizer {
    AdamState weights;
    AdamState temperature;
    double temperature_lr_scale = 0.2;
    double last_weight_lr = 0.0;
    double last_temperature_lr = 0.0;

    TrainerOptimizer() = default;
    TrainerOptimizer(DistanceNet<float>& net, double temperature_scale) : temperature_lr_scale(temperature_scale) {
        std::vector<std::size_t> sizes;
        for (const auto& v : parameter_views(net)) sizes.push_back(v.size());
        weights = AdamState(sizes);
        temperature = AdamState({1});
        for (std::size_t l = 0; l < net.depth(); ++l) {
            names.push_back("layer" + std::to_string(l) + ".weights");
            names.push_back("layer" + std::to_string(l) + ".bias");
        }
    }

    void step(DistanceNet<float>& net, const ParamGrads<float>& grads, double lr, bool train_temperature) {
        adam_step<float>(weights, parameter_views(net), gradient_views(grads), lr, {}, names);
        last_weight_lr = lr;
        last_temperature_lr = 0.0;
        if (!train_temperature) return;
        double s = net.temperature;
        const double gs = grads.temperature;
        last_temperature_lr = lr * temperature_lr_scale;
        adam_step<double>(temperature, {std::span<double>(&s, 1)}, {std::span<const double>(&gs, 1)},
                          last_temperature_lr, {}, {"temperature"});
        net.temperature = std::max(s, kMinTemperature);
    }

    static constexpr double kMinTemperature = 1e-3;

private:
    std::vector<std::string> names;
};

/// Clean, certified and (optionally) PGD accuracy. Certification needs p = inf.
template <typename T>
EvalResult evaluate(const DistanceNet<T>& net, const LabeledDataset& data, double eps, std::size_t attack_steps = 0,
                    std::uint64_t seed = 0) {
    if (!net.p.is_infinite())
        throw InvalidArgument("evaluate: certification is only sound at p = inf (network has p = " +
                              to_string(net.p) + ")");
    const DistanceNet<T> view = net.certifiable();
    auto rep = certified_accuracy(view, data, eps);
    EvalResult out{rep.clean_acc, rep.cert_acc, std::nullopt};
    if (attack_steps > 0) {
        PgdConfig cfg;
        cfg.steps = attack_steps;
        cfg.seed = seed;
        attach_attack(rep, view, data, cfg);
        out.pgd_acc = rep.pgd_acc;
    }
    return out;
}

inline void write_metrics_header(std::ostream& out, std::size_t eval_subset) {
    out << "# eval_subset=" << eval_subset << '\n' << kMetricsHeader << '\n';
}

inline void write_metrics_row(std::ostream& out, const MetricsRow& r, bool wall_time) {
    out << r.epoch << ',' << (r.p.is_infinite() ? std::string("inf") : detail::format_number(r.p.value())) << ','
        << detail::format_number(r.lambda) << ',' << detail::format_number(r.lr) << ','
        << detail::format_number(r.train_loss) << ',' << detail::format_number(r.train_acc) << ','
        << detail::format_number(r.train_cert_acc) << ',' << detail::format_number(r.test_acc) << ','
        << detail::format_number(r.test_cert_acc) << ','
        << (wall_time ? detail::format_number(r.wall_seconds) : std::string("NA")) << '\n';
}

using EpochCallback = std::function<void(const MetricsRow&)>;

/// Full training run: per-epoch p, lambda and cosine lr; seeded shuffling and
/// augmentation; certified metrics evaluated at p = inf after every epoch.
inline TrainResult train(const TrainConfig& cfg, const LabeledDataset& train_set, const LabeledDataset& test_set,
                         const EpochCallback& on_epoch = {}) {
    cfg.validate();
    if (train_set.empty()) throw InvalidArgument("train: empty training set");
    train_set.validate();
    if (!test_set.empty()) test_set.validate();
    if (cfg.dims.front() != train_set.dim())
        throw ShapeError("train: dims start with " + std::to_string(cfg.dims.front()) + " but samples have " +
                         std::to_string(train_set.dim()) + " features");
    if (cfg.dims.back() != train_set.classes)
        throw ShapeError("train: dims end with " + std::to_string(cfg.dims.back()) + " but the dataset has " +
                         std::to_string(train_set.classes) + " classes");
    if (!test_set.empty() && test_set.dim() != train_set.dim())
        throw ShapeError("train: train and test samples differ in dimension");
    if (!cfg.augment.is_identity()) detail::resolve_geometry(train_set.geometry, train_set.dim());

    const auto& sched = cfg.schedule;
    auto net = init_identity<float>(cfg.dims, cfg.seed, cfg.init_noise, p_schedule(0, sched));
    net.temperature = 1.0;
    TrainerOptimizer opt(net, cfg.temperature_lr_scale);

    const LabeledDataset train_eval = cfg.eval_subset ? take(train_set, cfg.eval_subset) : train_set;
    const LabeledDataset test_eval = cfg.eval_subset ? take(test_set, cfg.eval_subset) : test_set;

    std::ofstream csv;
    if (!cfg.metrics_path.empty()) {
        csv.open(cfg.metrics_path);
        if (!csv) throw IoError("cannot open " + cfg.metrics_path.string() + " for writing");
        write_metrics_header(csv, cfg.eval_subset);
    }

    const std::size_t n = train_set.size(), d = train_set.dim();
    std::vector<std::size_t> order(n);
    const auto start = std::chrono::steady_clock::now();
    TrainResult result;

    for (std::size_t epoch = 0; epoch < sched.total_epochs(); ++epoch) {
        net.p = p_schedule(epoch, sched);
        net.mode = Mode::training;
        const double lambda = lambda_schedule(epoch, sched);
        const double lr = cosine_lr(epoch, sched.total_epochs(), sched.lr0);
        const bool temperature_active = cfg.loss.uses_temperature() &&
                                        (cfg.loss.kind != LossKind::composite_decaying_lambda || lambda > 0.0);

        std::iota(order.begin(), order.end(), std::size_t{0});
        auto shuffle_rng = detail::stream_rng(cfg.seed, epoch, 0, 1);
        for (std::size_t i = n; i > 1; --i) {
            std::uniform_int_distribution<std::size_t> pick(0, i - 1);
            std::swap(order[i - 1], order[pick(shuffle_rng)]);
        }

        double loss_sum = 0.0;
        std::size_t seen = 0, correct = 0;
        for (std::size_t begin = 0, batch_index = 0; begin < n; begin += cfg.batch_size, ++batch_index) {
            const std::size_t end = std::min(n, begin + cfg.batch_size);
            if (end - begin < 2) break;
            Tensor<float> x(end - begin, d);
            std::vector<std::uint32_t> y(end - begin);
            for (std::size_t r = begin; r < end; ++r) {
                const auto src = train_set.samples.row(order[r]);
                std::copy(src.begin(), src.end(), x.row(r - begin).begin());
                y[r - begin] = train_set.labels[order[r]];
            }
            if (!cfg.augment.is_identity()) {
                auto aug_rng = detail::stream_rng(cfg.seed, epoch, batch_index, 2);
                x = augment_batch(x, train_set.geometry, cfg.augment, aug_rng);
            }
            auto fwd = forward(net, x, true);
            const auto bl = batch_loss(cfg.loss, fwd.logits, std::span<const std::uint32_t>(y), net.temperature, lambda);
            if (!std::isfinite(bl.loss))
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batch_index) + " (p = " + to_string(net.p) + ")");
            auto grads = backward(net, *fwd.trace, bl.grad_logits);
            grads.temperature = bl.grad_s;
            opt.step(net, grads, lr, temperature_active);
            loss_sum += bl.loss * static_cast<double>(y.size());
            correct += bl.correct;
            seen += y.size();
        }

        MetricsRow row;
        row.epoch = epoch;
        row.p = net.p;
        row.lambda = lambda;
        row.lr = lr;
        row.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
        row.train_acc = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
        const auto eval_net = net.certifiable();
        row.train_cert_acc = certified_accuracy(eval_net, train_eval, cfg.eps).cert_acc;
        if (!test_eval.empty()) {
            const auto rep = certified_accuracy(eval_net, test_eval, cfg.eps);
            row.test_acc = rep.clean_acc;
            row.test_cert_acc = rep.cert_acc;
        }
        row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (csv.is_open()) {
            write_metrics_row(csv, row, cfg.log_wall_time);
            csv.flush();
        }
        if (on_epoch) on_epoch(row);
        result.metrics.push_back(row);
    }
    net.p = PExponent::infinity();
    net.mode = Mode::inference;
    result.net = std::move(net);
    return result;
}

}  // namespace ldn
