#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ldn/data.hpp"
#include "ldn/error.hpp"
#include "ldn/losses.hpp"
#include "ldn/network.hpp"
#include "ldn/separation.hpp"

namespace ldn {

struct SampleCertificate {
    double margin = 0.0;
    std::size_t prediction = 0;
    bool correct = false;
    bool certified = false;
};

struct CertificationReport {
    double eps = 0.0;
    std::vector<std::uint32_t> labels;
    std::vector<std::size_t> predictions;
    std::vector<double> margins;
    std::vector<bool> correct;
    std::vector<bool> certified;
    std::vector<bool> attacked_ok;  // empty unless an attack was run
    double clean_acc = 0.0;
    double cert_acc = 0.0;
    double pgd_acc = std::numeric_limits<double>::quiet_NaN();

    std::size_t size() const noexcept { return labels.size(); }
};

struct PgdConfig {
    std::size_t steps = 100;
    double step_size = -1.0;  // negative: 2.5 * eps / steps
    std::size_t restarts = 1;
    std::uint64_t seed = 0;
    std::size_t chunk = 256;  // samples attacked together
};

struct LipschitzEstimate {
    std::vector<double> per_sample;
    double mean = 0.0;
    double max = 0.0;
};

namespace detail {

template <typename T>
void require_certifiable(const DistanceNet<T>& net, const char* op) {
    if (!net.p.is_infinite())
        throw InvalidArgument(std::string(op) + ": margin certification is only sound at p = inf (net has p = " +
                              to_string(net.p) + ")");
}

template <typename T>
DistanceNet<T>& inference_view(const DistanceNet<T>& net, const char* op) {
    if (net.mode != Mode::inference) throw InvalidArgument(std::string(op) + ": network must be in inference mode");
    // forward() in inference mode never writes to the network
    return const_cast<DistanceNet<T>&>(net);
}

template <typename T>
Tensor<T> rows_as(const LabeledDataset& data, std::size_t begin, std::size_t end) {
    Tensor<T> out(end - begin, data.dim());
    for (std::size_t r = begin; r < end; ++r) {
        auto src = data.samples.row(r);
        std::ranges::transform(src, out.row(r - begin).begin(), [](float v) { return static_cast<T>(v); });
    }
    return out;
}

template <typename T>
std::size_t argmax(std::span<const T> z) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < z.size(); ++j)
        if (z[j] > z[best]) best = j;
    return best;
}

inline std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t restart) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                      static_cast<std::uint32_t>(restart)};
    return std::mt19937_64(seq);
}

}  // namespace detail

/// certified <=> prediction correct and margin / 2 > eps.
template <typename T>
SampleCertificate certify_sample(const DistanceNet<T>& net, std::span<const T> x, std::size_t y, double eps) {
    detail::require_certifiable(net, "certify_sample");
    auto& view = detail::inference_view(net, "certify_sample");
    if (y >= net.class_count()) throw InvalidArgument("certify_sample: label out of range");
    Tensor<T> batch(1, x.size(), std::vector<T>(x.begin(), x.end()));
    const Tensor<T> logits = forward(view, batch, false).logits;
    SampleCertificate c;
    const auto z = std::span<const T>(logits.row(0));
    c.margin = margin(z, y);
    c.prediction = detail::argmax(z);
    c.correct = c.margin > 0.0;
    c.certified = c.correct && c.margin / 2.0 > eps;
    return c;
}

/// Margins and certificates for a whole dataset, computed in chunks.
template <typename T>
CertificationReport certified_accuracy(const DistanceNet<T>& net, const LabeledDataset& data, double eps,
                                       std::size_t chunk = 512) {
    detail::require_certifiable(net, "certified_accuracy");
    auto& view = detail::inference_view(net, "certified_accuracy");
    if (data.empty()) throw InvalidArgument("certified_accuracy: empty dataset");
    if (!(eps >= 0.0)) throw InvalidArgument("certified_accuracy: eps must be >= 0");
    CertificationReport rep;
    rep.eps = eps;
    rep.labels = data.labels;
    std::size_t n_correct = 0, n_cert = 0;
    for (std::size_t begin = 0; begin < data.size(); begin += chunk) {
        const std::size_t end = std::min(data.size(), begin + chunk);
        const Tensor<T> logits = forward(view, detail::rows_as<T>(data, begin, end), false).logits;
        for (std::size_t r = begin; r < end; ++r) {
            const auto z = std::span<const T>(logits.row(r - begin));
            const double m = margin(z, data.labels[r]);
            const bool ok = m > 0.0;
            const bool cert = ok && m / 2.0 > eps;
            rep.margins.push_back(m);
            rep.predictions.push_back(detail::argmax(z));
            rep.correct.push_back(ok);
            rep.certified.push_back(cert);
            n_correct += ok;
            n_cert += cert;
        }
    }
    rep.clean_acc = static_cast<double>(n_correct) / static_cast<double>(data.size());
    rep.cert_acc = static_cast<double>(n_cert) / static_cast<double>(data.size());
    return rep;
}

template <typename T>
struct PgdBatchResult {
    Tensor<T> delta;
    std::vector<double> best_loss;
    std::vector<bool> fooled;  // some iterate was misclassified
};

/// Untargeted l_inf PGD on the unscaled cross-entropy for a batch of samples.
/// Starts uniformly in the eps-ball, takes signed gradient steps, projects onto the
/// ball and [0,1]^d, and keeps the highest-loss iterate per sample.
template <typename T>
PgdBatchResult<T> pgd_attack_batch(const DistanceNet<T>& net, const Tensor<T>& x,
                                   std::span<const std::uint32_t> labels, double eps, const PgdConfig& cfg,
                                   std::size_t first_index = 0) {
    auto& view = detail::inference_view(net, "pgd_attack");
    if (cfg.steps == 0) throw InvalidArgument("pgd_attack: steps must be positive");
    if (!(eps >= 0.0)) throw InvalidArgument("pgd_attack: eps must be >= 0");
    if (x.rows() != labels.size()) throw ShapeError("pgd_attack: sample/label count mismatch");
    const std::size_t n = x.rows(), d = x.cols();
    const double step = cfg.step_size > 0.0 ? cfg.step_size : 2.5 * eps / static_cast<double>(cfg.steps);
    const LossSpec ce{LossKind::scaled_ce, 1.0, 0.0};

    PgdBatchResult<T> out;
    out.delta = Tensor<T>(n, d);
    out.best_loss.assign(n, -std::numeric_limits<double>::infinity());
    out.fooled.assign(n, false);

    auto score = [&](const Tensor<T>& logits, const Tensor<T>& delta, bool record) {
        for (std::size_t b = 0; b < n; ++b) {
            const auto z = std::span<const T>(logits.row(b));
            const double loss = scaled_ce(z, labels[b], 1.0).loss;
            if (!(margin(z, labels[b]) > 0.0)) out.fooled[b] = true;
            if (record && loss > out.best_loss[b]) {
                out.best_loss[b] = loss;
                std::ranges::copy(delta.row(b), out.delta.row(b).begin());
            }
        }
    };

    if (eps == 0.0) {
        score(forward(view, x, false).logits, out.delta, true);
        return out;
    }

    const std::size_t restarts = std::max<std::size_t>(cfg.restarts, 1);
    for (std::size_t rs = 0; rs < restarts; ++rs) {
        Tensor<T> delta(n, d);
        for (std::size_t b = 0; b < n; ++b) {
            auto rng = detail::sample_rng(cfg.seed, first_index + b, rs);
            std::uniform_real_distribution<double> u(-eps, eps);
            for (std::size_t k = 0; k < d; ++k) {
                const double xv = static_cast<double>(x(b, k));
                delta(b, k) = static_cast<T>(std::clamp(xv + u(rng), 0.0, 1.0) - xv);
            }
        }
        Tensor<T> adv(n, d);
        for (std::size_t it = 0; it <= cfg.steps; ++it) {
            for (std::size_t k = 0; k < n * d; ++k) adv.flat()[k] = x.flat()[k] + delta.flat()[k];
            const bool last = it == cfg.steps;
            auto res = forward(view, adv, !last);
            score(res.logits, delta, true);
            if (last) break;
            const BatchLoss<T> bl = batch_loss(ce, res.logits, labels, 1.0, 0.0);
            const ParamGrads<T> g = backward(view, *res.trace, bl.grad_logits, true);
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t k = 0; k < d; ++k) {
                    const double gk = static_cast<double>(g.input(b, k));
                    const double xv = static_cast<double>(x(b, k));
                    double dv = static_cast<double>(delta(b, k)) + (gk > 0.0 ? step : gk < 0.0 ? -step : 0.0);
                    dv = std::clamp(dv, -eps, eps);
                    dv = std::clamp(xv + dv, 0.0, 1.0) - xv;
                    delta(b, k) = static_cast<T>(dv);
                }
        }
    }
    return out;
}

/// Single-sample PGD; returns the perturbation.
template <typename T>
std::vector<T> pgd_attack(const DistanceNet<T>& net, std::span<const T> x, std::size_t y, double eps,
                          std::size_t steps, double step_size, std::uint64_t seed) {
    if (y >= net.class_count()) throw InvalidArgument("pgd_attack: label out of range");
    Tensor<T> batch(1, x.size(), std::vector<T>(x.begin(), x.end()));
    const std::uint32_t label = static_cast<std::uint32_t>(y);
    PgdConfig cfg;
    cfg.steps = steps;
    cfg.step_size = step_size;
    cfg.seed = seed;
    auto res = pgd_attack_batch(net, batch, std::span<const std::uint32_t>(&label, 1), eps, cfg);
    auto row = res.delta.row(0);
    return {row.begin(), row.end()};
}

/// Per-sample flags: still correctly classified after every PGD restart.
template <typename T>
std::vector<bool> pgd_survivors(const DistanceNet<T>& net, const LabeledDataset& data, double eps,
                                const PgdConfig& cfg) {
    if (data.empty()) throw InvalidArgument("robust_accuracy: empty dataset");
    std::vector<bool> ok(data.size());
    const std::size_t chunk = std::max<std::size_t>(cfg.chunk, 1);
    for (std::size_t begin = 0; begin < data.size(); begin += chunk) {
        const std::size_t end = std::min(data.size(), begin + chunk);
        const auto x = detail::rows_as<T>(data, begin, end);
        const auto res = pgd_attack_batch(
            net, x, std::span<const std::uint32_t>(data.labels).subspan(begin, end - begin), eps, cfg, begin);
        for (std::size_t r = begin; r < end; ++r) ok[r] = !res.fooled[r - begin];
    }
    return ok;
}

template <typename T>
double robust_accuracy(const DistanceNet<T>& net, const LabeledDataset& data, double eps, const PgdConfig& cfg = {}) {
    const auto ok = pgd_survivors(net, data, eps, cfg);
    return static_cast<double>(std::ranges::count(ok, true)) / static_cast<double>(ok.size());
}

/// Adds PGD outcomes to an existing certification report.
template <typename T>
void attach_attack(CertificationReport& rep, const DistanceNet<T>& net, const LabeledDataset& data,
                   const PgdConfig& cfg) {
    if (rep.size() != data.size()) throw ShapeError("attach_attack: report/dataset size mismatch");
    rep.attacked_ok = pgd_survivors(net, data, rep.eps, cfg);
    rep.pgd_acc =
        static_cast<double>(std::ranges::count(rep.attacked_ok, true)) / static_cast<double>(rep.attacked_ok.size());
}

/// Empirical lower bound on the l_inf Lipschitz constant: for each output j,
/// PGD maximises |g_j(x + delta) - g_j(x)| / eps over the eps-ball.
template <typename T>
LipschitzEstimate lipschitz_lower_bound(const DistanceNet<T>& net, const LabeledDataset& slice,
                                        double eps = 1.0 / 255.0, std::size_t steps = 20, std::size_t restarts = 1,
                                        std::uint64_t seed = 0) {
    auto& view = detail::inference_view(net, "lipschitz_lower_bound");
    if (slice.empty()) throw InvalidArgument("lipschitz_lower_bound: empty slice");
    if (!(eps > 0.0)) throw InvalidArgument("lipschitz_lower_bound: eps must be positive");
    const std::size_t n = slice.size(), d = slice.dim(), k = net.class_count();
    const double step = eps / 4.0;
    const Tensor<T> x = detail::rows_as<T>(slice, 0, n);
    const Tensor<T> base = forward(view, x, false).logits;

    LipschitzEstimate est;
    est.per_sample.assign(n, 0.0);
    Tensor<T> adv(n, d), delta(n, d);
    for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t rs = 0; rs < std::max<std::size_t>(restarts, 1); ++rs) {
            for (std::size_t b = 0; b < n; ++b) {
                auto rng = detail::sample_rng(seed, b, (j << 16) | rs);
                std::uniform_real_distribution<double> u(-eps, eps);
                for (std::size_t c = 0; c < d; ++c) {
                    const double xv = static_cast<double>(x(b, c));
                    delta(b, c) = static_cast<T>(std::clamp(xv + u(rng), 0.0, 1.0) - xv);
                }
            }
            for (std::size_t it = 0; it <= steps; ++it) {
                for (std::size_t q = 0; q < n * d; ++q) adv.flat()[q] = x.flat()[q] + delta.flat()[q];
                const bool last = it == steps;
                auto res = forward(view, adv, !last);
                Tensor<T> seed_grad(n, k);
                for (std::size_t b = 0; b < n; ++b) {
                    const double diff = static_cast<double>(res.logits(b, j)) - static_cast<double>(base(b, j));
                    est.per_sample[b] = std::max(est.per_sample[b], std::abs(diff) / eps);
                    seed_grad(b, j) = static_cast<T>(diff >= 0.0 ? 1.0 : -1.0);
                }
                if (last) break;
                const ParamGrads<T> g = backward(view, *res.trace, seed_grad, true);
                for (std::size_t b = 0; b < n; ++b)
                    for (std::size_t c = 0; c < d; ++c) {
                        const double gk = static_cast<double>(g.input(b, c));
                        const double xv = static_cast<double>(x(b, c));
                        double dv = static_cast<double>(delta(b, c)) + (gk > 0.0 ? step : gk < 0.0 ? -step : 0.0);
                        dv = std::clamp(dv, -eps, eps);
                        delta(b, c) = static_cast<T>(std::clamp(xv + dv, 0.0, 1.0) - xv);
                    }
            }
        }
    }
    double sum = 0.0;
    for (double v : est.per_sample) {
        sum += v;
        est.max = std::max(est.max, v);
    }
    est.mean = sum / static_cast<double>(n);
    return est;
}

/// One row per sample: index,label,prediction,margin,certified,attacked_ok
inline void write_report_csv(const CertificationReport& rep, std::ostream& out) {
    out << "index,label,prediction,margin,certified,attacked_ok\n";
    char buf[64];
    for (std::size_t i = 0; i < rep.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.9g", rep.margins[i]);
        out << i << ',' << rep.labels[i] << ',' << rep.predictions[i] << ',' << buf << ',' << (rep.certified[i] ? 1 : 0)
            << ',';
        if (rep.attacked_ok.empty())
            out << "NA";
        else
            out << (rep.attacked_ok[i] ? 1 : 0);
        out << '\n';
    }
}

inline void write_report_csv(const CertificationReport& rep, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    write_report_csv(rep, out);
    if (!out) throw IoError("write failure on " + path.string());
}

/// r-separation of a labelled dataset (optionally its first `limit` samples).
inline SeparationReport r_separation(const LabeledDataset& data, std::size_t limit = 0) {
    return r_separation(data.samples, data.labels, limit);
}

}  // namespace ldn
