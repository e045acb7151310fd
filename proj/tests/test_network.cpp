#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ldn/losses.hpp"
#include "ldn/network.hpp"
#include "oracles.hpp"

using ldn::DistanceNet;
using ldn::Mode;
using ldn::PExponent;
using ldn::Tensor;

namespace {

DistanceNet<double> single_neuron(double bias, PExponent p) {
    DistanceNet<double> net;
    net.p = p;
    ldn::LayerParams<double> layer(1, 2);
    layer.bias[0] = bias;
    net.layers.push_back(layer);
    return net;
}

double weighted_sum(const Tensor<double>& logits, const Tensor<double>& c) {
    double s = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) s += logits.flat()[k] * c.flat()[k];
    return s;
}

double linf_rows(const Tensor<double>& a, std::size_t i, const Tensor<double>& b, std::size_t j) {
    double m = 0.0;
    for (std::size_t k = 0; k < a.cols(); ++k) m = std::max(m, std::abs(a(i, k) - b(j, k)));
    return m;
}

}  // namespace

TEST(Forward, SingleNeuronExamples) {
    auto net = single_neuron(0.0, PExponent::infinity());
    Tensor<double> x(1, 2, std::vector<double>{0.3, -0.5});
    EXPECT_DOUBLE_EQ(ldn::forward(net, x).logits(0, 0), 0.5);
    net.layers[0].bias[0] = 1.0;
    EXPECT_DOUBLE_EQ(ldn::forward(net, x).logits(0, 0), 1.5);
}

TEST(Forward, Errors) {
    auto net = oracle::random_net({3, 4, 2}, 1, PExponent(8));
    EXPECT_THROW(ldn::forward(net, Tensor<double>(2, 4)), ldn::ShapeError);
    net.mode = Mode::training;
    EXPECT_THROW(ldn::forward(net, Tensor<double>(1, 3)), ldn::InvalidArgument);
    EXPECT_NO_THROW(ldn::forward(net, Tensor<double>(2, 3)));
}

TEST(Forward, TrainingModeSubtractsBatchMeanAndUpdatesRunningMean) {
    auto net = oracle::random_net({3, 4, 2}, 2, PExponent(8));
    net.mode = Mode::training;
    const auto before = net.layers[0].running_mean;
    const auto x = oracle::random_batch<double>(6, 3, 3);
    auto res = ldn::forward(net, x, true);
    const auto& lt = res.trace->layers[0];
    for (std::size_t i = 0; i < 4; ++i) {
        double mean_out = 0.0;
        for (std::size_t b = 0; b < 6; ++b) mean_out += lt.output(b, i);
        EXPECT_NEAR(mean_out / 6.0, net.layers[0].bias[i], 1e-12);
        EXPECT_NEAR(net.layers[0].running_mean[i], 0.9 * before[i] + 0.1 * lt.batch_mean[i], 1e-15);
    }
    // the output layer carries no shift
    EXPECT_EQ(net.layers[1].running_mean, oracle::random_net({3, 4, 2}, 2, PExponent(8)).layers[1].running_mean);
}

TEST(Forward, InferenceIsBatchIndependent) {
    auto net = oracle::random_net({5, 8, 8, 3}, 4, PExponent(8));
    const auto x = oracle::random_batch<double>(7, 5, 5);
    const auto all = ldn::infer(net, x);
    for (std::size_t b = 0; b < 7; ++b) {
        Tensor<double> one(1, 5, std::vector<double>(x.row(b).begin(), x.row(b).end()));
        const auto single = ldn::infer(net, one);
        for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(single(0, k), all(b, k));
    }
}

TEST(Forward, ShiftEquivariance) {
    auto net = oracle::random_net({4, 6, 3}, 6, PExponent(8));
    auto shifted = net;
    for (auto& v : shifted.layers[0].weights.flat()) v += 0.25;
    auto x = oracle::random_batch<double>(5, 4, 7);
    auto xs = x;
    for (auto& v : xs.flat()) v += 0.25;
    const auto a = ldn::infer(net, x), b = ldn::infer(shifted, xs);
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a.flat()[k], b.flat()[k], 1e-12);
}

TEST(Backward, SingleNeuronChainRule) {
    auto net = single_neuron(0.2, PExponent(2));
    net.layers[0].weights(0, 0) = 0.1;
    net.layers[0].weights(0, 1) = 0.7;
    Tensor<double> x(1, 2, std::vector<double>{0.4, 0.3});
    auto res = ldn::forward(net, x, true);
    Tensor<double> g(1, 1, std::vector<double>{-1.5});
    auto grads = ldn::backward(net, *res.trace, g, true);
    auto ref = ldn::lp_distance_grad(std::vector<double>{0.4, 0.3}, std::vector<double>{0.1, 0.7}, PExponent(2));
    for (int k = 0; k < 2; ++k) {
        EXPECT_NEAR(grads.weights[0](0, k), -1.5 * ref.grad_w[k], 1e-15);
        EXPECT_NEAR(grads.input(0, k), -1.5 * ref.grad_x[k], 1e-15);
    }
    EXPECT_DOUBLE_EQ(grads.bias[0][0], -1.5);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
    auto net = oracle::random_net({4, 6, 3}, 8, PExponent(8));
    net.mode = Mode::training;
    auto res = ldn::forward(net, oracle::random_batch<double>(4, 4, 9), true);
    auto grads = ldn::backward(net, *res.trace, Tensor<double>(4, 3), true);
    for (const auto& w : grads.weights)
        for (double v : w.flat()) EXPECT_EQ(v, 0.0);
    for (const auto& b : grads.bias)
        for (double v : b) EXPECT_EQ(v, 0.0);
    for (double v : grads.input.flat()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, StaleOrMissingTraceRejected) {
    auto net = oracle::random_net({4, 6, 3}, 10, PExponent(8));
    auto res = ldn::forward(net, oracle::random_batch<double>(3, 4, 11), true);
    ldn::ForwardTrace<double> empty;
    EXPECT_THROW(ldn::backward(net, empty, Tensor<double>(3, 3)), ldn::InvalidArgument);
    net.p = PExponent(16);
    EXPECT_THROW(ldn::backward(net, *res.trace, Tensor<double>(3, 3)), ldn::InvalidArgument);
    auto other = net;
    EXPECT_THROW(ldn::backward(other, *res.trace, Tensor<double>(3, 3)), ldn::InvalidArgument);
    net.p = PExponent(8);
    EXPECT_THROW(ldn::backward(net, *res.trace, Tensor<double>(2, 3)), ldn::ShapeError);
}

// Every parameter and input gradient of a 3-layer width-16 net against central differences.
class BackwardFd : public ::testing::TestWithParam<std::tuple<double, Mode>> {};

TEST_P(BackwardFd, MatchesFiniteDifferences) {
    const auto [pv, mode] = GetParam();
    const PExponent p(pv);
    auto net = oracle::random_net({6, 16, 16, 4}, 12, p);
    net.mode = mode;
    const auto x = oracle::random_batch<double>(5, 6, 13);
    const auto c = oracle::random_batch<double>(5, 4, 14);

    auto res = ldn::forward(net, x, true);
    const auto grads = ldn::backward(net, *res.trace, c, true);

    auto loss_of = [&](const DistanceNet<double>& n, const Tensor<double>& in) {
        auto copy = n;
        return weighted_sum(ldn::forward(copy, in).logits, c);
    };
    auto params = ldn::parameter_views(net);
    auto gviews = ldn::gradient_views(grads);
    const double h = 1e-6;
    std::vector<double> analytic, numeric;
    for (std::size_t t = 0; t < params.size(); ++t) {
        for (std::size_t k = 0; k < params[t].size(); ++k) {
            const double v0 = params[t][k];
            params[t][k] = v0 + h;
            const double fp = loss_of(net, x);
            params[t][k] = v0 - h;
            const double fm = loss_of(net, x);
            params[t][k] = v0;
            analytic.push_back(gviews[t][k]);
            numeric.push_back((fp - fm) / (2 * h));
        }
    }
    auto xp = x;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double v0 = xp.flat()[k];
        xp.flat()[k] = v0 + h;
        const double fp = loss_of(net, xp);
        xp.flat()[k] = v0 - h;
        const double fm = loss_of(net, xp);
        xp.flat()[k] = v0;
        analytic.push_back(grads.input.flat()[k]);
        numeric.push_back((fp - fm) / (2 * h));
    }
    EXPECT_LT(oracle::scaled_error(analytic, numeric), 1e-4);
    for (std::size_t i = 0; i < analytic.size(); ++i)
        ASSERT_NEAR(analytic[i], numeric[i], 1e-4 * std::max(1.0, std::abs(numeric[i]))) << "entry " << i;
}

INSTANTIATE_TEST_SUITE_P(PAndMode, BackwardFd,
                         ::testing::Combine(::testing::Values(2.0, 8.0, 64.0),
                                            ::testing::Values(Mode::training, Mode::inference)));

TEST(InitIdentity, NoiselessNetCopiesInputDifferences) {
    auto net = ldn::init_identity<double>({2, 2, 2}, 1, 0.0, PExponent::infinity());
    Tensor<double> x(1, 2, std::vector<double>{0.3, 0.8});
    const auto out = ldn::infer(net, x);
    EXPECT_NEAR(out(0, 1) - out(0, 0), 0.5, 1e-15);
}

TEST(InitIdentity, SeededAndShaped) {
    auto a = ldn::init_identity<float>({10, 8, 3}, 42);
    auto b = ldn::init_identity<float>({10, 8, 3}, 42);
    auto c = ldn::init_identity<float>({10, 8, 3}, 43);
    EXPECT_EQ(a.layers, b.layers);
    EXPECT_NE(a.layers, c.layers);
    EXPECT_EQ(a.temperature, 1.0);
    EXPECT_EQ(a.p, PExponent(8));
    EXPECT_THROW(ldn::init_identity<float>({}, 1), ldn::InvalidArgument);
    EXPECT_THROW(ldn::init_identity<float>({4, 2}, 1, -1.0), ldn::InvalidArgument);
}

TEST(InitIdentity, FullWidthShapes) {
    auto net = ldn::init_identity<float>({3072, 5120, 5120, 10}, 1, 0.05, PExponent(8));
    EXPECT_EQ(net.dims(), (std::vector<std::size_t>{3072, 5120, 5120, 10}));
    EXPECT_NO_THROW(net.validate());
}

TEST(LipschitzUpperBound, ClosedForms) {
    EXPECT_NEAR(ldn::lipschitz_upper_bound({3072, 5120, 5120, 5120, 5120, 5120, 10}, PExponent(8)), 568.0, 1.0);
    auto small = oracle::random_net({16, 16, 3}, 1, PExponent(4));
    EXPECT_NEAR(ldn::lipschitz_upper_bound(small), 4.0, 1e-12);
    small.p = PExponent::infinity();
    EXPECT_EQ(ldn::lipschitz_upper_bound(small), 1.0);
}

TEST(LipschitzProperty, InfinityNetIsOneLipschitz) {
    auto net = oracle::random_net({12, 32, 32, 5}, 21, PExponent::infinity());
    std::mt19937_64 rng(22);
    std::uniform_real_distribution<double> u(0.0, 1.0), scale(1e-3, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        Tensor<double> a(1, 12), b(1, 12);
        const double s = scale(rng);
        for (std::size_t k = 0; k < 12; ++k) {
            a(0, k) = u(rng);
            b(0, k) = std::clamp(a(0, k) + s * (2 * u(rng) - 1), 0.0, 1.0);
        }
        const auto ga = ldn::infer(net, a), gb = ldn::infer(net, b);
        ASSERT_LE(linf_rows(ga, 0, gb, 0), linf_rows(a, 0, b, 0) + 1e-6);
    }
}

TEST(LipschitzProperty, FinitePNetRespectsProductBound) {
    for (double pv : {2.0, 8.0}) {
        auto net = oracle::random_net({12, 32, 5}, 23, PExponent(pv));
        const double bound = ldn::lipschitz_upper_bound(net);
        std::mt19937_64 rng(24);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int trial = 0; trial < 1000; ++trial) {
            Tensor<double> a(1, 12), b(1, 12);
            for (std::size_t k = 0; k < 12; ++k) {
                a(0, k) = u(rng);
                b(0, k) = u(rng);
            }
            const auto ga = ldn::infer(net, a), gb = ldn::infer(net, b);
            ASSERT_LE(linf_rows(ga, 0, gb, 0), bound * linf_rows(a, 0, b, 0) + 1e-6);
        }
    }
}

TEST(FloatPath, AgreesWithDoublePath) {
    auto netd = oracle::random_net({64, 48, 48, 10}, 31, PExponent(8));
    auto netf = netd.cast<float>();
    auto back = netf.cast<double>();
    const auto x = oracle::random_batch<double>(9, 64, 32);
    const auto xf = x.cast<float>();
    for (double pv : {8.0, 1000.0}) {
        netf.p = back.p = PExponent(pv);
        const auto a = ldn::infer(back, x);
        const auto b = ldn::infer(netf, xf);
        for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a.flat()[k], b.flat()[k], 2e-5 * (1 + std::abs(a.flat()[k])));
    }
}
