#include <gtest/gtest.h>

#include <random>

#include "ldn/certify.hpp"
#include "ldn/construct.hpp"
#include "oracles.hpp"

using ldn::Tensor;

namespace {

const std::filesystem::path kMnist = LDN_MNIST_DIR;

ldn::LabeledDataset toy() {
    ldn::LabeledDataset d;
    d.classes = 2;
    d.samples = Tensor<float>(2, 2, std::vector<float>{0, 0, 1, 1});
    d.labels = {0, 1};
    return d;
}

std::optional<ldn::LabeledDataset> mnist_subset(std::size_t n) {
    const auto img = kMnist / "train-images-idx3-ubyte", lab = kMnist / "train-labels-idx1-ubyte";
    if (!std::filesystem::exists(img) || !std::filesystem::exists(lab)) return std::nullopt;
    return ldn::take(ldn::load_mnist(img, lab), n);
}

template <typename T>
Tensor<T> probes(const ldn::LabeledDataset& data, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    std::uniform_real_distribution<double> noise(-0.2, 0.2);
    const double hi = ldn::domain_bound(data);
    Tensor<T> x(n, data.dim());
    for (std::size_t r = 0; r < n; ++r) {
        const auto src = data.samples.row(pick(rng));
        for (std::size_t k = 0; k < data.dim(); ++k)
            x(r, k) = static_cast<T>(std::clamp(static_cast<double>(src[k]) + noise(rng), 0.0, hi));
    }
    return x;
}

}  // namespace

TEST(TwoLayer, ToyOutputsAndMargin) {
    const auto d = toy();
    const auto net = ldn::build_two_layer<double>(d);
    Tensor<double> x(2, 2, std::vector<double>{0, 0, 1, 1});
    const auto z = ldn::infer(net, x);
    EXPECT_EQ(z(0, 0), 0.0);
    EXPECT_EQ(z(0, 1), -1.0);
    EXPECT_EQ(ldn::margin(std::span<const double>(z.row(0)), 0), 1.0);
    EXPECT_EQ(ldn::margin(std::span<const double>(z.row(1)), 1), 1.0);
    EXPECT_EQ(ldn::r_separation(d).r, 0.5);
}

TEST(TwoLayer, EmptyClassRejected) {
    auto d = toy();
    d.classes = 4;
    try {
        ldn::build_two_layer(d);
        ADD_FAILURE();
    } catch (const ldn::InvalidArgument& e) {
        EXPECT_NE(std::string(e.what()).find("2, 3"), std::string::npos) << e.what();
    }
}

TEST(TwoLayer, OutputsAreNegatedClassDistances) {
    const auto d = ldn::gen_synthetic(15, 4, 7, 0.04, 1);
    const auto net = ldn::build_two_layer<double>(d);
    const auto xf = probes<float>(d, 100, 2);
    const auto x = xf.cast<double>();
    const auto z = ldn::infer(net, x);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto ref = oracle::nearest_class_distances(d, xf.row(r));
        for (std::size_t j = 0; j < d.classes; ++j) {
            EXPECT_NEAR(z(r, j), ref[j], 1e-12);
            EXPECT_LE(z(r, j), 0.0);
        }
    }
}

TEST(TwoLayer, MnistMatchesBruteForceNearestNeighbour) {
    const auto d = mnist_subset(500);
    if (!d) GTEST_SKIP() << "MNIST files not present";
    const auto net = ldn::build_two_layer<float>(*d);
    const auto x = probes<float>(*d, 100, 3);
    const auto z = ldn::infer(net, x);
    double worst = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto ref = oracle::nearest_class_distances(*d, x.row(r));
        for (std::size_t j = 0; j < d->classes; ++j) worst = std::max(worst, std::abs(z(r, j) - ref[j]));
    }
    EXPECT_LT(worst, 1e-5);
}

TEST(TwoLayer, CertifiesEverySeparatedPointAtR) {
    const auto d = ldn::gen_synthetic(20, 3, 4, 0.07, 4);
    const auto net = ldn::build_two_layer<double>(d);
    const double r = ldn::r_separation(d).r;
    const auto z = ldn::infer(net, d.samples.cast<double>());
    for (std::size_t i = 0; i < d.size(); ++i) {
        EXPECT_EQ(z(i, d.labels[i]), 0.0);
        for (std::size_t j = 0; j < d.classes; ++j)
            if (j != d.labels[i]) {
                EXPECT_LE(z(i, j), -2 * r);
            }
    }
    EXPECT_EQ(ldn::certified_accuracy(net, d, std::nextafter(r, 0.0)).cert_acc, 1.0);
}

TEST(TwoLayer, OneLipschitzAndBoundedDrift) {
    const auto d = ldn::gen_synthetic(10, 2, 5, 0.05, 5);
    const auto net = ldn::build_two_layer<double>(d);
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(-0.05, 0.05);
    const auto base = ldn::infer(net, d.samples.cast<double>());
    for (std::size_t i = 0; i < d.size(); ++i) {
        Tensor<double> x(1, 5);
        double dn = 0.0;
        for (std::size_t k = 0; k < 5; ++k) {
            const double delta = u(rng);
            x(0, k) = d.samples(i, k) + delta;
            dn = std::max(dn, std::abs(delta));
        }
        const auto z = ldn::infer(net, x);
        for (std::size_t j = 0; j < 2; ++j) EXPECT_LE(std::abs(z(0, j) - base(i, j)), dn + 1e-12);
    }
}

class MultiLayer : public ::testing::TestWithParam<std::size_t> {};

TEST_P(MultiLayer, MatchesTwoLayerExactlyInDouble) {
    const std::size_t layers = GetParam();
    const auto d = ldn::gen_synthetic(7, 3, 4, 0.05, 7);
    const auto two = ldn::build_two_layer<double>(d);
    const auto multi = ldn::build_multi_layer<double>(d, layers);
    EXPECT_EQ(multi.depth(), layers);
    const std::size_t width = (d.size() + layers - 2) / (layers - 1) + d.classes + 2 * d.dim();
    for (std::size_t l = 0; l + 1 < layers; ++l) EXPECT_EQ(multi.layers[l].outputs(), width);
    const auto on_data = d.samples.cast<double>();
    EXPECT_EQ(ldn::infer(multi, on_data), ldn::infer(two, on_data));
    const auto off_data = probes<double>(d, 50, 8);
    const auto a = ldn::infer(multi, off_data), b = ldn::infer(two, off_data);
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a.flat()[k], b.flat()[k], 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Depths, MultiLayer, ::testing::Values(2, 3, 4, 6, 22, 40));

TEST(MultiLayerBuilder, MnistFourLayersFloat) {
    const auto d = mnist_subset(200);
    if (!d) GTEST_SKIP() << "MNIST files not present";
    const auto two = ldn::build_two_layer<float>(*d);
    const auto multi = ldn::build_multi_layer<float>(*d, 4);
    EXPECT_EQ(multi.layers[0].outputs(), 67u + 10u + 2u * 784u);
    const auto x = d->samples;
    const auto a = ldn::infer(multi, x), b = ldn::infer(two, x);
    double worst = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(double(a.flat()[k]) - b.flat()[k]));
    EXPECT_LT(worst, 1e-4);
}

TEST(MultiLayerBuilder, Errors) {
    EXPECT_THROW(ldn::build_multi_layer(toy(), 1), ldn::InvalidArgument);
    ldn::LabeledDataset empty;
    empty.classes = 2;
    EXPECT_THROW(ldn::build_multi_layer(empty, 3), ldn::InvalidArgument);
}

TEST(MultiLayerBuilder, PassesLipschitzCheck) {
    const auto d = ldn::gen_synthetic(6, 2, 3, 0.1, 9);
    const auto net = ldn::build_multi_layer<double>(d, 3);
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> u(0.0, ldn::domain_bound(d));
    for (int t = 0; t < 1000; ++t) {
        Tensor<double> a(1, 3), b(1, 3);
        double dx = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
            a(0, k) = u(rng);
            b(0, k) = u(rng);
            dx = std::max(dx, std::abs(a(0, k) - b(0, k)));
        }
        const auto za = ldn::infer(net, a), zb = ldn::infer(net, b);
        for (std::size_t j = 0; j < 2; ++j) ASSERT_LE(std::abs(za(0, j) - zb(0, j)), dx + 1e-6);
    }
}
