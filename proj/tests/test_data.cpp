#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "ldn/certify.hpp"
#include "ldn/data.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kMnist = LDN_MNIST_DIR;

fs::path tmp(const std::string& name) { return fs::temp_directory_path() / ("ldn_data_" + name); }

void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
}

void write(const fs::path& p, const std::vector<unsigned char>& b) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

struct IdxPair {
    fs::path images, labels;
};

IdxPair tiny_idx(std::uint32_t n, std::uint32_t n_labels, std::uint32_t magic = 0x803, std::size_t drop = 0) {
    std::vector<unsigned char> img, lab;
    put_be32(img, magic);
    put_be32(img, n);
    put_be32(img, 2);
    put_be32(img, 3);
    for (std::uint32_t i = 0; i < n * 6; ++i) img.push_back(static_cast<unsigned char>(i * 40));
    img.resize(img.size() - drop);
    put_be32(lab, 0x801);
    put_be32(lab, n_labels);
    for (std::uint32_t i = 0; i < n_labels; ++i) lab.push_back(static_cast<unsigned char>(i % 10));
    IdxPair p{tmp("img.idx"), tmp("lab.idx")};
    write(p.images, img);
    write(p.labels, lab);
    return p;
}

bool have_mnist(const std::string& split) {
    return fs::exists(kMnist / (split + "-images-idx3-ubyte")) && fs::exists(kMnist / (split + "-labels-idx1-ubyte"));
}

ldn::LabeledDataset mnist(const std::string& split) {
    return ldn::load_mnist(kMnist / (split + "-images-idx3-ubyte"), kMnist / (split + "-labels-idx1-ubyte"));
}

}  // namespace

TEST(LoadMnist, TinyFileRoundTrip) {
    const auto p = tiny_idx(2, 2);
    const auto d = ldn::load_mnist(p.images, p.labels);
    EXPECT_EQ(d.size(), 2u);
    EXPECT_EQ(d.dim(), 6u);
    EXPECT_EQ(d.geometry->height, 2u);
    EXPECT_EQ(d.geometry->width, 3u);
    EXPECT_FLOAT_EQ(d.samples(0, 1), 40.0f / 255.0f);
    EXPECT_FLOAT_EQ(d.samples(1, 0), 240.0f / 255.0f);
    EXPECT_EQ(d.labels[1], 1u);
    EXPECT_NO_THROW(d.validate());
}

TEST(LoadMnist, StructuredErrors) {
    auto p = tiny_idx(2, 2, 0x804);
    EXPECT_THROW(ldn::load_mnist(p.images, p.labels), ldn::FormatError);
    p = tiny_idx(2, 3);
    EXPECT_THROW(ldn::load_mnist(p.images, p.labels), ldn::FormatError);
    p = tiny_idx(2, 2, 0x803, 1);
    try {
        ldn::load_mnist(p.images, p.labels);
        ADD_FAILURE();
    } catch (const ldn::FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
    }
    EXPECT_THROW(ldn::load_mnist("/nonexistent/a", "/nonexistent/b"), ldn::IoError);
}

TEST(LoadMnist, BundledSubset) {
    if (!have_mnist("train")) GTEST_SKIP() << "MNIST files not present in " << kMnist;
    const auto d = mnist("train");
    EXPECT_EQ(d.dim(), 784u);
    EXPECT_NO_THROW(d.validate());
    for (float v : d.samples.flat()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
}

TEST(LoadMnist, OfficialTrainingFile) {
    if (!have_mnist("train")) GTEST_SKIP() << "MNIST files not present";
    const auto d = mnist("train");
    if (d.size() != 60000) GTEST_SKIP() << "bundled subset, not the official 60k training file";
    EXPECT_EQ(d.dim(), 784u);
    EXPECT_EQ(d.labels[0], 5u);
}

TEST(LoadMnist, SubsetSeparationAtLeastFullSetValue) {
    if (!have_mnist("train")) GTEST_SKIP() << "MNIST files not present";
    const auto d = ldn::take(mnist("train"), 2000);
    const auto rep = ldn::r_separation(d);
    EXPECT_GE(rep.r, 0.369);
}

TEST(LoadCifar, RecordsAndErrors) {
    std::vector<unsigned char> rec(3073);
    rec[0] = 7;
    for (std::size_t k = 1; k < rec.size(); ++k) rec[k] = static_cast<unsigned char>(k % 256);
    write(tmp("one.bin"), rec);
    const auto d = ldn::load_cifar10({tmp("one.bin")});
    EXPECT_EQ(d.size(), 1u);
    EXPECT_EQ(d.labels[0], 7u);
    EXPECT_EQ(d.dim(), 3072u);
    EXPECT_FLOAT_EQ(d.samples(0, 0), 1.0f / 255.0f);
    EXPECT_EQ(*d.geometry, (ldn::Geometry{3, 32, 32}));

    auto two = rec;
    two.insert(two.end(), rec.begin(), rec.end());
    write(tmp("two.bin"), two);
    EXPECT_EQ(ldn::load_cifar10({tmp("one.bin"), tmp("two.bin")}).size(), 3u);

    rec[0] = 200;
    write(tmp("bad.bin"), rec);
    EXPECT_THROW(ldn::load_cifar10({tmp("bad.bin")}), ldn::FormatError);
    rec.pop_back();
    write(tmp("short.bin"), rec);
    EXPECT_THROW(ldn::load_cifar10({tmp("short.bin")}), ldn::FormatError);
}

TEST(LoadCifar, OfficialBatches) {
    const fs::path dir = LDN_CIFAR_DIR;
    std::vector<fs::path> files;
    for (int i = 1; i <= 5; ++i) files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
    for (const auto& f : files)
        if (!fs::exists(f)) GTEST_SKIP() << "CIFAR-10 batches not present in " << dir;
    const auto d = ldn::load_cifar10(files);
    EXPECT_EQ(d.size(), 50000u);
    EXPECT_GE(ldn::r_separation(ldn::take(d, 1000)).r, 0.106);
}

TEST(Synthetic, SeparationCountAndDeterminism) {
    const auto a = ldn::gen_synthetic(100, 2, 2, 0.15, 7);
    EXPECT_EQ(a.size(), 200u);
    EXPECT_GE(ldn::r_separation(a).r, 0.15);
    EXPECT_NO_THROW(a.validate());
    const auto b = ldn::gen_synthetic(100, 2, 2, 0.15, 7);
    EXPECT_EQ(a.samples, b.samples);
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_NE(ldn::gen_synthetic(100, 2, 2, 0.15, 8).samples, a.samples);
}

TEST(Synthetic, ManyClassesAndInfeasible) {
    const auto d = ldn::gen_synthetic(20, 10, 8, 0.05, 1);
    EXPECT_GE(ldn::r_separation(d).r, 0.05);
    EXPECT_THROW(ldn::gen_synthetic(10, 5, 1, 0.2, 1), ldn::InvalidArgument);
    EXPECT_THROW(ldn::gen_synthetic(10, 2, 2, 0.6, 1), ldn::InvalidArgument);
}

TEST(Subsets, TakeSelectSample) {
    const auto d = ldn::gen_synthetic(10, 3, 4, 0.05, 2);
    EXPECT_EQ(ldn::take(d, 5).size(), 5u);
    EXPECT_EQ(ldn::take(d, 500).size(), 30u);
    const auto s = ldn::select(d, {4, 2});
    EXPECT_EQ(s.labels[0], d.labels[4]);
    EXPECT_EQ(ldn::sample(d, 7, 3).labels, ldn::sample(d, 7, 3).labels);
    EXPECT_THROW(ldn::select(d, {99}), ldn::InvalidArgument);
}

TEST(RSeparation, TwoPointsAndErrors) {
    ldn::LabeledDataset d;
    d.classes = 2;
    d.samples = ldn::Tensor<float>(2, 2, std::vector<float>{0.1f, 0.5f, 0.5f, 0.25f});
    d.labels = {0, 1};
    EXPECT_NEAR(ldn::r_separation(d).r, 0.2, 1e-7);
    d.labels = {1, 1};
    EXPECT_THROW(ldn::r_separation(d), ldn::InvalidArgument);
}

TEST(RSeparation, EarlyExitMatchesBruteForceAndSubsetMonotone) {
    const auto d = ldn::gen_synthetic(40, 4, 6, 0.03, 11, 0.2);
    const auto rep = ldn::r_separation(d);
    EXPECT_DOUBLE_EQ(rep.r, oracle::brute_force_r(d));
    EXPECT_DOUBLE_EQ(oracle::linf(d.samples.row(rep.first), d.samples.row(rep.second)) / 2.0, rep.r);
    EXPECT_GE(ldn::r_separation(d, 50).r, rep.r);
    EXPECT_EQ(ldn::r_separation(d, 50).samples_examined, 50u);
}
