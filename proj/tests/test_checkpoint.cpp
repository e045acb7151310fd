#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "ldn/checkpoint.hpp"

namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("ldn_ckpt_" + name); }

ldn::DistanceNet<float> sample_net() {
    auto net = ldn::init_identity<float>({7, 5, 3}, 99, 0.05, ldn::PExponent(8.5));
    for (auto& l : net.layers)
        for (std::size_t i = 0; i < l.outputs(); ++i) {
            l.bias[i] = 0.01f * static_cast<float>(i) - 0.3f;
            l.running_mean[i] = 0.7f + 1e-3f * static_cast<float>(i);
        }
    net.temperature = 3.25;
    return net;
}

std::vector<char> bytes_of(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::vector<char>& b) {
    std::ofstream out(p, std::ios::binary);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

bool same_bits(float a, float b) { return std::memcmp(&a, &b, sizeof a) == 0; }

}  // namespace

TEST(Checkpoint, RoundTripIsBitwise) {
    const auto net = sample_net();
    const auto path = temp_file("roundtrip.bin");
    ldn::save_checkpoint(net, path);
    const auto back = ldn::load_checkpoint(path);
    ASSERT_EQ(back.dims(), net.dims());
    for (std::size_t l = 0; l < net.depth(); ++l) {
        for (std::size_t k = 0; k < net.layers[l].weights.size(); ++k)
            EXPECT_TRUE(same_bits(back.layers[l].weights.flat()[k], net.layers[l].weights.flat()[k]));
        for (std::size_t i = 0; i < net.layers[l].outputs(); ++i) {
            EXPECT_TRUE(same_bits(back.layers[l].bias[i], net.layers[l].bias[i]));
            EXPECT_TRUE(same_bits(back.layers[l].running_mean[i], net.layers[l].running_mean[i]));
        }
    }
    EXPECT_EQ(back.p.value(), 8.5);
    EXPECT_EQ(back.temperature, 3.25);
    // re-encoding reproduces the file byte for byte
    EXPECT_EQ(ldn::encode_checkpoint(back), bytes_of(path));
    fs::remove(path);
}

TEST(Checkpoint, InfiniteExponentSurvives) {
    auto net = sample_net();
    net.p = ldn::PExponent::infinity();
    const auto back = ldn::decode_checkpoint(ldn::encode_checkpoint(net));
    EXPECT_TRUE(back.p.is_infinite());
    EXPECT_EQ(back.p.value(), std::numeric_limits<double>::infinity());
}

TEST(Checkpoint, HeaderLayout) {
    const auto bytes = ldn::encode_checkpoint(sample_net());
    ASSERT_GE(bytes.size(), 24u);
    EXPECT_EQ(std::string(bytes.data(), 4), "LDN2");
    std::uint32_t v[5];
    std::memcpy(v, bytes.data() + 4, sizeof v);
    EXPECT_EQ(v[0], 1u);  // version
    EXPECT_EQ(v[1], 2u);  // layers
    EXPECT_EQ(v[2], 7u);  // input dim
    EXPECT_EQ(v[3], 5u);
    EXPECT_EQ(v[4], 3u);
    const std::size_t params = 5 * 7 + 5 + 5 + 3 * 5 + 3 + 3;
    EXPECT_EQ(bytes.size(), 4 + 4 * 5 + 4 * params + 16);
}

TEST(Checkpoint, TruncationNamesSection) {
    const auto bytes = ldn::encode_checkpoint(sample_net());
    auto expect_section = [&](std::size_t keep, const std::string& section) {
        std::vector<char> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(keep));
        try {
            ldn::decode_checkpoint(cut);
            ADD_FAILURE() << "no error for " << keep << " bytes";
        } catch (const ldn::FormatError& e) {
            EXPECT_NE(std::string(e.what()).find(section), std::string::npos) << e.what();
        }
    };
    expect_section(2, "magic");
    expect_section(6, "format version");
    expect_section(22, "width of layer 1");
    expect_section(30, "layer 0 weights");
    expect_section(bytes.size() - 12, "p exponent");
    expect_section(bytes.size() - 4, "temperature");
}

TEST(Checkpoint, BadMagicVersionAndOverflow) {
    auto bytes = ldn::encode_checkpoint(sample_net());
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(ldn::decode_checkpoint(bad), ldn::FormatError);
    bad = bytes;
    bad[4] = 2;
    try {
        ldn::decode_checkpoint(bad);
        ADD_FAILURE();
    } catch (const ldn::FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
    }
    bad = bytes;
    const std::uint32_t huge = 0xFFFFFFFFu;
    std::memcpy(bad.data() + 16, &huge, 4);
    try {
        ldn::decode_checkpoint(bad);
        ADD_FAILURE();
    } catch (const ldn::FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("overflow"), std::string::npos);
    }
    bad = bytes;
    bad.push_back(0);
    EXPECT_THROW(ldn::decode_checkpoint(bad), ldn::FormatError);
}

TEST(Checkpoint, IoErrors) {
    EXPECT_THROW(ldn::load_checkpoint("/nonexistent/dir/x.bin"), ldn::IoError);
    EXPECT_THROW(ldn::save_checkpoint(sample_net(), "/nonexistent/dir/x.bin"), ldn::IoError);
    const auto path = temp_file("trunc.bin");
    write_bytes(path, {'L', 'D'});
    EXPECT_THROW(ldn::load_checkpoint(path), ldn::FormatError);
    fs::remove(path);
}
