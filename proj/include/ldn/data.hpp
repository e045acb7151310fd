#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ldn/error.hpp"
#include "ldn/separation.hpp"
#include "ldn/tensor.hpp"

namespace ldn {

struct Geometry {
    std::size_t channels = 1;
    std::size_t height = 0;
    std::size_t width = 0;

    std::size_t size() const noexcept { return channels * height * width; }
    bool operator==(const Geometry&) const = default;
};

/// n samples in [0,1]^d with integer labels in [0, classes).
struct LabeledDataset {
    Tensor<float> samples;
    std::vector<std::uint32_t> labels;
    std::size_t classes = 0;
    std::optional<Geometry> geometry;  // absent for flat data
    std::string name;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t dim() const noexcept { return samples.cols(); }
    bool empty() const noexcept { return labels.empty(); }

    void validate() const {
        if (samples.rows() != labels.size())
            throw ShapeError("dataset '" + name + "': " + std::to_string(samples.rows()) + " samples but " +
                             std::to_string(labels.size()) + " labels");
        if (geometry && geometry->size() != samples.cols())
            throw ShapeError("dataset '" + name + "': geometry does not match sample width");
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] >= classes)
                throw FormatError("dataset '" + name + "': label " + std::to_string(labels[i]) + " at index " +
                                  std::to_string(i) + " is outside [0, " + std::to_string(classes) + ")");
        for (float v : samples.flat())
            if (!(v >= 0.0f && v <= 1.0f)) throw FormatError("dataset '" + name + "': sample entry outside [0, 1]");
    }

    SeparationReport separation(std::size_t limit = 0) const { return r_separation(samples, labels, limit); }
};

/// Rows `indices` of `data`, in that order.
inline LabeledDataset select(const LabeledDataset& data, const std::vector<std::size_t>& indices) {
    LabeledDataset out;
    out.classes = data.classes;
    out.geometry = data.geometry;
    out.name = data.name;
    out.samples = Tensor<float>(indices.size(), data.dim());
    out.labels.reserve(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] >= data.size()) throw InvalidArgument("select: index out of range");
        std::ranges::copy(data.samples.row(indices[r]), out.samples.row(r).begin());
        out.labels.push_back(data.labels[indices[r]]);
    }
    return out;
}

/// The first min(n, size) samples.
inline LabeledDataset take(const LabeledDataset& data, std::size_t n) {
    std::vector<std::size_t> idx(std::min(n, data.size()));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return select(data, idx);
}

/// The first n samples and the rest.
inline std::pair<LabeledDataset, LabeledDataset> split_at(const LabeledDataset& data, std::size_t n) {
    n = std::min(n, data.size());
    std::vector<std::size_t> head(n), tail(data.size() - n);
    std::iota(head.begin(), head.end(), std::size_t{0});
    std::iota(tail.begin(), tail.end(), n);
    return {select(data, head), select(data, tail)};
}

/// A seeded random subset of min(n, size) samples, kept in original order.
inline LabeledDataset sample(const LabeledDataset& data, std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(n, data.size()));
    std::ranges::sort(idx);
    return select(data, idx);
}

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failure on " + path.string());
    return bytes;
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off, const std::string& what) {
    if (off + 4 > b.size()) throw FormatError(what + ": truncated header");
    return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) | (std::uint32_t(b[off + 2]) << 8) |
           std::uint32_t(b[off + 3]);
}

inline std::string hex32(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08x", v);
    return buf;
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// MNIST IDX pair. Pixels are scaled by 1/255.
inline LabeledDataset load_mnist(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto img = detail::read_file(images_path);
    const auto lab = detail::read_file(labels_path);
    const std::string iname = images_path.string(), lname = labels_path.string();

    const auto imagic = detail::read_be32(img, 0, iname);
    if (imagic != kIdxImagesMagic)
        throw FormatError(iname + ": bad magic " + detail::hex32(imagic) + " (expected 0x00000803)");
    const auto lmagic = detail::read_be32(lab, 0, lname);
    if (lmagic != kIdxLabelsMagic)
        throw FormatError(lname + ": bad magic " + detail::hex32(lmagic) + " (expected 0x00000801)");

    const std::size_t n = detail::read_be32(img, 4, iname);
    const std::size_t rows = detail::read_be32(img, 8, iname);
    const std::size_t cols = detail::read_be32(img, 12, iname);
    const std::size_t nl = detail::read_be32(lab, 4, lname);
    if (n != nl)
        throw FormatError("count mismatch: " + iname + " has " + std::to_string(n) + " images, " + lname + " has " +
                          std::to_string(nl) + " labels");
    const std::size_t d = rows * cols;
    if (img.size() < 16 + n * d)
        throw FormatError(iname + ": truncated pixel data (" + std::to_string(img.size()) + " bytes, expected " +
                          std::to_string(16 + n * d) + ")");
    if (lab.size() < 8 + n)
        throw FormatError(lname + ": truncated label data (" + std::to_string(lab.size()) + " bytes, expected " +
                          std::to_string(8 + n) + ")");

    LabeledDataset out;
    out.name = "mnist";
    out.classes = 10;
    out.geometry = Geometry{1, rows, cols};
    out.samples = Tensor<float>(n, d);
    out.labels.resize(n);
    auto flat = out.samples.flat();
    for (std::size_t k = 0; k < n * d; ++k) flat[k] = static_cast<float>(img[16 + k]) / 255.0f;
    for (std::size_t i = 0; i < n; ++i) {
        if (lab[8 + i] > 9)
            throw FormatError(lname + ": label byte " + std::to_string(lab[8 + i]) + " at index " + std::to_string(i));
        out.labels[i] = lab[8 + i];
    }
    return out;
}

inline constexpr std::size_t kCifarRecord = 3073;

/// CIFAR-10 binary batches (1 label byte + 3072 channel-major pixel bytes per record).
inline LabeledDataset load_cifar10(const std::vector<std::filesystem::path>& batch_paths) {
    if (batch_paths.empty()) throw InvalidArgument("load_cifar10: no batch files given");
    std::vector<std::vector<unsigned char>> files;
    std::size_t n = 0;
    for (const auto& p : batch_paths) {
        files.push_back(detail::read_file(p));
        if (files.back().size() % kCifarRecord != 0)
            throw FormatError(p.string() + ": size " + std::to_string(files.back().size()) +
                              " is not a multiple of 3073");
        n += files.back().size() / kCifarRecord;
    }
    LabeledDataset out;
    out.name = "cifar10";
    out.classes = 10;
    out.geometry = Geometry{3, 32, 32};
    out.samples = Tensor<float>(n, 3072);
    out.labels.resize(n);
    std::size_t r = 0;
    for (std::size_t f = 0; f < files.size(); ++f) {
        const auto& b = files[f];
        for (std::size_t off = 0; off < b.size(); off += kCifarRecord, ++r) {
            if (b[off] > 9)
                throw FormatError(batch_paths[f].string() + ": label byte " + std::to_string(b[off]) + " in record " +
                                  std::to_string(off / kCifarRecord));
            out.labels[r] = b[off];
            auto row = out.samples.row(r);
            for (std::size_t k = 0; k < 3072; ++k) row[k] = static_cast<float>(b[off + 1 + k]) / 255.0f;
        }
    }
    return out;
}

/// K clusters of n_per_class points in [0,1]^d whose classes are at least
/// 2 * min_separation apart in l_inf. Centres sit on a grid of spacing
/// 2 * (min_separation + jitter); points are centre + U[-jitter, jitter]^d.
inline LabeledDataset gen_synthetic(std::size_t n_per_class, std::size_t classes, std::size_t d,
                                    double min_separation, std::uint64_t seed, double jitter = -1.0) {
    if (n_per_class == 0 || classes < 2 || d == 0) throw InvalidArgument("gen_synthetic: need n >= 1, K >= 2, d >= 1");
    if (!(min_separation > 0.0)) throw InvalidArgument("gen_synthetic: min_separation must be positive");
    if (jitter < 0.0) jitter = min_separation / 4.0;
    // a hair above the exact spacing so float rounding never closes the gap
    const double spacing = 2.0 * (min_separation + jitter) * (1.0 + 1e-6);
    const double span = 1.0 - 2.0 * jitter;
    const std::size_t per_axis = span < 0.0 ? 0 : static_cast<std::size_t>(std::floor(span / spacing)) + 1;
    double cells = 1.0;
    for (std::size_t k = 0; k < d && cells < static_cast<double>(classes); ++k) cells *= static_cast<double>(per_axis);
    if (per_axis == 0 || cells < static_cast<double>(classes))
        throw InvalidArgument("gen_synthetic: cannot pack " + std::to_string(classes) + " classes in [0,1]^" +
                              std::to_string(d) + " at separation " + std::to_string(min_separation));

    std::mt19937_64 rng(seed);
    // cells are chosen among the first `pool` grid points along the leading axes
    std::size_t pool = 1, axes = 0;
    while (pool < classes) {
        pool *= per_axis;
        ++axes;
    }
    pool = std::max<std::size_t>(pool, 1);
    std::vector<std::size_t> cell_ids(pool);
    std::iota(cell_ids.begin(), cell_ids.end(), std::size_t{0});
    std::shuffle(cell_ids.begin(), cell_ids.end(), rng);

    const double offset = jitter + 0.5 * (span - spacing * static_cast<double>(per_axis - 1));
    std::vector<std::vector<double>> centres(classes, std::vector<double>(d));
    for (std::size_t c = 0; c < classes; ++c) {
        std::size_t id = cell_ids[c];
        for (std::size_t k = 0; k < d; ++k) {
            if (k < axes) {
                centres[c][k] = offset + spacing * static_cast<double>(id % per_axis);
                id /= per_axis;
            } else {
                centres[c][k] = 0.5;
            }
        }
    }

    LabeledDataset out;
    out.name = "synth";
    out.classes = classes;
    out.samples = Tensor<float>(n_per_class * classes, d);
    out.labels.resize(n_per_class * classes);
    std::uniform_real_distribution<double> noise(-jitter, jitter);
    std::size_t r = 0;
    for (std::size_t i = 0; i < n_per_class; ++i)
        for (std::size_t c = 0; c < classes; ++c, ++r) {
            out.labels[r] = static_cast<std::uint32_t>(c);
            for (std::size_t k = 0; k < d; ++k)
                out.samples(r, k) = static_cast<float>(std::clamp(centres[c][k] + noise(rng), 0.0, 1.0));
        }
    const auto sep = out.separation();
    if (!(sep.r >= min_separation))
        throw NumericError("gen_synthetic: generated data has r = " + std::to_string(sep.r) + " < " +
                           std::to_string(min_separation));
    return out;
}

}  // namespace ldn
