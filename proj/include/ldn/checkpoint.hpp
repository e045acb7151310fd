#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "ldn/error.hpp"
#include "ldn/network.hpp"

namespace ldn {

inline constexpr char kCheckpointMagic[4] = {'L', 'D', 'N', '2'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kMaxLayerWidth = 1u << 24;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace detail {

class ByteWriter {
public:
    template <typename V>
    void put(V v) {
        const auto* p = reinterpret_cast<const char*>(&v);
        bytes_.insert(bytes_.end(), p, p + sizeof(V));
    }
    template <typename V, typename Range>
    void put_all(const Range& r) {
        for (auto v : r) put(static_cast<V>(v));
    }
    const std::vector<char>& bytes() const noexcept { return bytes_; }

private:
    std::vector<char> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::vector<char> bytes, std::string origin) : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

    template <typename V>
    V get(const std::string& section) {
        if (pos_ + sizeof(V) > bytes_.size())
            throw FormatError(origin_ + ": truncated checkpoint, missing " + section + " at byte offset " +
                              std::to_string(pos_));
        V v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(V));
        pos_ += sizeof(V);
        return v;
    }
    void require(std::size_t n, const std::string& section) const {
        if (bytes_.size() - pos_ < n)
            throw FormatError(origin_ + ": truncated checkpoint, missing " + section + " at byte offset " +
                              std::to_string(pos_));
    }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

private:
    std::vector<char> bytes_;
    std::string origin_;
    std::size_t pos_ = 0;
};

}  // namespace detail

/// Serialise into the LDN2 layout. Parameters are stored as f32.
template <typename T>
std::vector<char> encode_checkpoint(const DistanceNet<T>& net) {
    net.validate();
    detail::ByteWriter w;
    for (char c : kCheckpointMagic) w.put(c);
    w.put(kCheckpointVersion);
    w.put(static_cast<std::uint32_t>(net.depth()));
    w.put(static_cast<std::uint32_t>(net.input_dim()));
    for (const auto& l : net.layers) w.put(static_cast<std::uint32_t>(l.outputs()));
    for (const auto& l : net.layers) {
        w.put_all<float>(l.weights.flat());
        w.put_all<float>(l.bias);
        w.put_all<float>(l.running_mean);
    }
    w.put(net.p.value());
    w.put(net.temperature);
    return w.bytes();
}

inline DistanceNet<float> decode_checkpoint(std::vector<char> bytes, const std::string& origin = "checkpoint") {
    detail::ByteReader r(std::move(bytes), origin);
    char magic[4];
    for (char& c : magic) c = r.get<char>("magic");
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError(origin + ": bad magic (expected \"LDN2\")");
    const auto version = r.get<std::uint32_t>("format version");
    if (version != kCheckpointVersion)
        throw FormatError(origin + ": unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
    const auto depth = r.get<std::uint32_t>("layer count");
    const auto input_dim = r.get<std::uint32_t>("input dimension");
    if (depth == 0 || depth > 4096) throw FormatError(origin + ": implausible layer count " + std::to_string(depth));
    if (input_dim == 0 || input_dim > kMaxLayerWidth)
        throw FormatError(origin + ": input dimension " + std::to_string(input_dim) + " overflows the format limit");
    std::vector<std::uint32_t> widths(depth);
    for (std::uint32_t l = 0; l < depth; ++l) {
        widths[l] = r.get<std::uint32_t>("width of layer " + std::to_string(l));
        if (widths[l] == 0 || widths[l] > kMaxLayerWidth)
            throw FormatError(origin + ": width " + std::to_string(widths[l]) + " of layer " + std::to_string(l) +
                              " overflows the format limit");
    }

    DistanceNet<float> net;
    std::size_t fan_in = input_dim;
    for (std::uint32_t l = 0; l < depth; ++l) {
        const std::string tag = "layer " + std::to_string(l);
        LayerParams<float> layer(widths[l], fan_in);
        r.require(layer.weights.size() * sizeof(float), tag + " weights");
        for (auto& v : layer.weights.flat()) v = r.get<float>(tag + " weights");
        for (auto& v : layer.bias) v = r.get<float>(tag + " bias");
        for (auto& v : layer.running_mean) v = r.get<float>(tag + " running_mean");
        net.layers.push_back(std::move(layer));
        fan_in = widths[l];
    }
    const double p = r.get<double>("p exponent");
    net.p = p == std::numeric_limits<double>::infinity() ? PExponent::infinity() : PExponent(p);
    net.temperature = r.get<double>("temperature");
    if (r.remaining() != 0)
        throw FormatError(origin + ": " + std::to_string(r.remaining()) + " trailing bytes after temperature");
    net.validate();
    return net;
}

template <typename T>
void save_checkpoint(const DistanceNet<T>& net, const std::filesystem::path& path) {
    const auto bytes = encode_checkpoint(net);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failure on " + path.string());
}

inline DistanceNet<float> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(std::move(bytes), path.string());
}

}  // namespace ldn
