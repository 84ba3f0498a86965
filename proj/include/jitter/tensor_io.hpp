#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "jitter/tensor.hpp"

namespace jitter {

// "JTT1" tensor file: magic, u32 rank, u32 dims[rank], f32 little-endian
// payload in row-major order. Values are stored at f32 precision regardless
// of in-memory precision.

inline void write_jtt1(const std::string& path, const std::vector<int>& shape,
                       const std::vector<double>& data) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_jtt1: cannot open " + path);
    f.write("JTT1", 4);
    const std::uint32_t rank = static_cast<std::uint32_t>(shape.size());
    f.write(reinterpret_cast<const char*>(&rank), 4);
    for (int d : shape) {
        const std::uint32_t u = static_cast<std::uint32_t>(d);
        f.write(reinterpret_cast<const char*>(&u), 4);
    }
    std::vector<float> payload(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) payload[i] = static_cast<float>(data[i]);
    f.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (!f) throw std::runtime_error("write_jtt1: write failed for " + path);
}

inline void write_jtt1(const std::string& path, const Tensor& t) {
    write_jtt1(path, t.shape, t.data);
}

inline TensorPtr read_jtt1(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_jtt1: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "JTT1", 4) != 0)
        throw std::runtime_error("read_jtt1: bad magic in " + path);
    std::uint32_t rank = 0;
    f.read(reinterpret_cast<char*>(&rank), 4);
    if (!f || rank > 8) throw std::runtime_error("read_jtt1: bad rank in " + path);
    std::vector<int> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
        std::uint32_t u = 0;
        f.read(reinterpret_cast<char*>(&u), 4);
        d = static_cast<int>(u);
        n *= u;
    }
    std::vector<float> payload(n);
    f.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!f) throw std::runtime_error("read_jtt1: truncated payload in " + path);
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<double>(payload[i]);
    return tensor(std::move(shape), std::move(data));
}

}  // namespace jitter
