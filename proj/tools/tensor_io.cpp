#include "tensor_io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace bfpkit::cli {

namespace {

constexpr char kMagic[4] = {'B', 'T', 'S', 'R'};
constexpr std::uint32_t kVersion = 1;

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error("truncated tensor file");
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

void write_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

Tensor read_text_tensor(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open tensor file: " + path);
    std::string first;
    if (!std::getline(in, first)) throw std::runtime_error("empty tensor file: " + path);
    std::istringstream dims_in(first);
    std::vector<int> dims;
    int d = 0;
    while (dims_in >> d) {
        if (d < 1) throw std::runtime_error("bad dimension in tensor file: " + path);
        dims.push_back(d);
    }
    if (dims.empty() || dims.size() > 4)
        throw std::runtime_error("tensor file needs 1 to 4 dimensions: " + path);
    while (dims.size() < 4) dims.insert(dims.begin(), 1);

    Tensor t(dims);
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        if (!(in >> t.data[i]))
            throw std::runtime_error("tensor file ends before " +
                                     std::to_string(t.data.size()) + " values: " + path);
    }
    return t;
}

}  // namespace

Tensor read_tensor_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open tensor file: " + path);
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) return read_text_tensor(path);

    if (read_u32(in) != kVersion)
        throw std::runtime_error("unsupported tensor file version: " + path);
    const std::uint32_t rank = read_u32(in);
    if (rank < 1 || rank > 4) throw std::runtime_error("bad tensor rank in " + path);
    std::vector<int> dims(rank);
    for (auto& d : dims) {
        d = static_cast<int>(read_u32(in));
        if (d < 1) throw std::runtime_error("bad tensor dimension in " + path);
    }
    while (dims.size() < 4) dims.insert(dims.begin(), 1);
    Tensor t(dims);
    for (double& v : t.data) {
        unsigned char b[8];
        if (!in.read(reinterpret_cast<char*>(b), 8))
            throw std::runtime_error("truncated tensor payload in " + path);
        std::uint64_t u = 0;
        for (int i = 7; i >= 0; --i) u = (u << 8) | b[i];
        std::memcpy(&v, &u, 8);
    }
    return t;
}

void write_tensor_file(const std::string& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot create tensor file: " + path);
    out.write(kMagic, 4);
    write_u32(out, kVersion);
    write_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) write_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.data) {
        std::uint64_t u = 0;
        std::memcpy(&u, &v, 8);
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
        out.write(reinterpret_cast<const char*>(b), 8);
    }
    if (!out) throw std::runtime_error("failed writing tensor file: " + path);
}

}  // namespace bfpkit::cli
