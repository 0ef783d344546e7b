#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace bfpkit {

/// Dense row-major tensor of wide floats. Layer math uses the 4-D NCHW
/// layout (weights as [c_out, c_in, kh, kw]); lower-rank data is carried
/// with trailing unit dimensions.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<std::size_t>(numel()), 0.0);
    }
    Tensor(std::vector<int> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<std::int64_t>(data.size()) != numel())
            throw std::invalid_argument("tensor data size does not match shape");
    }

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (int d : shape) {
            if (d < 0) throw std::invalid_argument("negative tensor dimension");
            n *= d;
        }
        return n;
    }

    int rank() const { return static_cast<int>(shape.size()); }

    int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    // 4-D accessors; the tensor must have rank 4.
    double& at(int n, int c, int y, int x) {
        return data[idx4(n, c, y, x)];
    }
    double at(int n, int c, int y, int x) const {
        return data[idx4(n, c, y, x)];
    }

    std::size_t idx4(int n, int c, int y, int x) const {
        return static_cast<std::size_t>(
            ((static_cast<std::int64_t>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x);
    }

    /// Reinterpret under a new shape with identical element count.
    Tensor reshaped(std::vector<int> s) const {
        Tensor t(std::move(s), data);
        return t;
    }
};

inline std::string shape_string(const std::vector<int>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

}  // namespace bfpkit
