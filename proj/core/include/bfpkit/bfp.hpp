#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "bfpkit/formats.hpp"
#include "bfpkit/tensor.hpp"

namespace bfpkit::bfp {

/// Reserved shared-exponent value marking a block whose elements are all
/// zero. Such a block dequantizes to zeros and dots to zero.
inline constexpr int kZeroBlockExponent = std::numeric_limits<int>::min();

/// Sign/mantissa/exponent split of a finite nonzero float:
/// value == sign * mantissa * 2^exponent with mantissa in [1, 2).
struct FloatDecomposition {
    int sign = 1;  // +1 or -1
    double mantissa = 1.0;
    int exponent = 0;
};

/// Conversion statistics: how many nonzero inputs had their mantissa
/// shifted/rounded to exactly zero. True zeros and padding never count.
struct ZseStats {
    std::int64_t total_elements = 0;
    std::int64_t zse_count = 0;

    double ratio() const {
        return total_elements == 0 ? 0.0
                                   : static_cast<double>(zse_count) /
                                         static_cast<double>(total_elements);
    }
    ZseStats& operator+=(const ZseStats& o) {
        total_elements += o.total_elements;
        zse_count += o.zse_count;
        return *this;
    }
};

/// A group of sign+mantissa integers sharing one exponent. Mantissas are
/// clamped symmetrically to +/-(2^(w-1)-1); element i decodes to
/// mantissas[i] * 2^(exponent - (bits(width)-2)). Storage may be padded
/// past logical_len with zero mantissas.
struct BfpBlock {
    int exponent = kZeroBlockExponent;
    std::vector<std::int32_t> mantissas;
    MantissaWidth width = MantissaWidth::w8;
    int logical_len = 0;

    bool all_zero() const { return exponent == kZeroBlockExponent; }

    /// Exponent applied to a raw mantissa when decoding.
    int scale_exponent() const { return exponent - (bits(width) - 2); }
};

/// A logically shaped tensor partitioned into exponent-sharing blocks.
/// Blocks tile the channel dimension in groups of block_shape.depth and
/// the spatial plane in block_shape.kh x block_shape.kw patches; they
/// never span the outermost dimension. Block storage is zero-padded at
/// partial tiles; padding is excluded from logical_len and ZSE counts.
struct BfpTensor {
    std::vector<int> shape;  // {outer, channels, height, width}
    BlockShape block_shape;
    MantissaWidth width = MantissaWidth::w8;
    ZseStats zse;
    std::vector<BfpBlock> blocks;

    int cgroups = 0;  // ceil(channels / depth)
    int ytiles = 0;   // ceil(height / kh)
    int xtiles = 0;   // ceil(width / kw)

    const BfpBlock& block_at(int outer, int cg, int ty, int tx) const {
        return blocks[static_cast<std::size_t>(
            ((static_cast<std::int64_t>(outer) * cgroups + cg) * ytiles + ty) * xtiles + tx)];
    }

    /// Index of element (c_local, dy, dx) inside a block's mantissa array.
    int elem_index(int c_local, int dy, int dx) const {
        return (c_local * block_shape.kh + dy) * block_shape.kw + dx;
    }

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (int d : shape) n *= d;
        return n;
    }
};

/// Split a finite nonzero float into sign, mantissa in [1,2) and exponent.
/// Zero, NaN and infinity are domain errors; callers handle zeros.
FloatDecomposition decompose_float(double x);

/// Shared exponent of a block: floor(log2 max|x_i|), computed by exponent
/// extraction rather than a transcendental log. All-zero input returns
/// kZeroBlockExponent. Subnormal magnitudes are flushed to zero.
int shared_exponent(std::span<const double> values);

/// Quantize a sequence of finite reals to one BFP block: extract the
/// shared exponent, align mantissas with round-half-to-even, clamp
/// symmetrically, and count zero setting errors.
std::pair<BfpBlock, ZseStats> quantize_block(std::span<const double> values,
                                             MantissaWidth width);

/// Exact decode: element i is mantissas[i] * 2^(exponent - (w-2)).
std::vector<double> dequantize_block(const BfpBlock& block);

/// Dot product of two blocks of equal logical length: integer dot of the
/// mantissas in a 64-bit accumulator, then one scale by
/// 2^(e_a + e_b - (w_a-2) - (w_b-2)). Mixed widths are legal. Exact with
/// respect to the quantized operands.
double block_dot(const BfpBlock& a, const BfpBlock& b);

/// Partition a 4-D tensor into BFP blocks using the standard blocking
/// rule for (layer kind, width).
BfpTensor block_tensor(const Tensor& data, LayerKind kind, MantissaWidth width);

/// Partition with an explicit block shape (override path).
BfpTensor block_tensor(const Tensor& data, BlockShape block_shape, MantissaWidth width);

/// Decode a blocked tensor back to a dense tensor (exact).
Tensor dequantize_tensor(const BfpTensor& t);

/// Canonical byte serialization (little-endian) for golden-file tests and
/// tensor interchange: header with shape/block shape/width, then per block
/// the exponent, logical length and int16 mantissas.
std::vector<std::uint8_t> serialize(const BfpTensor& t);
BfpTensor deserialize(std::span<const std::uint8_t> bytes);

}  // namespace bfpkit::bfp
