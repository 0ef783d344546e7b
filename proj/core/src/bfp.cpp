#include "bfpkit/bfp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace bfpkit::bfp {
namespace {

// Smallest magnitude treated as nonzero; subnormal doubles flush to zero
// on the way in, mirroring a flush-to-zero front end.
bool is_effectively_zero(double x) {
    return x == 0.0 || std::fpclassify(x) == FP_SUBNORMAL;
}

void require_finite(std::span<const double> values) {
    for (double v : values) {
        if (!std::isfinite(v))
            throw std::invalid_argument("non-finite value in block input");
    }
}

}  // namespace

FloatDecomposition decompose_float(double x) {
    if (!std::isfinite(x) || is_effectively_zero(x))
        throw std::invalid_argument("decompose_float requires a finite nonzero input");
    int exp2 = 0;
    double frac = std::frexp(x, &exp2);  // |frac| in [0.5, 1)
    FloatDecomposition d;
    d.sign = std::signbit(x) ? -1 : 1;
    d.mantissa = std::fabs(frac) * 2.0;  // [1, 2)
    d.exponent = exp2 - 1;
    return d;
}

int shared_exponent(std::span<const double> values) {
    if (values.empty())
        throw std::invalid_argument("shared_exponent of an empty sequence");
    require_finite(values);
    double max_abs = 0.0;
    for (double v : values) {
        if (is_effectively_zero(v)) continue;
        max_abs = std::max(max_abs, std::fabs(v));
    }
    if (max_abs == 0.0) return kZeroBlockExponent;
    // ilogb returns floor(log2|x|) exactly, including at powers of two
    // where a transcendental log could land on the wrong side.
    return std::ilogb(max_abs);
}

std::pair<BfpBlock, ZseStats> quantize_block(std::span<const double> values,
                                             MantissaWidth width) {
    if (values.empty())
        throw std::invalid_argument("quantize_block of an empty sequence");
    const int e_s = shared_exponent(values);  // validates finiteness

    BfpBlock block;
    block.width = width;
    block.logical_len = static_cast<int>(values.size());
    block.mantissas.assign(values.size(), 0);
    block.exponent = e_s;

    ZseStats stats;
    stats.total_elements = static_cast<std::int64_t>(values.size());

    if (e_s == kZeroBlockExponent) return {std::move(block), stats};

    const int shift = bits(width) - 2 - e_s;
    const std::int32_t max_m = max_mantissa(width);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double x = is_effectively_zero(values[i]) ? 0.0 : values[i];
        // Scaling by a power of two is exact; nearbyint rounds half to even
        // under the default rounding mode.
        const double scaled = std::ldexp(x, shift);
        double r = std::nearbyint(scaled);
        r = std::clamp(r, -static_cast<double>(max_m), static_cast<double>(max_m));
        const auto m = static_cast<std::int32_t>(r);
        block.mantissas[i] = m;
        if (x != 0.0 && m == 0) ++stats.zse_count;
    }
    return {std::move(block), stats};
}

std::vector<double> dequantize_block(const BfpBlock& block) {
    std::vector<double> out(block.mantissas.size(), 0.0);
    if (block.all_zero()) return out;
    const int se = block.scale_exponent();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::ldexp(static_cast<double>(block.mantissas[i]), se);
    return out;
}

double block_dot(const BfpBlock& a, const BfpBlock& b) {
    if (a.logical_len != b.logical_len)
        throw std::invalid_argument("block_dot length mismatch");
    if (a.all_zero() || b.all_zero()) return 0.0;
    // 216 elements at 16-bit mantissas peak below 2^38; int64 cannot
    // overflow for any legal block. Zero padding contributes nothing, so
    // iterating the shorter storage covers every aligned pair.
    const std::size_t n = std::min(a.mantissas.size(), b.mantissas.size());
    std::int64_t acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += static_cast<std::int64_t>(a.mantissas[i]) *
               static_cast<std::int64_t>(b.mantissas[i]);
    }
    return std::ldexp(static_cast<double>(acc),
                      a.scale_exponent() + b.scale_exponent());
}

namespace {

int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace

BfpTensor block_tensor(const Tensor& data, LayerKind kind, MantissaWidth width) {
    return block_tensor(data, standard_block_shape(kind, width), width);
}

BfpTensor block_tensor(const Tensor& data, BlockShape bs, MantissaWidth width) {
    if (data.rank() != 4)
        throw std::invalid_argument("block_tensor expects a rank-4 tensor, got " +
                                    shape_string(data.shape));
    if (bs.kh < 1 || bs.kw < 1 || bs.depth < 1)
        throw std::invalid_argument("invalid block shape");

    const int outer = data.dim(0), channels = data.dim(1);
    const int height = data.dim(2), width_px = data.dim(3);

    BfpTensor t;
    t.shape = data.shape;
    t.block_shape = bs;
    t.width = width;
    t.cgroups = ceil_div(channels, bs.depth);
    t.ytiles = ceil_div(height, bs.kh);
    t.xtiles = ceil_div(width_px, bs.kw);
    t.blocks.reserve(static_cast<std::size_t>(outer) * t.cgroups * t.ytiles * t.xtiles);

    std::vector<double> scratch;
    scratch.reserve(static_cast<std::size_t>(bs.volume()));

    for (int n = 0; n < outer; ++n) {
        for (int g = 0; g < t.cgroups; ++g) {
            for (int ty = 0; ty < t.ytiles; ++ty) {
                for (int tx = 0; tx < t.xtiles; ++tx) {
                    const int c0 = g * bs.depth, c1 = std::min(c0 + bs.depth, channels);
                    const int y0 = ty * bs.kh, y1 = std::min(y0 + bs.kh, height);
                    const int x0 = tx * bs.kw, x1 = std::min(x0 + bs.kw, width_px);
                    scratch.clear();
                    for (int c = c0; c < c1; ++c)
                        for (int y = y0; y < y1; ++y)
                            for (int x = x0; x < x1; ++x)
                                scratch.push_back(data.at(n, c, y, x));

                    auto [block, stats] = quantize_block(scratch, width);
                    // Re-lay the valid elements at their padded positions so
                    // elem_index() addressing stays uniform across tiles.
                    BfpBlock padded;
                    padded.width = width;
                    padded.exponent = block.exponent;
                    padded.logical_len = block.logical_len;
                    padded.mantissas.assign(static_cast<std::size_t>(bs.volume()), 0);
                    int src = 0;
                    for (int c = c0; c < c1; ++c)
                        for (int y = y0; y < y1; ++y)
                            for (int x = x0; x < x1; ++x)
                                padded.mantissas[static_cast<std::size_t>(
                                    t.elem_index(c - c0, y - y0, x - x0))] =
                                    block.mantissas[static_cast<std::size_t>(src++)];
                    t.zse += stats;
                    t.blocks.push_back(std::move(padded));
                }
            }
        }
    }
    return t;
}

Tensor dequantize_tensor(const BfpTensor& t) {
    Tensor out(t.shape);
    const int channels = t.shape[1], height = t.shape[2], width_px = t.shape[3];
    const BlockShape& bs = t.block_shape;
    for (int n = 0; n < t.shape[0]; ++n) {
        for (int g = 0; g < t.cgroups; ++g) {
            for (int ty = 0; ty < t.ytiles; ++ty) {
                for (int tx = 0; tx < t.xtiles; ++tx) {
                    const BfpBlock& b = t.block_at(n, g, ty, tx);
                    if (b.all_zero()) continue;
                    const int se = b.scale_exponent();
                    const int c0 = g * bs.depth, c1 = std::min(c0 + bs.depth, channels);
                    const int y0 = ty * bs.kh, y1 = std::min(y0 + bs.kh, height);
                    const int x0 = tx * bs.kw, x1 = std::min(x0 + bs.kw, width_px);
                    for (int c = c0; c < c1; ++c)
                        for (int y = y0; y < y1; ++y)
                            for (int x = x0; x < x1; ++x)
                                out.at(n, c, y, x) = std::ldexp(
                                    static_cast<double>(b.mantissas[static_cast<std::size_t>(
                                        t.elem_index(c - c0, y - y0, x - x0))]),
                                    se);
                }
            }
        }
    }
    return out;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_i32(std::vector<std::uint8_t>& out, std::int32_t v) {
    put_u32(out, static_cast<std::uint32_t>(v));
}
void put_i16(std::vector<std::uint8_t>& out, std::int16_t v) {
    const auto u = static_cast<std::uint16_t>(v);
    out.push_back(static_cast<std::uint8_t>(u & 0xff));
    out.push_back(static_cast<std::uint8_t>(u >> 8));
}

struct ByteReader {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;

    std::uint8_t u8() {
        if (pos >= bytes.size()) throw std::invalid_argument("truncated BFP tensor");
        return bytes[pos++];
    }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
        return v;
    }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    std::int16_t i16() {
        std::uint16_t v = u8();
        v = static_cast<std::uint16_t>(v | (static_cast<std::uint16_t>(u8()) << 8));
        return static_cast<std::int16_t>(v);
    }
};

constexpr std::uint32_t kMagic = 0x54504642u;  // "BFPT" little-endian
constexpr std::uint32_t kVersion = 1;
// Serialized sentinel for all-zero blocks; int32 min is reserved.
constexpr std::int32_t kWireZeroExponent = std::numeric_limits<std::int32_t>::min();

}  // namespace

std::vector<std::uint8_t> serialize(const BfpTensor& t) {
    std::vector<std::uint8_t> out;
    put_u32(out, kMagic);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(bits(t.width)));
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    put_u32(out, static_cast<std::uint32_t>(t.block_shape.kh));
    put_u32(out, static_cast<std::uint32_t>(t.block_shape.kw));
    put_u32(out, static_cast<std::uint32_t>(t.block_shape.depth));
    put_u32(out, static_cast<std::uint32_t>(t.blocks.size()));
    put_i32(out, static_cast<std::int32_t>(t.zse.total_elements));
    put_i32(out, static_cast<std::int32_t>(t.zse.zse_count));
    for (const BfpBlock& b : t.blocks) {
        put_i32(out, b.all_zero() ? kWireZeroExponent : static_cast<std::int32_t>(b.exponent));
        put_u32(out, static_cast<std::uint32_t>(b.logical_len));
        for (std::int32_t m : b.mantissas) put_i16(out, static_cast<std::int16_t>(m));
    }
    return out;
}

BfpTensor deserialize(std::span<const std::uint8_t> bytes) {
    ByteReader r{bytes};
    if (r.u32() != kMagic) throw std::invalid_argument("bad BFP tensor magic");
    if (r.u32() != kVersion) throw std::invalid_argument("unsupported BFP tensor version");
    BfpTensor t;
    t.width = width_from_bits(static_cast<int>(r.u32()));
    const auto rank = r.u32();
    if (rank != 4) throw std::invalid_argument("BFP tensor must be rank 4");
    t.shape.resize(rank);
    for (auto& d : t.shape) d = static_cast<int>(r.u32());
    t.block_shape.kh = static_cast<int>(r.u32());
    t.block_shape.kw = static_cast<int>(r.u32());
    t.block_shape.depth = static_cast<int>(r.u32());
    const auto nblocks = r.u32();
    t.zse.total_elements = r.i32();
    t.zse.zse_count = r.i32();
    t.cgroups = ceil_div(t.shape[1], t.block_shape.depth);
    t.ytiles = ceil_div(t.shape[2], t.block_shape.kh);
    t.xtiles = ceil_div(t.shape[3], t.block_shape.kw);
    const auto expected = static_cast<std::uint64_t>(t.shape[0]) * t.cgroups * t.ytiles * t.xtiles;
    if (expected != nblocks) throw std::invalid_argument("block count does not match shape");
    t.blocks.resize(nblocks);
    const auto vol = static_cast<std::size_t>(t.block_shape.volume());
    for (auto& b : t.blocks) {
        const std::int32_t e = r.i32();
        b.exponent = (e == kWireZeroExponent) ? kZeroBlockExponent : e;
        b.width = t.width;
        b.logical_len = static_cast<int>(r.u32());
        b.mantissas.resize(vol);
        for (auto& m : b.mantissas) m = r.i16();
        const std::int32_t max_m = max_mantissa(t.width);
        for (std::int32_t m : b.mantissas)
            if (m > max_m || m < -max_m)
                throw std::invalid_argument("mantissa out of range for width");
    }
    return t;
}

}  // namespace bfpkit::bfp
