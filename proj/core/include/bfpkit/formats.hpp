#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace bfpkit {

/// Sign+mantissa width of a block floating point element. Only the three
/// supported widths are constructible: 4-bit (FB12), 8-bit (FB16) and
/// 16-bit (FB24), all paired with an 8-bit shared exponent.
enum class MantissaWidth : int {
    w4 = 4,
    w8 = 8,
    w16 = 16,
};

constexpr int bits(MantissaWidth w) { return static_cast<int>(w); }

/// Largest representable mantissa magnitude: 2^(w-1)-1 (symmetric clamp,
/// the asymmetric -2^(w-1) corner is never produced).
constexpr int max_mantissa(MantissaWidth w) {
    return (1 << (bits(w) - 1)) - 1;
}

inline MantissaWidth width_from_bits(int b) {
    switch (b) {
        case 4: return MantissaWidth::w4;
        case 8: return MantissaWidth::w8;
        case 16: return MantissaWidth::w16;
        default:
            throw std::invalid_argument("mantissa width must be 4, 8 or 16, got " +
                                        std::to_string(b));
    }
}

inline const char* format_name(MantissaWidth w) {
    switch (w) {
        case MantissaWidth::w4: return "FB12";
        case MantissaWidth::w8: return "FB16";
        default: return "FB24";
    }
}

/// Layer kinds understood by the blocking rules and the mapping planner.
/// Conv1x1_or_FC covers both pointwise convolutions and fully-connected
/// layers (an FC layer is a 1x1 convolution over a 1x1 spatial grid).
enum class LayerKind {
    Conv1x1_or_FC,
    Conv3,
    Conv5,
    Conv7,
    DWConv3,
    DWConv5,
    DWConv7,
};

constexpr int kernel_size(LayerKind k) {
    switch (k) {
        case LayerKind::Conv1x1_or_FC: return 1;
        case LayerKind::Conv3:
        case LayerKind::DWConv3: return 3;
        case LayerKind::Conv5:
        case LayerKind::DWConv5: return 5;
        case LayerKind::Conv7:
        case LayerKind::DWConv7: return 7;
    }
    return 1;
}

constexpr bool is_depthwise(LayerKind k) {
    return k == LayerKind::DWConv3 || k == LayerKind::DWConv5 || k == LayerKind::DWConv7;
}

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv1x1_or_FC: return "conv1";
        case LayerKind::Conv3: return "conv3";
        case LayerKind::Conv5: return "conv5";
        case LayerKind::Conv7: return "conv7";
        case LayerKind::DWConv3: return "dwconv3";
        case LayerKind::DWConv5: return "dwconv5";
        case LayerKind::DWConv7: return "dwconv7";
    }
    return "?";
}

inline LayerKind layer_kind_from_name(const std::string& s) {
    if (s == "conv1" || s == "fc" || s == "conv1x1") return LayerKind::Conv1x1_or_FC;
    if (s == "conv3") return LayerKind::Conv3;
    if (s == "conv5") return LayerKind::Conv5;
    if (s == "conv7") return LayerKind::Conv7;
    if (s == "dwconv3") return LayerKind::DWConv3;
    if (s == "dwconv5") return LayerKind::DWConv5;
    if (s == "dwconv7") return LayerKind::DWConv7;
    throw std::invalid_argument("unknown layer kind: " + s);
}

/// Shape of the sub-tensor sharing one exponent: kh x kw spatial patch
/// spanning `depth` consecutive channels.
struct BlockShape {
    int kh = 1;
    int kw = 1;
    int depth = 1;

    constexpr int volume() const { return kh * kw * depth; }
    friend bool operator==(const BlockShape&, const BlockShape&) = default;
};

/// Minimum block size sharing an exponent for each (layer kind, width)
/// pair. Depthwise kinds use the same row as the general convolution of
/// equal kernel size; the kernel window shape is what the rule keys on.
inline BlockShape standard_block_shape(LayerKind kind, MantissaWidth w) {
    const int k = kernel_size(kind);
    int depth = 0;
    switch (k) {
        case 1: depth = 216; break;
        case 3: depth = 24; break;
        case 5: depth = 8; break;
        case 7: depth = 4; break;
        default:
            throw std::invalid_argument("no blocking rule for kernel size " +
                                        std::to_string(k));
    }
    // Depth halves per precision step up: x4 -> full, x8 -> /2, x16 -> /4.
    depth /= bits(w) / 4;
    return BlockShape{k, k, depth};
}

}  // namespace bfpkit
