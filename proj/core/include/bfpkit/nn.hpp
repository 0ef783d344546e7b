#pragma once

#include <cstdint>
#include <vector>

#include "bfpkit/bfp.hpp"
#include "bfpkit/formats.hpp"
#include "bfpkit/tensor.hpp"

namespace bfpkit::nn {

struct ActivationSpec {
    enum class Kind { none, relu, relu_alpha };
    Kind kind = Kind::none;
    double alpha = 6.0;  // clipping value, relu_alpha only
};

struct PoolSpec {
    enum class Kind { none, max, avg };
    Kind kind = Kind::none;
    int window = 1;
    int stride = 1;
};

/// One layer of the network: a convolution (or FC) with optional batch
/// norm, activation and pooling attachments. h and w are the layer's
/// input spatial dimensions.
struct LayerSpec {
    LayerKind kind = LayerKind::Conv3;
    int c_in = 1;
    int c_out = 1;
    int h = 1;
    int w = 1;
    int stride = 1;
    int padding = 0;
    ActivationSpec activation;
    PoolSpec pool;
    bool batch_norm = false;

    int kernel() const { return kernel_size(kind); }
    bool depthwise() const { return is_depthwise(kind); }
    int out_h() const { return (h + 2 * padding - kernel()) / stride + 1; }
    int out_w() const { return (w + 2 * padding - kernel()) / stride + 1; }

    /// Throws if the dimensions are inconsistent (depthwise channel
    /// mismatch, non-positive output size).
    void validate() const;
};

/// Per-tensor mantissa widths for one layer: activations, weights, local
/// gradients and weight gradients are controlled independently.
struct PrecisionConfig {
    MantissaWidth x_width = MantissaWidth::w8;
    MantissaWidth w_width = MantissaWidth::w8;
    MantissaWidth g_width = MantissaWidth::w8;
    MantissaWidth wg_width = MantissaWidth::w8;

    friend bool operator==(const PrecisionConfig&, const PrecisionConfig&) = default;
};

/// Range batch normalization state: learnable gamma/beta plus running
/// statistics. running_scale is the range-based deviation estimate, not a
/// variance.
struct BatchNormState {
    std::vector<double> gamma;
    std::vector<double> beta;
    std::vector<double> running_mean;
    std::vector<double> running_scale;
    double momentum = 0.1;
    double epsilon = 1e-5;

    explicit BatchNormState(int channels = 0)
        : gamma(channels, 1.0),
          beta(channels, 0.0),
          running_mean(channels, 0.0),
          running_scale(channels, 1.0) {}
};

/// Per-batch values the range-BN backward pass needs.
struct BatchNormCache {
    std::vector<double> mean;
    std::vector<double> scale;       // C(n) * range + epsilon
    std::vector<std::int64_t> amax;  // flat index of the max element per channel
    std::vector<std::int64_t> amin;
    std::int64_t count = 0;  // elements per channel
};

/// Argmax bookkeeping for exact max-pool gradient routing.
struct PoolCache {
    std::vector<std::int64_t> argmax;  // flat input index per output element
    std::vector<int> in_shape;
};

// --- BFP-quantized layer math -------------------------------------------

/// Cross-correlation of x [N,Ci,H,W] with kernels w [Co,Ci,k,k] under the
/// layer's stride/padding. Integer mantissa dots run inside each
/// (x block, w block) pair; partial results accumulate in wide float in a
/// fixed channel-major order. Output is the pre-BN, pre-activation tensor.
Tensor forward_conv(const bfp::BfpTensor& x, const bfp::BfpTensor& w,
                    const LayerSpec& spec);

/// Gradient of forward_conv with respect to x: full correlation of g_y
/// [N,Co,Ho,Wo] with the rotated, channel-transposed kernels.
Tensor backward_conv(const bfp::BfpTensor& g_y, const bfp::BfpTensor& w,
                     const LayerSpec& spec);

/// Weight gradient: per (c_in, c_out) pair, the correlation of x with g_y
/// at each kernel offset. Operands are re-encoded at wg_width first so the
/// weight-gradient precision can exceed the x/g precision.
Tensor weight_gradient(const bfp::BfpTensor& g_y, const bfp::BfpTensor& x,
                       const LayerSpec& spec, MantissaWidth wg_width);

/// Plain SGD step: w - eta * dw, elementwise.
Tensor weight_update(const Tensor& w, const Tensor& dw, double eta);

// Wide-float reference kernels with identical loop order; these back the
// quantization-bypass path.
Tensor forward_conv_real(const Tensor& x, const Tensor& w, const LayerSpec& spec);
Tensor backward_conv_real(const Tensor& g_y, const Tensor& w, const LayerSpec& spec);
Tensor weight_gradient_real(const Tensor& g_y, const Tensor& x, const LayerSpec& spec);

// --- Activation / pooling / normalization --------------------------------

Tensor activation_fwd(const Tensor& x, const ActivationSpec& spec);
/// Pass-through gradient where the pre-activation was strictly inside the
/// active region, zero elsewhere.
Tensor activation_bwd(const Tensor& g, const Tensor& x_pre, const ActivationSpec& spec);

Tensor pool_fwd(const Tensor& x, const PoolSpec& spec, PoolCache* cache);
Tensor pool_bwd(const Tensor& g, const PoolSpec& spec, const PoolCache& cache);

/// Range batch norm forward: y = gamma * (x - mu_B) / s_B + beta with
/// s_B = range(x_B) / sqrt(2 ln n) + epsilon in training mode; running
/// statistics are used in inference mode.
Tensor range_batch_norm_fwd(const Tensor& x, BatchNormState& state, bool training,
                            BatchNormCache* cache);

struct BatchNormGrads {
    Tensor g_x;
    std::vector<double> g_gamma;
    std::vector<double> g_beta;
};

/// Exact gradients of the range-BN forward expression, treating the range
/// through its max/min argument subgradients.
BatchNormGrads range_batch_norm_bwd(const Tensor& g, const Tensor& x,
                                    const BatchNormState& state,
                                    const BatchNormCache& cache);

}  // namespace bfpkit::nn
