#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bfpkit/accel.hpp"
#include "bfpkit/bfp.hpp"
#include "bfpkit/nn.hpp"
#include "bfpkit/tensor.hpp"

namespace bfpkit::train {

/// Ordered layer list plus the input geometry it consumes. A layer may
/// either consume the previous output directly or flatten it into a 1x1
/// FC input.
struct NetworkSpec {
    std::vector<nn::LayerSpec> layers;
    int in_channels = 1;
    int in_h = 16;
    int in_w = 16;
    int classes = 10;

    /// Throws unless adjacent layer shapes compose and the last layer
    /// emits `classes` values per sample.
    void validate() const;
};

/// Tensor roles whose widths the controller may adapt.
enum class TensorRole { x = 0, w = 1, g = 2, wg = 3 };
inline constexpr std::array<TensorRole, 4> kAllRoles = {TensorRole::x, TensorRole::w,
                                                        TensorRole::g, TensorRole::wg};
inline const char* role_name(TensorRole r) {
    switch (r) {
        case TensorRole::x: return "x";
        case TensorRole::w: return "w";
        case TensorRole::g: return "g";
        default: return "wg";
    }
}

/// Hysteresis controller settings: widen one step above t_hi, narrow one
/// step below t_lo, hold inside the band. Applied at epoch boundaries.
struct ControllerConfig {
    bool enabled = false;
    double t_hi = 0.05;
    double t_lo = 0.01;
    std::vector<TensorRole> roles = {TensorRole::wg};
};

struct TrainConfig {
    double eta = 0.05;
    int epochs = 1;
    int batch_size = 32;
    std::uint64_t seed = 1;
    std::vector<nn::PrecisionConfig> precision;  // one per layer
    ControllerConfig controller;
    bool bypass_quantization = false;  // wide-float reference path

    // Step decay: from eta_decay_epoch on, the rate is eta * eta_decay.
    // Disabled when eta_decay_epoch < 0.
    int eta_decay_epoch = -1;
    double eta_decay = 0.1;

    void validate(std::size_t layer_count) const;
};

/// Labelled image set; images are [N, C, H, W].
struct Dataset {
    Tensor images;
    std::vector<int> labels;

    int size() const { return images.shape.empty() ? 0 : images.dim(0); }
};

/// Deterministic 10-class synthetic benchmark, 16x16 grayscale by
/// default. Every sample is a shared base pattern plus a weak
/// class-specific pattern (class_separation controls how weak), randomly
/// shifted, amplitude-jittered and noised. The strong common component
/// dominates block maxima during quantization, which is what makes the
/// benchmark precision-sensitive.
struct SyntheticSpec {
    int classes = 10;
    int h = 16;
    int w = 16;
    int train_samples = 512;
    int test_samples = 512;
    double class_separation = 0.45;
    double noise = 0.5;
    std::uint64_t seed = 7;
};
Dataset make_synthetic(const SyntheticSpec& spec, bool train_split);

/// The bundled desk-scale benchmark network: two batch-normed 3x3 conv
/// stages with max pooling and a 10-way classifier head.
NetworkSpec desk_network();

/// Reduced-MNIST loader for idx-format files (images + labels); takes the
/// first `limit` samples. No download logic, files must exist locally.
Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                         int limit);

/// Controller state for one (layer, role) pair plus the epoch's
/// accumulated conversion statistics.
struct HysteresisState {
    double t_hi = 0.05;
    double t_lo = 0.01;
    std::vector<std::array<MantissaWidth, 4>> widths;  // [layer][role]
    std::vector<std::array<bfp::ZseStats, 4>> epoch_zse;

    void reset_epoch_stats();
};

/// Single hysteresis transition: one step of 4 <-> 8 <-> 16 per call.
MantissaWidth controller_step(double zse_ratio, MantissaWidth current, double t_hi,
                              double t_lo);

struct EpochMetrics {
    int epoch = 0;
    double train_loss = 0.0;
    double eval_accuracy = 0.0;
    std::vector<std::array<double, 4>> zse_ratio;          // [layer][role]
    std::vector<std::array<MantissaWidth, 4>> widths;      // [layer][role]
    std::int64_t modeled_cycles = 0;
    double modeled_joules = 0.0;
};

/// Trainable parameter state: wide-float master weights plus batch norm
/// state per layer. Compute consumes quantized views of the masters.
struct Model {
    NetworkSpec spec;
    std::vector<Tensor> weights;
    std::vector<nn::BatchNormState> bn;

    static Model init(const NetworkSpec& spec, std::uint64_t seed);
};

/// Forward the network at the given per-layer widths (inference mode BN)
/// and return logits [N, classes, 1, 1].
Tensor forward_eval(const Model& model, const Tensor& images,
                    const std::vector<nn::PrecisionConfig>& precision,
                    bool bypass_quantization);

/// Top-1 accuracy over the dataset.
double evaluate(const Model& model, const Dataset& data,
                const std::vector<nn::PrecisionConfig>& precision,
                bool bypass_quantization);

struct TrainResult {
    Model model;
    std::vector<EpochMetrics> epochs;
};

/// Raised when the loss turns non-finite.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Full training loop: quantize -> FW -> loss -> BW -> WU per batch,
/// evaluation and (optionally) a controller step per epoch. Bitwise
/// deterministic for a fixed seed and config.
TrainResult train(const NetworkSpec& network, const Dataset& train_data,
                  const Dataset& eval_data, const TrainConfig& config,
                  const accel::CostModelConfig& cost = {},
                  const accel::CoreGeometry& geometry = {});

/// Metrics CSV (one row per epoch) and JSON run manifest used by the CLI
/// and the test suites.
std::string metrics_csv(const std::vector<EpochMetrics>& metrics,
                        const std::vector<std::string>& layer_names);
std::uint64_t content_hash(std::string_view bytes);

}  // namespace bfpkit::train
