#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bfpkit/accel.hpp"
#include "bfpkit/train.hpp"

namespace bfpkit::cli {

/// Invalid configuration: message carries the JSON-pointer-style location.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DatasetConfig {
    std::string name = "synthetic";
    train::SyntheticSpec synthetic;
    std::string idx_images;  // reduced-MNIST loader inputs
    std::string idx_labels;
    int idx_limit = 1024;
};

struct TrainBlock {
    double eta = 0.05;
    int epochs = 10;
    int batch_size = 32;
    std::uint64_t seed = 1;
    DatasetConfig dataset;
};

struct BlockOverride {
    int layer = 0;
    BlockShape block;
};

/// Parsed run configuration: network, per-layer precision, controller,
/// cost model and (optionally) training settings.
struct RunConfig {
    int schema_version = 1;
    train::NetworkSpec network;
    std::vector<nn::PrecisionConfig> precision;
    std::vector<BlockOverride> block_overrides;
    train::ControllerConfig controller;
    accel::CoreGeometry geometry;
    accel::CostModelConfig cost;
    std::optional<TrainBlock> train;
    bool bypass_quantization = false;
};

/// Parse and validate config text. Unknown keys are rejected with their
/// location; missing required keys name the hole.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

/// Canonical serialization; parse(serialize(parse(x))) == parse(x).
std::string serialize_config(const RunConfig& config);

/// Known precision presets: fb24, fb16, fb12, fb12-wg16, dynamic-wg, float.
void apply_preset(RunConfig& config, const std::string& preset);
std::vector<std::string> known_presets();

}  // namespace bfpkit::cli
