#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "config.hpp"

namespace bfpkit::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

struct CommonOpts {
    std::string out_dir;           // empty: stdout only
    std::string format = "table";  // json | csv | table
    std::optional<std::uint64_t> seed;
};

int cmd_quantize(const std::string& input_path, const std::string& layer_type,
                 int width_bits, const std::optional<BlockShape>& block_override,
                 const CommonOpts& opts, std::ostream& out, std::ostream& err);

int cmd_map(const RunConfig& config, const CommonOpts& opts, std::ostream& out,
            std::ostream& err);

int cmd_train(RunConfig config, const CommonOpts& opts, std::ostream& out,
              std::ostream& err);

int cmd_sweep(const RunConfig& config, const std::vector<std::string>& presets,
              const CommonOpts& opts, std::ostream& out, std::ostream& err);

}  // namespace bfpkit::cli
