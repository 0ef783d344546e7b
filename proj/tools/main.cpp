#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "commands.hpp"
#include "config.hpp"

using namespace bfpkit;

int main(int argc, char** argv) {
    CLI::App app{"Block floating point training toolkit: quantization inspection, "
                 "accelerator mapping/cost reports, BFP training runs and precision sweeps"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::string format = "table";
    std::string preset;
    std::optional<std::uint64_t> seed;
    app.add_option("--config", config_path, "run configuration file (JSON)");
    app.add_option("--out", out_dir, "output directory for report files");
    app.add_option("--format", format, "stdout rendering: json, csv or table")
        ->check(CLI::IsMember({"json", "csv", "table"}));
    app.add_option("--seed", seed, "override the training seed");
    app.add_option("--preset", preset, "precision preset to apply")
        ->check(CLI::IsMember(cli::known_presets()));

    auto* quantize = app.add_subcommand(
        "quantize", "block a tensor file and report exponents, errors and ZSEs");
    quantize->fallthrough();
    std::string input_path, layer_type = "conv3";
    int width_bits = 8;
    std::vector<int> block_override;
    quantize->add_option("--input", input_path, "tensor file (binary or text)")
        ->required();
    quantize->add_option("--layer-type", layer_type,
                         "blocking rule: conv1|conv3|conv5|conv7|dwconv3|dwconv5|dwconv7");
    quantize->add_option("--width", width_bits, "mantissa bits: 4, 8 or 16")
        ->check(CLI::IsMember({4, 8, 16}));
    quantize->add_option("--block", block_override,
                         "explicit block shape kh kw depth (overrides the standard rule)")
        ->expected(3);

    auto* map = app.add_subcommand(
        "map", "per-layer, per-step utilization/cycle/energy report for a network");
    map->fallthrough();
    auto* train_cmd = app.add_subcommand("train", "run a BFP training job");
    train_cmd->fallthrough();
    auto* sweep = app.add_subcommand("sweep", "compare precision presets on one config");
    sweep->fallthrough();
    std::vector<std::string> sweep_presets;
    sweep->add_option("--presets", sweep_presets, "two or more presets to compare")
        ->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return cli::kExitUsage;
    }

    cli::CommonOpts opts;
    opts.out_dir = out_dir;
    opts.format = format;
    opts.seed = seed;

    const auto load = [&](cli::RunConfig& cfg) -> int {
        if (config_path.empty()) {
            std::cerr << "error: --config is required for this command\n";
            return cli::kExitUsage;
        }
        try {
            cfg = cli::load_config(config_path);
            if (!preset.empty()) cli::apply_preset(cfg, preset);
        } catch (const cli::ConfigError& e) {
            std::cerr << "error: " << config_path << ": " << e.what() << "\n";
            return cli::kExitUsage;
        }
        return cli::kExitOk;
    };

    if (quantize->parsed()) {
        std::optional<BlockShape> override;
        if (!block_override.empty())
            override = BlockShape{block_override[0], block_override[1], block_override[2]};
        return cli::cmd_quantize(input_path, layer_type, width_bits, override, opts,
                                 std::cout, std::cerr);
    }
    if (map->parsed()) {
        cli::RunConfig cfg;
        if (int rc = load(cfg); rc != cli::kExitOk) return rc;
        return cli::cmd_map(cfg, opts, std::cout, std::cerr);
    }
    if (train_cmd->parsed()) {
        cli::RunConfig cfg;
        if (int rc = load(cfg); rc != cli::kExitOk) return rc;
        return cli::cmd_train(cfg, opts, std::cout, std::cerr);
    }
    if (sweep->parsed()) {
        cli::RunConfig cfg;
        if (int rc = load(cfg); rc != cli::kExitOk) return rc;
        return cli::cmd_sweep(cfg, sweep_presets, opts, std::cout, std::cerr);
    }
    return cli::kExitUsage;
}
