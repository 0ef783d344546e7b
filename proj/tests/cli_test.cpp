#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "bfpkit/tensor.hpp"
#include "commands.hpp"
#include "config.hpp"
#include "tensor_io.hpp"

using namespace bfpkit;
namespace fs = std::filesystem;

namespace {

const char* kMapOnlyConfig = R"json({
  "schema_version": 1,
  "network": {
    "input": {"channels": 24, "height": 16, "width": 16},
    "classes": 24,
    "layers": [
      {"kind": "conv3", "c_out": 24, "padding": 1}
    ]
  },
  "precision": {"default": {"x": 16, "w": 16, "g": 16, "wg": 16}},
  "cost_model": {"dram_bandwidth": 1e18, "dram_latency": 0}
})json";

const char* kTrainConfig = R"json({
  "schema_version": 1,
  "network": {
    "input": {"channels": 1, "height": 12, "width": 12},
    "classes": 4,
    "layers": [
      {"kind": "conv3", "c_out": 4, "padding": 1, "batch_norm": true,
       "activation": {"kind": "relu"}, "pool": {"kind": "max", "window": 2, "stride": 2}},
      {"kind": "conv1", "flatten": true, "c_out": 4}
    ]
  },
  "precision": {"default": {"x": 8, "w": 8, "g": 8, "wg": 8}},
  "train": {
    "eta": 0.05, "epochs": 2, "batch_size": 16, "seed": 3,
    "dataset": {"name": "synthetic", "classes": 4, "height": 12, "width": 12,
                "train_samples": 48, "test_samples": 32}
  }
})json";

struct RunResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const char* tag) {
    const fs::path dir = fs::temp_directory_path() /
                         (std::string("bfpkit_cli_test_") + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

RunResult run_cli(const std::string& args, const fs::path& dir) {
    const fs::path out = dir / "stdout.txt";
    const fs::path err = dir / "stderr.txt";
    const std::string cmd = std::string(BFPKIT_CLI_PATH) + " " + args + " > " +
                            out.string() + " 2> " + err.string();
    const int rc = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WEXITSTATUS(rc);
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

}  // namespace

TEST_CASE("config parsing fills defaults and derives shapes") {
    const cli::RunConfig cfg = cli::parse_config(kTrainConfig);
    REQUIRE(cfg.network.layers.size() == 2);
    CHECK(cfg.network.layers[0].c_in == 1);
    CHECK(cfg.network.layers[0].h == 12);
    CHECK(cfg.network.layers[1].c_in == 4 * 6 * 6);
    CHECK(cfg.network.layers[1].h == 1);
    CHECK(cfg.precision[0].x_width == MantissaWidth::w8);
    CHECK(cfg.cost.input_buffer == 512 * 1024);
    CHECK(cfg.geometry.cores == 64);
    REQUIRE(cfg.train.has_value());
    CHECK(cfg.train->dataset.synthetic.classes == 4);
}

TEST_CASE("config errors carry their location") {
    const auto expect_error = [](const std::string& text, const std::string& needle) {
        try {
            cli::parse_config(text);
            FAIL_CHECK("expected ConfigError for " << needle);
        } catch (const cli::ConfigError& e) {
            CHECK(std::string(e.what()).find(needle) != std::string::npos);
        }
    };
    expect_error(R"({"schema_version": 1, "network": {"input": {"channels":1,"height":4,"width":4},
                  "classes": 2, "layers": [{"kind":"conv1","c_out":2}]}, "bogus": 1})",
                 "$.bogus");
    expect_error(R"({"schema_version": 1})", "$.network");
    expect_error(R"({"schema_version": 2, "network": {}})", "$.schema_version");
    expect_error(R"({"schema_version": 1, "network": {"input": {"channels":1,"height":4,"width":4},
                  "classes": 2, "layers": [{"kind":"conv9","c_out":2}]}})",
                 "$.network.layers[0].kind");
    expect_error(R"({"schema_version": 1, "network": {"input": {"channels":1,"height":4,"width":4},
                  "classes": 2, "layers": [{"kind":"conv1","c_out":2}]},
                  "precision": {"default": {"x": 5}}})",
                 "$.precision.default.x");
    expect_error(R"({"schema_version": 1, "network": {"input": {"channels":1,"height":4,"width":4},
                  "classes": 2, "layers": [{"kind":"conv1","c_out":2}]},
                  "controller": {"enabled": true, "t_hi": 0.01, "t_lo": 0.05}})",
                 "$.controller");
    expect_error("not json at all", "not valid JSON");
}

TEST_CASE("config round-trip is idempotent") {
    const cli::RunConfig once = cli::parse_config(kTrainConfig);
    const std::string s1 = cli::serialize_config(once);
    const cli::RunConfig twice = cli::parse_config(s1);
    const std::string s2 = cli::serialize_config(twice);
    CHECK(s1 == s2);

    const cli::RunConfig map_cfg = cli::parse_config(kMapOnlyConfig);
    const std::string m1 = cli::serialize_config(map_cfg);
    CHECK(m1 == cli::serialize_config(cli::parse_config(m1)));
}

TEST_CASE("presets rewrite the precision table") {
    cli::RunConfig cfg = cli::parse_config(kTrainConfig);

    cli::apply_preset(cfg, "fb12-wg16");
    for (const auto& pc : cfg.precision) {
        CHECK(pc.x_width == MantissaWidth::w4);
        CHECK(pc.w_width == MantissaWidth::w4);
        CHECK(pc.g_width == MantissaWidth::w4);
        CHECK(pc.wg_width == MantissaWidth::w8);
    }
    cli::apply_preset(cfg, "dynamic-wg");
    CHECK(cfg.controller.enabled);
    REQUIRE(cfg.controller.roles.size() == 1);
    CHECK(cfg.controller.roles[0] == train::TensorRole::wg);

    cli::apply_preset(cfg, "float");
    CHECK(cfg.bypass_quantization);

    CHECK_THROWS_AS(cli::apply_preset(cfg, "fb99"), cli::ConfigError);
}

TEST_CASE("tensor files round-trip in binary and import from text") {
    const fs::path dir = fresh_dir("tensor_io");
    Tensor t({2, 3, 2, 2});
    for (std::size_t i = 0; i < t.data.size(); ++i)
        t.data[i] = 0.25 * static_cast<double>(i) - 1.5;

    const fs::path bin = dir / "t.btsr";
    cli::write_tensor_file(bin.string(), t);
    const Tensor back = cli::read_tensor_file(bin.string());
    CHECK(back.shape == t.shape);
    CHECK(back.data == t.data);

    const fs::path txt = dir / "t.txt";
    std::ofstream(txt) << "2 2\n1.0 0.5\n-0.25 4.0\n";
    const Tensor imported = cli::read_tensor_file(txt.string());
    CHECK(imported.shape == std::vector<int>{1, 1, 2, 2});
    CHECK(imported.data == std::vector<double>{1.0, 0.5, -0.25, 4.0});

    CHECK_THROWS(cli::read_tensor_file((dir / "missing.btsr").string()));
}

TEST_CASE("quantize command reports block stats") {
    const fs::path dir = fresh_dir("quantize");
    Tensor t({1, 24, 6, 6});
    for (std::size_t i = 0; i < t.data.size(); ++i)
        t.data[i] = 0.125 * static_cast<double>(i % 16) - 1.0;
    const fs::path file = dir / "act.btsr";
    cli::write_tensor_file(file.string(), t);

    auto r = run_cli("quantize --input " + file.string() +
                         " --layer-type conv3 --width 8 --format json",
                     dir);
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("\"block_shape\": [\n    3,\n    3,\n    12\n  ]") != std::string::npos);
    CHECK(r.out.find("\"zse_ratio\"") != std::string::npos);

    // Exact multiples of the step quantize losslessly.
    CHECK(r.out.find("\"max_abs_error\": 0.0") != std::string::npos);

    auto bad = run_cli("quantize --input " + (dir / "nope.btsr").string() + " --width 8", dir);
    CHECK(bad.exit_code == 1);
    CHECK(bad.err.find("error:") != std::string::npos);
}

TEST_CASE("map command renders utilization and cycle tables") {
    const fs::path dir = fresh_dir("map");
    const fs::path cfg = dir / "map.json";
    std::ofstream(cfg) << kMapOnlyConfig;

    auto r = run_cli("map --config " + cfg.string() + " --format csv", dir);
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("layer,step,utilization") == 0);
    CHECK(r.out.find("L0:conv3,fw,1,") != std::string::npos);
    CHECK(r.out.find("total,all") != std::string::npos);

    auto rj = run_cli("map --config " + cfg.string() + " --format json --out " +
                          (dir / "rep").string(),
                      dir);
    CHECK(rj.exit_code == 0);
    CHECK(fs::exists(dir / "rep" / "map.json"));
    CHECK(fs::exists(dir / "rep" / "map.csv"));

    auto missing = run_cli("map --format json", dir);
    CHECK(missing.exit_code == 1);
}

TEST_CASE("train command writes byte-stable metrics and manifest") {
    const fs::path dir = fresh_dir("train");
    const fs::path cfg = dir / "train.json";
    std::ofstream(cfg) << kTrainConfig;

    auto r1 = run_cli("train --config " + cfg.string() + " --out " + (dir / "a").string(), dir);
    REQUIRE(r1.exit_code == 0);
    CHECK(r1.out.find("epoch 0 ") != std::string::npos);
    REQUIRE(fs::exists(dir / "a" / "metrics.csv"));
    REQUIRE(fs::exists(dir / "a" / "manifest.json"));

    auto r2 = run_cli("train --config " + cfg.string() + " --out " + (dir / "b").string(), dir);
    REQUIRE(r2.exit_code == 0);
    CHECK(slurp(dir / "a" / "metrics.csv") == slurp(dir / "b" / "metrics.csv"));
    CHECK(slurp(dir / "a" / "manifest.json") == slurp(dir / "b" / "manifest.json"));
    CHECK(r1.out == r2.out);

    auto r3 = run_cli("train --config " + cfg.string() + " --seed 9 --out " +
                          (dir / "c").string(),
                      dir);
    REQUIRE(r3.exit_code == 0);
    CHECK(slurp(dir / "a" / "metrics.csv") != slurp(dir / "c" / "metrics.csv"));

    const std::string manifest = slurp(dir / "a" / "manifest.json");
    CHECK(manifest.find("\"schema_version\": 1") != std::string::npos);
    CHECK(manifest.find("\"content_hash\"") != std::string::npos);
    CHECK(manifest.find("\"final_accuracy\"") != std::string::npos);

    // Static preset echo: wg stays at 8 bits in every epoch row.
    auto r4 = run_cli("train --config " + cfg.string() + " --preset fb12-wg16 --out " +
                          (dir / "d").string(),
                      dir);
    REQUIRE(r4.exit_code == 0);
    const std::string csv = slurp(dir / "d" / "metrics.csv");
    std::istringstream lines(csv);
    std::string header;
    std::getline(lines, header);
    const auto wg_col = [&](const std::string& name) {
        std::istringstream hs(header);
        std::string col;
        int idx = 0;
        while (std::getline(hs, col, ',')) {
            if (col == name) return idx;
            ++idx;
        }
        return -1;
    };
    const int col = wg_col("L0:conv3_wg_bits");
    REQUIRE(col >= 0);
    std::string row;
    while (std::getline(lines, row)) {
        std::istringstream rs(row);
        std::string cell;
        for (int i = 0; i <= col; ++i) std::getline(rs, cell, ',');
        CHECK(cell == "8");
    }
}

TEST_CASE("train command without a train block is a usage error") {
    const fs::path dir = fresh_dir("train_usage");
    const fs::path cfg = dir / "map.json";
    std::ofstream(cfg) << kMapOnlyConfig;
    auto r = run_cli("train --config " + cfg.string(), dir);
    CHECK(r.exit_code == 1);
}

TEST_CASE("sweep compares presets with exact compute ratios") {
    const fs::path dir = fresh_dir("sweep");
    const fs::path cfg = dir / "map.json";
    std::ofstream(cfg) << kMapOnlyConfig;

    auto r = run_cli("sweep --config " + cfg.string() + " --presets fb24,fb16,fb12 --out " +
                         (dir / "rep").string(),
                     dir);
    REQUIRE(r.exit_code == 0);
    const std::string csv = slurp(dir / "rep" / "sweep.csv");
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);
    CHECK(line.find("preset,total_cycles,normalized_runtime") == 0);
    std::vector<double> norm;
    while (std::getline(lines, line)) {
        std::istringstream ls(line);
        std::string cell;
        std::getline(ls, cell, ',');  // preset
        std::getline(ls, cell, ',');  // total cycles
        std::getline(ls, cell, ',');  // normalized runtime
        norm.push_back(std::stod(cell));
    }
    REQUIRE(norm.size() == 3);
    CHECK(norm[0] == 1.0);
    CHECK(norm[1] == 0.25);
    CHECK(norm[2] == 0.0625);

    auto single = run_cli("sweep --config " + cfg.string() + " --presets fb24", dir);
    CHECK(single.exit_code == 1);
    CHECK(single.err.find(">= 2 presets") != std::string::npos);
}
