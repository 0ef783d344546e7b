#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "bfpkit/accel.hpp"
#include "bfpkit/bfp.hpp"
#include "bfpkit/train.hpp"
#include "tensor_io.hpp"

namespace bfpkit::cli {

namespace {

using nlohmann::json;

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

void write_file(const std::string& dir, const std::string& name, const std::string& text) {
    std::filesystem::create_directories(dir);
    const std::filesystem::path path = std::filesystem::path(dir) / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

std::string layer_label(const nn::LayerSpec& l, int index) {
    return "L" + std::to_string(index) + ":" + layer_kind_name(l.kind);
}

train::Dataset build_dataset(const DatasetConfig& ds, bool train_split) {
    if (ds.name == "idx")
        return train::load_idx_dataset(ds.idx_images, ds.idx_labels, ds.idx_limit);
    return train::make_synthetic(ds.synthetic, train_split);
}

}  // namespace

int cmd_quantize(const std::string& input_path, const std::string& layer_type,
                 int width_bits, const std::optional<BlockShape>& block_override,
                 const CommonOpts& opts, std::ostream& out, std::ostream& err) {
    Tensor tensor;
    LayerKind kind;
    MantissaWidth width;
    try {
        kind = layer_kind_from_name(layer_type);
        width = width_from_bits(width_bits);
        tensor = read_tensor_file(input_path);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        const BlockShape shape =
            block_override ? *block_override : standard_block_shape(kind, width);
        const bfp::BfpTensor blocked = bfp::block_tensor(tensor, shape, width);
        const Tensor decoded = bfp::dequantize_tensor(blocked);

        std::map<int, std::int64_t> exp_hist;
        for (const auto& b : blocked.blocks)
            if (!b.all_zero()) ++exp_hist[b.exponent];
        double max_err = 0.0, err_sum = 0.0;
        for (std::size_t i = 0; i < tensor.data.size(); ++i) {
            const double e = std::fabs(decoded.data[i] - tensor.data[i]);
            max_err = std::max(max_err, e);
            err_sum += e;
        }
        const double mean_err =
            tensor.data.empty() ? 0.0
                                : err_sum / static_cast<double>(tensor.data.size());

        json report;
        report["schema_version"] = 1;
        report["input"] = input_path;
        report["shape"] = tensor.shape;
        report["layer_type"] = layer_kind_name(kind);
        report["width_bits"] = bits(width);
        report["block_shape"] = {shape.kh, shape.kw, shape.depth};
        report["blocks"] = blocked.blocks.size();
        report["zse_count"] = blocked.zse.zse_count;
        report["zse_ratio"] = blocked.zse.ratio();
        json hist = json::object();
        for (const auto& [e, n] : exp_hist) hist[std::to_string(e)] = n;
        report["exponent_histogram"] = hist;
        report["max_abs_error"] = max_err;
        report["mean_abs_error"] = mean_err;

        if (opts.format == "json") {
            out << report.dump(2) << "\n";
        } else {
            out << "tensor " << shape_string(tensor.shape) << " as " << format_name(width)
                << " (" << layer_kind_name(kind) << " blocking)\n"
                << "  block shape   : " << shape.kh << "x" << shape.kw << "x" << shape.depth
                << "\n"
                << "  blocks        : " << blocked.blocks.size() << "\n"
                << "  zse ratio     : " << fmt(blocked.zse.ratio()) << " ("
                << blocked.zse.zse_count << "/" << blocked.zse.total_elements << ")\n"
                << "  max abs error : " << fmt(max_err) << "\n"
                << "  mean abs error: " << fmt(mean_err) << "\n"
                << "  exponents     :";
            for (const auto& [e, n] : exp_hist) out << " " << e << "(x" << n << ")";
            out << "\n";
        }
        if (!opts.out_dir.empty())
            write_file(opts.out_dir, "quantize.json", report.dump(2) + "\n");
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}

namespace {

struct MapReport {
    json rows = json::array();
    std::string csv;
    std::string table;
    accel::TrainingStepEstimate est;
};

MapReport build_map_report(const RunConfig& cfg) {
    MapReport rep;
    const int batch = cfg.train ? cfg.train->batch_size : 1;
    rep.est = accel::estimate_training_step(cfg.network.layers, cfg.precision, batch,
                                            cfg.cost, cfg.geometry);
    rep.csv = "layer,step,utilization,compute_cycles,stall_cycles,total_cycles,joules\n";
    char line[256];
    std::string table;
    std::snprintf(line, sizeof line, "%-14s %-4s %11s %14s %12s %14s %12s\n", "layer",
                  "step", "util", "compute", "stalls", "total", "joules");
    table = line;
    for (const accel::StepEstimate& row : rep.est.rows) {
        const nn::LayerSpec& l = cfg.network.layers[static_cast<std::size_t>(row.layer_id)];
        const std::string label = layer_label(l, row.layer_id);
        json r;
        r["layer"] = label;
        r["step"] = accel::step_name(row.step);
        r["utilization"] = row.utilization;
        r["compute_cycles"] = row.cycles.compute_cycles;
        r["stall_cycles"] = row.cycles.memory_stall_cycles;
        r["total_cycles"] = row.cycles.total_cycles;
        r["joules"] = row.energy.joules;
        rep.rows.push_back(r);
        rep.csv += label;
        rep.csv += ",";
        rep.csv += accel::step_name(row.step);
        rep.csv += "," + fmt(row.utilization) + "," +
                   std::to_string(row.cycles.compute_cycles) + "," +
                   std::to_string(row.cycles.memory_stall_cycles) + "," +
                   std::to_string(row.cycles.total_cycles) + "," + fmt(row.energy.joules) +
                   "\n";
        std::snprintf(line, sizeof line, "%-14s %-4s %11.4f %14lld %12lld %14lld %12.4g\n",
                      label.c_str(), accel::step_name(row.step), row.utilization,
                      static_cast<long long>(row.cycles.compute_cycles),
                      static_cast<long long>(row.cycles.memory_stall_cycles),
                      static_cast<long long>(row.cycles.total_cycles), row.energy.joules);
        table += line;
    }
    std::snprintf(line, sizeof line, "%-14s %-4s %11.4f %14lld %12lld %14lld %12.4g\n",
                  "total", "all", rep.est.total.utilization,
                  static_cast<long long>(rep.est.total.compute_cycles),
                  static_cast<long long>(rep.est.total.memory_stall_cycles),
                  static_cast<long long>(rep.est.total.total_cycles),
                  rep.est.energy.joules);
    table += line;
    rep.csv += "total,all," + fmt(rep.est.total.utilization) + "," +
               std::to_string(rep.est.total.compute_cycles) + "," +
               std::to_string(rep.est.total.memory_stall_cycles) + "," +
               std::to_string(rep.est.total.total_cycles) + "," +
               fmt(rep.est.energy.joules) + "\n";
    rep.table = table;
    return rep;
}

json map_json(const MapReport& rep) {
    json j;
    j["schema_version"] = 1;
    j["rows"] = rep.rows;
    j["total"] = {{"utilization", rep.est.total.utilization},
                  {"compute_cycles", rep.est.total.compute_cycles},
                  {"stall_cycles", rep.est.total.memory_stall_cycles},
                  {"total_cycles", rep.est.total.total_cycles},
                  {"joules", rep.est.energy.joules}};
    return j;
}

}  // namespace

int cmd_map(const RunConfig& cfg, const CommonOpts& opts, std::ostream& out,
            std::ostream& err) {
    try {
        const MapReport rep = build_map_report(cfg);
        if (opts.format == "json") out << map_json(rep).dump(2) << "\n";
        else if (opts.format == "csv") out << rep.csv;
        else out << rep.table;
        if (!opts.out_dir.empty()) {
            write_file(opts.out_dir, "map.json", map_json(rep).dump(2) + "\n");
            write_file(opts.out_dir, "map.csv", rep.csv);
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}

namespace {

std::string dataset_fingerprint(const train::Dataset& ds) {
    std::string bytes(reinterpret_cast<const char*>(ds.images.data.data()),
                      ds.images.data.size() * sizeof(double));
    for (int l : ds.labels) bytes += static_cast<char>(l);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(train::content_hash(bytes)));
    return buf;
}

}  // namespace

int cmd_train(RunConfig cfg, const CommonOpts& opts, std::ostream& out, std::ostream& err) {
    if (!cfg.train) {
        err << "error: config has no train block\n";
        return kExitUsage;
    }
    if (opts.seed) cfg.train->seed = *opts.seed;

    try {
        const train::Dataset train_split = build_dataset(cfg.train->dataset, true);
        const train::Dataset eval_split = build_dataset(cfg.train->dataset, false);

        train::TrainConfig tc;
        tc.eta = cfg.train->eta;
        tc.epochs = cfg.train->epochs;
        tc.batch_size = cfg.train->batch_size;
        tc.seed = cfg.train->seed;
        tc.precision = cfg.precision;
        tc.controller = cfg.controller;
        tc.bypass_quantization = cfg.bypass_quantization;

        const train::TrainResult result =
            train::train(cfg.network, train_split, eval_split, tc, cfg.cost, cfg.geometry);

        std::vector<std::string> names;
        for (std::size_t i = 0; i < cfg.network.layers.size(); ++i)
            names.push_back(layer_label(cfg.network.layers[i], static_cast<int>(i)));
        const std::string csv = train::metrics_csv(result.epochs, names);

        const std::string config_echo = serialize_config(cfg);
        char hash_buf[32];
        std::snprintf(hash_buf, sizeof hash_buf, "%016llx",
                      static_cast<unsigned long long>(train::content_hash(
                          config_echo + dataset_fingerprint(train_split) +
                          dataset_fingerprint(eval_split))));
        json manifest;
        manifest["schema_version"] = 1;
        manifest["content_hash"] = hash_buf;
        manifest["config"] = json::parse(config_echo);
        manifest["final_accuracy"] = result.epochs.back().eval_accuracy;
        manifest["final_loss"] = result.epochs.back().train_loss;

        for (const train::EpochMetrics& em : result.epochs)
            out << "epoch " << em.epoch << " loss " << fmt(em.train_loss) << " accuracy "
                << fmt(em.eval_accuracy) << "\n";

        if (!opts.out_dir.empty()) {
            write_file(opts.out_dir, "metrics.csv", csv);
            write_file(opts.out_dir, "manifest.json", manifest.dump(2) + "\n");
        } else if (opts.format == "csv") {
            out << csv;
        }
    } catch (const train::DivergenceError& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}

int cmd_sweep(const RunConfig& cfg, const std::vector<std::string>& presets,
              const CommonOpts& opts, std::ostream& out, std::ostream& err) {
    if (presets.size() < 2) {
        err << "error: need >= 2 presets to sweep\n";
        return kExitUsage;
    }
    try {
        std::string csv =
            "preset,total_cycles,normalized_runtime,joules,normalized_energy,"
            "final_accuracy\n";
        double base_cycles = 0.0, base_joules = 0.0;
        for (std::size_t i = 0; i < presets.size(); ++i) {
            RunConfig variant = cfg;
            apply_preset(variant, presets[i]);
            const MapReport rep = build_map_report(variant);
            const double cycles = static_cast<double>(rep.est.total.total_cycles);
            const double joules = rep.est.energy.joules;
            if (i == 0) {
                base_cycles = cycles;
                base_joules = joules;
            }
            std::string accuracy = "";
            if (variant.train) {
                train::TrainConfig tc;
                tc.eta = variant.train->eta;
                tc.epochs = variant.train->epochs;
                tc.batch_size = variant.train->batch_size;
                tc.seed = opts.seed ? *opts.seed : variant.train->seed;
                tc.precision = variant.precision;
                tc.controller = variant.controller;
                tc.bypass_quantization = variant.bypass_quantization;
                const train::Dataset train_split = build_dataset(variant.train->dataset, true);
                const train::Dataset eval_split = build_dataset(variant.train->dataset, false);
                const train::TrainResult result = train::train(
                    variant.network, train_split, eval_split, tc, variant.cost,
                    variant.geometry);
                accuracy = fmt(result.epochs.back().eval_accuracy);
            }
            csv += presets[i] + "," + std::to_string(rep.est.total.total_cycles) + "," +
                   fmt(base_cycles > 0 ? cycles / base_cycles : 0.0) + "," + fmt(joules) +
                   "," + fmt(base_joules > 0 ? joules / base_joules : 0.0) + "," +
                   accuracy + "\n";
        }
        out << csv;
        if (!opts.out_dir.empty()) write_file(opts.out_dir, "sweep.csv", csv);
    } catch (const train::DivergenceError& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}

}  // namespace bfpkit::cli
