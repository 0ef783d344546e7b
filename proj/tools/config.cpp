#include "config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace bfpkit::cli {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw ConfigError(path + ": " + what);
}

void reject_unknown(const json& obj, const std::string& path,
                    const std::set<std::string>& allowed) {
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.count(key)) fail(path + "." + key, "unknown key");
    }
}

const json* find(const json& obj, const char* key) {
    auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
}

double get_number(const json& obj, const std::string& path, const char* key,
                  std::optional<double> fallback = std::nullopt) {
    const json* v = find(obj, key);
    if (!v) {
        if (fallback) return *fallback;
        fail(path + "." + key, "missing required number");
    }
    if (!v->is_number()) fail(path + "." + key, "expected a number");
    return v->get<double>();
}

int get_int(const json& obj, const std::string& path, const char* key,
            std::optional<int> fallback = std::nullopt) {
    const json* v = find(obj, key);
    if (!v) {
        if (fallback) return *fallback;
        fail(path + "." + key, "missing required integer");
    }
    if (!v->is_number_integer()) fail(path + "." + key, "expected an integer");
    return v->get<int>();
}

bool get_bool(const json& obj, const std::string& path, const char* key, bool fallback) {
    const json* v = find(obj, key);
    if (!v) return fallback;
    if (!v->is_boolean()) fail(path + "." + key, "expected a boolean");
    return v->get<bool>();
}

std::string get_string(const json& obj, const std::string& path, const char* key,
                       std::optional<std::string> fallback = std::nullopt) {
    const json* v = find(obj, key);
    if (!v) {
        if (fallback) return *fallback;
        fail(path + "." + key, "missing required string");
    }
    if (!v->is_string()) fail(path + "." + key, "expected a string");
    return v->get<std::string>();
}

MantissaWidth get_width(const json& obj, const std::string& path, const char* key,
                        MantissaWidth fallback) {
    const json* v = find(obj, key);
    if (!v) return fallback;
    if (!v->is_number_integer()) fail(path + "." + key, "expected 4, 8 or 16");
    const int b = v->get<int>();
    if (b != 4 && b != 8 && b != 16) fail(path + "." + key, "expected 4, 8 or 16");
    return width_from_bits(b);
}

nn::ActivationSpec parse_activation(const json& obj, const std::string& path) {
    reject_unknown(obj, path, {"kind", "alpha"});
    nn::ActivationSpec spec;
    const std::string kind = get_string(obj, path, "kind");
    if (kind == "none") spec.kind = nn::ActivationSpec::Kind::none;
    else if (kind == "relu") spec.kind = nn::ActivationSpec::Kind::relu;
    else if (kind == "relu_alpha") spec.kind = nn::ActivationSpec::Kind::relu_alpha;
    else fail(path + ".kind", "expected none|relu|relu_alpha");
    spec.alpha = get_number(obj, path, "alpha", 6.0);
    return spec;
}

nn::PoolSpec parse_pool(const json& obj, const std::string& path) {
    reject_unknown(obj, path, {"kind", "window", "stride"});
    nn::PoolSpec spec;
    const std::string kind = get_string(obj, path, "kind");
    if (kind == "none") spec.kind = nn::PoolSpec::Kind::none;
    else if (kind == "max") spec.kind = nn::PoolSpec::Kind::max;
    else if (kind == "avg") spec.kind = nn::PoolSpec::Kind::avg;
    else fail(path + ".kind", "expected none|max|avg");
    spec.window = get_int(obj, path, "window", 2);
    spec.stride = get_int(obj, path, "stride", spec.window);
    return spec;
}

train::NetworkSpec parse_network(const json& obj, const std::string& path) {
    reject_unknown(obj, path, {"input", "classes", "layers"});
    train::NetworkSpec net;

    const json* input = find(obj, "input");
    if (!input) fail(path + ".input", "missing required object");
    reject_unknown(*input, path + ".input", {"channels", "height", "width"});
    net.in_channels = get_int(*input, path + ".input", "channels");
    net.in_h = get_int(*input, path + ".input", "height");
    net.in_w = get_int(*input, path + ".input", "width");
    net.classes = get_int(obj, path, "classes");

    const json* layers = find(obj, "layers");
    if (!layers || !layers->is_array() || layers->empty())
        fail(path + ".layers", "expected a non-empty array");

    int c = net.in_channels, h = net.in_h, w = net.in_w;
    for (std::size_t i = 0; i < layers->size(); ++i) {
        const std::string lpath = path + ".layers[" + std::to_string(i) + "]";
        const json& lj = (*layers)[i];
        if (!lj.is_object()) fail(lpath, "expected an object");
        reject_unknown(lj, lpath,
                       {"kind", "c_in", "c_out", "h", "w", "stride", "padding", "flatten",
                        "batch_norm", "activation", "pool"});
        nn::LayerSpec l;
        try {
            l.kind = layer_kind_from_name(get_string(lj, lpath, "kind"));
        } catch (const std::invalid_argument& e) {
            fail(lpath + ".kind", e.what());
        }
        const bool flatten = get_bool(lj, lpath, "flatten", false);
        const int derived_c = flatten ? c * h * w : c;
        l.c_in = get_int(lj, lpath, "c_in", derived_c);
        l.h = get_int(lj, lpath, "h", flatten ? 1 : h);
        l.w = get_int(lj, lpath, "w", flatten ? 1 : w);
        l.c_out = get_int(lj, lpath, "c_out", l.depthwise() ? l.c_in : -1);
        if (l.c_out <= 0) fail(lpath + ".c_out", "missing required integer");
        l.stride = get_int(lj, lpath, "stride", 1);
        l.padding = get_int(lj, lpath, "padding", 0);
        l.batch_norm = get_bool(lj, lpath, "batch_norm", false);
        if (const json* act = find(lj, "activation"))
            l.activation = parse_activation(*act, lpath + ".activation");
        if (const json* pool = find(lj, "pool"))
            l.pool = parse_pool(*pool, lpath + ".pool");
        try {
            l.validate();
        } catch (const std::invalid_argument& e) {
            fail(lpath, e.what());
        }
        net.layers.push_back(l);
        c = l.c_out;
        h = l.out_h();
        w = l.out_w();
        if (l.pool.kind != nn::PoolSpec::Kind::none) {
            h = (h - l.pool.window) / l.pool.stride + 1;
            w = (w - l.pool.window) / l.pool.stride + 1;
        }
    }
    return net;
}

std::vector<nn::PrecisionConfig> parse_precision(const json* obj, const std::string& path,
                                                 std::size_t layers) {
    nn::PrecisionConfig def{MantissaWidth::w8, MantissaWidth::w8, MantissaWidth::w8,
                            MantissaWidth::w8};
    std::vector<nn::PrecisionConfig> out;
    if (!obj) {
        out.assign(layers, def);
        return out;
    }
    reject_unknown(*obj, path, {"default", "per_layer"});
    if (const json* d = find(*obj, "default")) {
        reject_unknown(*d, path + ".default", {"x", "w", "g", "wg"});
        def.x_width = get_width(*d, path + ".default", "x", def.x_width);
        def.w_width = get_width(*d, path + ".default", "w", def.w_width);
        def.g_width = get_width(*d, path + ".default", "g", def.g_width);
        def.wg_width = get_width(*d, path + ".default", "wg", def.wg_width);
    }
    out.assign(layers, def);
    if (const json* pl = find(*obj, "per_layer")) {
        if (!pl->is_array()) fail(path + ".per_layer", "expected an array");
        for (std::size_t i = 0; i < pl->size(); ++i) {
            const std::string epath = path + ".per_layer[" + std::to_string(i) + "]";
            const json& e = (*pl)[i];
            reject_unknown(e, epath, {"layer", "x", "w", "g", "wg"});
            const int li = get_int(e, epath, "layer");
            if (li < 0 || static_cast<std::size_t>(li) >= layers)
                fail(epath + ".layer", "layer index out of range");
            auto& pc = out[static_cast<std::size_t>(li)];
            pc.x_width = get_width(e, epath, "x", pc.x_width);
            pc.w_width = get_width(e, epath, "w", pc.w_width);
            pc.g_width = get_width(e, epath, "g", pc.g_width);
            pc.wg_width = get_width(e, epath, "wg", pc.wg_width);
        }
    }
    return out;
}

train::ControllerConfig parse_controller(const json* obj, const std::string& path) {
    train::ControllerConfig ctl;
    if (!obj) return ctl;
    reject_unknown(*obj, path, {"enabled", "t_hi", "t_lo", "roles"});
    ctl.enabled = get_bool(*obj, path, "enabled", false);
    ctl.t_hi = get_number(*obj, path, "t_hi", ctl.t_hi);
    ctl.t_lo = get_number(*obj, path, "t_lo", ctl.t_lo);
    if (!(ctl.t_lo < ctl.t_hi)) fail(path, "t_lo must be below t_hi");
    if (const json* roles = find(*obj, "roles")) {
        if (!roles->is_array()) fail(path + ".roles", "expected an array");
        ctl.roles.clear();
        for (std::size_t i = 0; i < roles->size(); ++i) {
            const std::string rpath = path + ".roles[" + std::to_string(i) + "]";
            if (!(*roles)[i].is_string()) fail(rpath, "expected a string");
            const std::string r = (*roles)[i].get<std::string>();
            if (r == "x") ctl.roles.push_back(train::TensorRole::x);
            else if (r == "w") ctl.roles.push_back(train::TensorRole::w);
            else if (r == "g") ctl.roles.push_back(train::TensorRole::g);
            else if (r == "wg") ctl.roles.push_back(train::TensorRole::wg);
            else fail(rpath, "expected x|w|g|wg");
        }
    }
    return ctl;
}

void parse_cost_model(const json* obj, const std::string& path, accel::CoreGeometry& geom,
                      accel::CostModelConfig& cost) {
    if (!obj) return;
    reject_unknown(*obj, path,
                   {"geometry", "input_buffer", "weight_buffer", "output_buffer",
                    "dram_bandwidth", "dram_latency", "power", "dram_energy_per_byte",
                    "double_buffering"});
    if (const json* g = find(*obj, "geometry")) {
        const std::string gpath = path + ".geometry";
        reject_unknown(*g, gpath,
                       {"mults_per_pe", "pes_per_pu", "pus_per_subcore",
                        "subcores_per_core", "cores", "clock_hz"});
        geom.mults_per_pe = get_int(*g, gpath, "mults_per_pe", geom.mults_per_pe);
        geom.pes_per_pu = get_int(*g, gpath, "pes_per_pu", geom.pes_per_pu);
        geom.pus_per_subcore = get_int(*g, gpath, "pus_per_subcore", geom.pus_per_subcore);
        geom.subcores_per_core =
            get_int(*g, gpath, "subcores_per_core", geom.subcores_per_core);
        geom.cores = get_int(*g, gpath, "cores", geom.cores);
        geom.clock_hz = get_number(*g, gpath, "clock_hz", geom.clock_hz);
    }
    cost.input_buffer = static_cast<std::int64_t>(
        get_number(*obj, path, "input_buffer", static_cast<double>(cost.input_buffer)));
    cost.weight_buffer = static_cast<std::int64_t>(
        get_number(*obj, path, "weight_buffer", static_cast<double>(cost.weight_buffer)));
    cost.output_buffer = static_cast<std::int64_t>(
        get_number(*obj, path, "output_buffer", static_cast<double>(cost.output_buffer)));
    cost.dram_bandwidth = get_number(*obj, path, "dram_bandwidth", cost.dram_bandwidth);
    cost.dram_latency = get_int(*obj, path, "dram_latency", cost.dram_latency);
    if (const json* p = find(*obj, "power")) {
        const std::string ppath = path + ".power";
        reject_unknown(*p, ppath, {"fb12", "fb16", "fb24"});
        cost.power_fb12 = get_number(*p, ppath, "fb12", cost.power_fb12);
        cost.power_fb16 = get_number(*p, ppath, "fb16", cost.power_fb16);
        cost.power_fb24 = get_number(*p, ppath, "fb24", cost.power_fb24);
    }
    cost.dram_energy_per_byte =
        get_number(*obj, path, "dram_energy_per_byte", cost.dram_energy_per_byte);
    cost.double_buffering = get_bool(*obj, path, "double_buffering", cost.double_buffering);
    try {
        geom.validate();
        cost.validate();
    } catch (const std::invalid_argument& e) {
        fail(path, e.what());
    }
}

DatasetConfig parse_dataset(const json* obj, const std::string& path) {
    DatasetConfig ds;
    if (!obj) return ds;
    reject_unknown(*obj, path,
                   {"name", "classes", "height", "width", "train_samples", "test_samples",
                    "class_separation", "noise", "seed", "images", "labels", "limit"});
    ds.name = get_string(*obj, path, "name", std::string("synthetic"));
    if (ds.name == "synthetic") {
        ds.synthetic.classes = get_int(*obj, path, "classes", ds.synthetic.classes);
        ds.synthetic.h = get_int(*obj, path, "height", ds.synthetic.h);
        ds.synthetic.w = get_int(*obj, path, "width", ds.synthetic.w);
        ds.synthetic.train_samples =
            get_int(*obj, path, "train_samples", ds.synthetic.train_samples);
        ds.synthetic.test_samples =
            get_int(*obj, path, "test_samples", ds.synthetic.test_samples);
        ds.synthetic.class_separation =
            get_number(*obj, path, "class_separation", ds.synthetic.class_separation);
        ds.synthetic.noise = get_number(*obj, path, "noise", ds.synthetic.noise);
        ds.synthetic.seed = static_cast<std::uint64_t>(
            get_number(*obj, path, "seed", static_cast<double>(ds.synthetic.seed)));
    } else if (ds.name == "idx") {
        ds.idx_images = get_string(*obj, path, "images");
        ds.idx_labels = get_string(*obj, path, "labels");
        ds.idx_limit = get_int(*obj, path, "limit", ds.idx_limit);
    } else {
        fail(path + ".name", "expected synthetic|idx");
    }
    return ds;
}

TrainBlock parse_train(const json& obj, const std::string& path) {
    reject_unknown(obj, path, {"eta", "epochs", "batch_size", "seed", "dataset"});
    TrainBlock t;
    t.eta = get_number(obj, path, "eta", t.eta);
    t.epochs = get_int(obj, path, "epochs", t.epochs);
    t.batch_size = get_int(obj, path, "batch_size", t.batch_size);
    t.seed = static_cast<std::uint64_t>(
        get_number(obj, path, "seed", static_cast<double>(t.seed)));
    if (!(t.eta > 0)) fail(path + ".eta", "must be positive");
    if (t.epochs < 1) fail(path + ".epochs", "must be >= 1");
    if (t.batch_size < 2) fail(path + ".batch_size", "must be >= 2");
    t.dataset = parse_dataset(find(obj, "dataset"), path + ".dataset");
    return t;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) throw ConfigError("$: config root must be an object");
    reject_unknown(root, "$",
                   {"schema_version", "network", "precision", "block_overrides",
                    "controller", "cost_model", "train", "bypass_quantization"});

    RunConfig cfg;
    cfg.schema_version = get_int(root, "$", "schema_version");
    if (cfg.schema_version != 1) fail("$.schema_version", "unsupported schema version");

    const json* net = find(root, "network");
    if (!net) fail("$.network", "missing required object");
    cfg.network = parse_network(*net, "$.network");

    cfg.precision = parse_precision(find(root, "precision"), "$.precision",
                                    cfg.network.layers.size());
    cfg.controller = parse_controller(find(root, "controller"), "$.controller");
    parse_cost_model(find(root, "cost_model"), "$.cost_model", cfg.geometry, cfg.cost);
    cfg.bypass_quantization = get_bool(root, "$", "bypass_quantization", false);

    if (const json* bo = find(root, "block_overrides")) {
        if (!bo->is_array()) fail("$.block_overrides", "expected an array");
        for (std::size_t i = 0; i < bo->size(); ++i) {
            const std::string bpath = "$.block_overrides[" + std::to_string(i) + "]";
            const json& e = (*bo)[i];
            reject_unknown(e, bpath, {"layer", "block"});
            BlockOverride ov;
            ov.layer = get_int(e, bpath, "layer");
            if (ov.layer < 0 ||
                static_cast<std::size_t>(ov.layer) >= cfg.network.layers.size())
                fail(bpath + ".layer", "layer index out of range");
            const json* blk = find(e, "block");
            if (!blk || !blk->is_array() || blk->size() != 3)
                fail(bpath + ".block", "expected [kh, kw, depth]");
            ov.block.kh = (*blk)[0].get<int>();
            ov.block.kw = (*blk)[1].get<int>();
            ov.block.depth = (*blk)[2].get<int>();
            if (ov.block.kh < 1 || ov.block.kw < 1 || ov.block.depth < 1)
                fail(bpath + ".block", "block dimensions must be >= 1");
            cfg.block_overrides.push_back(ov);
        }
    }

    if (const json* t = find(root, "train")) {
        cfg.train = parse_train(*t, "$.train");
        // Full network coherence (shape chaining, classifier fan-out) only
        // binds when the config is trainable; mapping-only configs may list
        // free-standing layers.
        try {
            cfg.network.validate();
        } catch (const std::invalid_argument& e) {
            fail("$.network", e.what());
        }
    }
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

namespace {

json activation_json(const nn::ActivationSpec& a) {
    json j;
    switch (a.kind) {
        case nn::ActivationSpec::Kind::none: j["kind"] = "none"; break;
        case nn::ActivationSpec::Kind::relu: j["kind"] = "relu"; break;
        case nn::ActivationSpec::Kind::relu_alpha: j["kind"] = "relu_alpha"; break;
    }
    j["alpha"] = a.alpha;
    return j;
}

json pool_json(const nn::PoolSpec& p) {
    json j;
    switch (p.kind) {
        case nn::PoolSpec::Kind::none: j["kind"] = "none"; break;
        case nn::PoolSpec::Kind::max: j["kind"] = "max"; break;
        case nn::PoolSpec::Kind::avg: j["kind"] = "avg"; break;
    }
    j["window"] = p.window;
    j["stride"] = p.stride;
    return j;
}

}  // namespace

std::string serialize_config(const RunConfig& cfg) {
    json root;
    root["schema_version"] = cfg.schema_version;
    root["network"]["input"] = {{"channels", cfg.network.in_channels},
                                {"height", cfg.network.in_h},
                                {"width", cfg.network.in_w}};
    root["network"]["classes"] = cfg.network.classes;
    json layers = json::array();
    for (const nn::LayerSpec& l : cfg.network.layers) {
        json lj;
        lj["kind"] = layer_kind_name(l.kind);
        lj["c_in"] = l.c_in;
        lj["c_out"] = l.c_out;
        lj["h"] = l.h;
        lj["w"] = l.w;
        lj["stride"] = l.stride;
        lj["padding"] = l.padding;
        lj["batch_norm"] = l.batch_norm;
        lj["activation"] = activation_json(l.activation);
        lj["pool"] = pool_json(l.pool);
        layers.push_back(lj);
    }
    root["network"]["layers"] = layers;

    json per_layer = json::array();
    for (std::size_t i = 0; i < cfg.precision.size(); ++i) {
        const nn::PrecisionConfig& pc = cfg.precision[i];
        per_layer.push_back({{"layer", static_cast<int>(i)},
                             {"x", bits(pc.x_width)},
                             {"w", bits(pc.w_width)},
                             {"g", bits(pc.g_width)},
                             {"wg", bits(pc.wg_width)}});
    }
    root["precision"]["per_layer"] = per_layer;

    if (!cfg.block_overrides.empty()) {
        json overrides = json::array();
        for (const BlockOverride& ov : cfg.block_overrides)
            overrides.push_back({{"layer", ov.layer},
                                 {"block", {ov.block.kh, ov.block.kw, ov.block.depth}}});
        root["block_overrides"] = overrides;
    }

    json roles = json::array();
    for (train::TensorRole r : cfg.controller.roles) roles.push_back(train::role_name(r));
    root["controller"] = {{"enabled", cfg.controller.enabled},
                          {"t_hi", cfg.controller.t_hi},
                          {"t_lo", cfg.controller.t_lo},
                          {"roles", roles}};

    root["cost_model"] = {
        {"geometry",
         {{"mults_per_pe", cfg.geometry.mults_per_pe},
          {"pes_per_pu", cfg.geometry.pes_per_pu},
          {"pus_per_subcore", cfg.geometry.pus_per_subcore},
          {"subcores_per_core", cfg.geometry.subcores_per_core},
          {"cores", cfg.geometry.cores},
          {"clock_hz", cfg.geometry.clock_hz}}},
        {"input_buffer", cfg.cost.input_buffer},
        {"weight_buffer", cfg.cost.weight_buffer},
        {"output_buffer", cfg.cost.output_buffer},
        {"dram_bandwidth", cfg.cost.dram_bandwidth},
        {"dram_latency", cfg.cost.dram_latency},
        {"power",
         {{"fb12", cfg.cost.power_fb12},
          {"fb16", cfg.cost.power_fb16},
          {"fb24", cfg.cost.power_fb24}}},
        {"dram_energy_per_byte", cfg.cost.dram_energy_per_byte},
        {"double_buffering", cfg.cost.double_buffering}};
    root["bypass_quantization"] = cfg.bypass_quantization;

    if (cfg.train) {
        json t;
        t["eta"] = cfg.train->eta;
        t["epochs"] = cfg.train->epochs;
        t["batch_size"] = cfg.train->batch_size;
        t["seed"] = cfg.train->seed;
        json ds;
        ds["name"] = cfg.train->dataset.name;
        if (cfg.train->dataset.name == "synthetic") {
            const train::SyntheticSpec& s = cfg.train->dataset.synthetic;
            ds["classes"] = s.classes;
            ds["height"] = s.h;
            ds["width"] = s.w;
            ds["train_samples"] = s.train_samples;
            ds["test_samples"] = s.test_samples;
            ds["class_separation"] = s.class_separation;
            ds["noise"] = s.noise;
            ds["seed"] = s.seed;
        } else {
            ds["images"] = cfg.train->dataset.idx_images;
            ds["labels"] = cfg.train->dataset.idx_labels;
            ds["limit"] = cfg.train->dataset.idx_limit;
        }
        t["dataset"] = ds;
        root["train"] = t;
    }
    return root.dump(2) + "\n";
}

void apply_preset(RunConfig& cfg, const std::string& preset) {
    const auto set_all = [&](int x, int w, int g, int wg) {
        for (nn::PrecisionConfig& pc : cfg.precision) {
            pc.x_width = width_from_bits(x);
            pc.w_width = width_from_bits(w);
            pc.g_width = width_from_bits(g);
            pc.wg_width = width_from_bits(wg);
        }
    };
    cfg.bypass_quantization = false;
    cfg.controller.enabled = false;
    if (preset == "fb24") set_all(16, 16, 16, 16);
    else if (preset == "fb16") set_all(8, 8, 8, 8);
    else if (preset == "fb12") set_all(4, 4, 4, 4);
    else if (preset == "fb12-wg16") set_all(4, 4, 4, 8);
    else if (preset == "dynamic-wg") {
        set_all(4, 4, 4, 4);
        cfg.controller.enabled = true;
        cfg.controller.roles = {train::TensorRole::wg};
    } else if (preset == "float") {
        cfg.bypass_quantization = true;
    } else {
        throw ConfigError("unknown preset: " + preset);
    }
}

std::vector<std::string> known_presets() {
    return {"fb24", "fb16", "fb12", "fb12-wg16", "dynamic-wg", "float"};
}

}  // namespace bfpkit::cli
