#include "bfpkit/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

namespace bfpkit::train {

void NetworkSpec::validate() const {
    if (layers.empty()) throw std::invalid_argument("network has no layers");
    if (classes < 2) throw std::invalid_argument("need at least 2 classes");
    int c = in_channels, h = in_h, w = in_w;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const nn::LayerSpec& l = layers[i];
        l.validate();
        const bool direct = l.c_in == c && l.h == h && l.w == w;
        const bool flat = l.c_in == c * h * w && l.h == 1 && l.w == 1;
        if (!direct && !flat)
            throw std::invalid_argument("layer " + std::to_string(i) +
                                        " input does not compose with previous output");
        c = l.c_out;
        h = l.out_h();
        w = l.out_w();
        if (l.pool.kind != nn::PoolSpec::Kind::none) {
            if (l.pool.window > h || l.pool.window > w)
                throw std::invalid_argument("layer " + std::to_string(i) +
                                            " pool window exceeds feature map");
            h = (h - l.pool.window) / l.pool.stride + 1;
            w = (w - l.pool.window) / l.pool.stride + 1;
        }
    }
    if (c * h * w != classes)
        throw std::invalid_argument("network emits " + std::to_string(c * h * w) +
                                    " values per sample, expected " +
                                    std::to_string(classes));
}

void TrainConfig::validate(std::size_t layer_count) const {
    // eta == 0 is the degenerate frozen-weights run; negative rates are
    // rejected.
    if (eta < 0) throw std::invalid_argument("eta must be >= 0");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 2) throw std::invalid_argument("batch size must be >= 2");
    if (precision.size() != layer_count)
        throw std::invalid_argument("one precision config per layer required");
    if (controller.enabled && !(controller.t_lo < controller.t_hi))
        throw std::invalid_argument("controller requires t_lo < t_hi");
    if (eta_decay_epoch >= 0 && !(eta_decay > 0))
        throw std::invalid_argument("eta_decay must be positive");
}

void HysteresisState::reset_epoch_stats() {
    for (auto& per_layer : epoch_zse) per_layer.fill(bfp::ZseStats{});
}

MantissaWidth controller_step(double zse_ratio, MantissaWidth current, double t_hi,
                              double t_lo) {
    if (zse_ratio < 0.0 || zse_ratio > 1.0)
        throw std::invalid_argument("zse ratio must be in [0,1]");
    if (zse_ratio > t_hi) {
        switch (current) {
            case MantissaWidth::w4: return MantissaWidth::w8;
            case MantissaWidth::w8: return MantissaWidth::w16;
            case MantissaWidth::w16: return MantissaWidth::w16;
        }
    }
    if (zse_ratio < t_lo) {
        switch (current) {
            case MantissaWidth::w16: return MantissaWidth::w8;
            case MantissaWidth::w8: return MantissaWidth::w4;
            case MantissaWidth::w4: return MantissaWidth::w4;
        }
    }
    return current;
}

Model Model::init(const NetworkSpec& spec, std::uint64_t seed) {
    spec.validate();
    Model m;
    m.spec = spec;
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
    for (const nn::LayerSpec& l : spec.layers) {
        const int fan_in = (l.depthwise() ? 1 : l.c_in) * l.kernel() * l.kernel();
        const double bound = std::sqrt(6.0 / fan_in);
        std::uniform_real_distribution<double> dist(-bound, bound);
        Tensor w({l.c_out, l.depthwise() ? 1 : l.c_in, l.kernel(), l.kernel()});
        for (double& v : w.data) v = dist(rng);
        m.weights.push_back(std::move(w));
        m.bn.emplace_back(l.batch_norm ? l.c_out : 0);
    }
    return m;
}

namespace {

/// Weight tensors use the layer's blocking rule except for depthwise
/// kernels, whose single input channel gets one k x k block per filter.
bfp::BfpTensor block_weights(const Tensor& w, const nn::LayerSpec& l, MantissaWidth width) {
    if (l.depthwise())
        return bfp::block_tensor(w, BlockShape{l.kernel(), l.kernel(), 1}, width);
    return bfp::block_tensor(w, l.kind, width);
}

Tensor maybe_flatten(const Tensor& x, const nn::LayerSpec& l) {
    if (x.dim(1) == l.c_in && x.dim(2) == l.h && x.dim(3) == l.w) return x;
    return x.reshaped({x.dim(0), l.c_in, l.h, l.w});
}

struct LayerForwardCache {
    Tensor x_in;       // conv input (possibly flattened view)
    Tensor pre_bn;     // conv output
    Tensor pre_act;    // after BN
    Tensor pre_pool;   // after activation
    std::vector<int> out_shape;  // layer output (post-pool) shape
    nn::BatchNormCache bn;
    nn::PoolCache pool;
};

struct ZseSink {
    std::vector<std::array<bfp::ZseStats, 4>>* stats = nullptr;
    void add(int layer, TensorRole role, const bfp::ZseStats& s) const {
        if (stats) (*stats)[static_cast<std::size_t>(layer)][static_cast<int>(role)] += s;
    }
};

Tensor forward_pass(Model& model, const Tensor& images,
                    const std::vector<nn::PrecisionConfig>& precision, bool bypass,
                    bool training, std::vector<LayerForwardCache>* caches,
                    const ZseSink& zse) {
    Tensor cur = images;
    for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
        const nn::LayerSpec& l = model.spec.layers[i];
        LayerForwardCache cache;
        cache.x_in = maybe_flatten(cur, l);

        if (bypass) {
            cache.pre_bn = nn::forward_conv_real(cache.x_in, model.weights[i], l);
        } else {
            bfp::BfpTensor xb = bfp::block_tensor(cache.x_in, l.kind, precision[i].x_width);
            bfp::BfpTensor wb = block_weights(model.weights[i], l, precision[i].w_width);
            zse.add(static_cast<int>(i), TensorRole::x, xb.zse);
            zse.add(static_cast<int>(i), TensorRole::w, wb.zse);
            cache.pre_bn = nn::forward_conv(xb, wb, l);
        }

        cache.pre_act = l.batch_norm
                            ? nn::range_batch_norm_fwd(cache.pre_bn, model.bn[i], training,
                                                       training ? &cache.bn : nullptr)
                            : cache.pre_bn;
        cache.pre_pool = nn::activation_fwd(cache.pre_act, l.activation);
        cur = nn::pool_fwd(cache.pre_pool, l.pool, training ? &cache.pool : nullptr);
        cache.out_shape = cur.shape;
        if (caches) caches->push_back(std::move(cache));
    }
    return cur;
}

struct LossResult {
    double loss = 0.0;
    Tensor grad;  // d loss / d logits, already divided by batch size
};

LossResult softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                                 const std::vector<std::size_t>& index) {
    const int n = logits.dim(0);
    const int classes = static_cast<int>(logits.numel() / n);
    LossResult out;
    out.grad = Tensor(logits.shape);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const double* row = logits.data.data() + static_cast<std::size_t>(i) * classes;
        double* grow = out.grad.data.data() + static_cast<std::size_t>(i) * classes;
        double mx = row[0];
        for (int c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (int c = 0; c < classes; ++c) sum += std::exp(row[c] - mx);
        const double log_sum = std::log(sum) + mx;
        const int label = labels[index[static_cast<std::size_t>(i)]];
        total += log_sum - row[label];
        for (int c = 0; c < classes; ++c) {
            grow[c] = (std::exp(row[c] - mx) / sum - (c == label ? 1.0 : 0.0)) /
                      static_cast<double>(n);
        }
    }
    out.loss = total / static_cast<double>(n);
    return out;
}

void backward_and_update(Model& model, const std::vector<LayerForwardCache>& caches,
                         const Tensor& loss_grad,
                         const std::vector<nn::PrecisionConfig>& precision, bool bypass,
                         double eta, const ZseSink& zse) {
    Tensor g = loss_grad;
    for (int i = static_cast<int>(model.spec.layers.size()) - 1; i >= 0; --i) {
        const nn::LayerSpec& l = model.spec.layers[static_cast<std::size_t>(i)];
        const LayerForwardCache& cache = caches[static_cast<std::size_t>(i)];

        if (g.shape != cache.out_shape) g = g.reshaped(cache.out_shape);
        g = nn::pool_bwd(g, l.pool, cache.pool);
        g = nn::activation_bwd(g, cache.pre_act, l.activation);

        std::vector<double> g_gamma, g_beta;
        if (l.batch_norm) {
            nn::BatchNormGrads bg = nn::range_batch_norm_bwd(
                g, cache.pre_bn, model.bn[static_cast<std::size_t>(i)], cache.bn);
            g = std::move(bg.g_x);
            g_gamma = std::move(bg.g_gamma);
            g_beta = std::move(bg.g_beta);
        }

        Tensor dw;
        Tensor g_prev;
        if (bypass) {
            if (i > 0) g_prev = nn::backward_conv_real(g, model.weights[static_cast<std::size_t>(i)], l);
            dw = nn::weight_gradient_real(g, cache.x_in, l);
        } else {
            const nn::PrecisionConfig& pc = precision[static_cast<std::size_t>(i)];
            if (i > 0) {
                bfp::BfpTensor gb = bfp::block_tensor(g, l.kind, pc.g_width);
                zse.add(i, TensorRole::g, gb.zse);
                bfp::BfpTensor wb =
                    block_weights(model.weights[static_cast<std::size_t>(i)], l, pc.w_width);
                g_prev = nn::backward_conv(gb, wb, l);
            }
            bfp::BfpTensor g_wg = bfp::block_tensor(g, l.kind, pc.wg_width);
            bfp::BfpTensor x_wg = bfp::block_tensor(cache.x_in, l.kind, pc.wg_width);
            zse.add(i, TensorRole::wg, g_wg.zse);
            zse.add(i, TensorRole::wg, x_wg.zse);
            dw = nn::weight_gradient(g_wg, x_wg, l, pc.wg_width);
        }

        if (eta > 0) {
            model.weights[static_cast<std::size_t>(i)] =
                nn::weight_update(model.weights[static_cast<std::size_t>(i)], dw, eta);
            if (l.batch_norm) {
                nn::BatchNormState& bn = model.bn[static_cast<std::size_t>(i)];
                for (std::size_t c = 0; c < g_gamma.size(); ++c) {
                    bn.gamma[c] -= eta * g_gamma[c];
                    bn.beta[c] -= eta * g_beta[c];
                }
            }
        }
        if (i > 0) g = std::move(g_prev);
    }
}

Tensor gather_batch(const Tensor& images, const std::vector<std::size_t>& index) {
    const int n = static_cast<int>(index.size());
    const std::int64_t sample = images.numel() / images.dim(0);
    Tensor out({n, images.dim(1), images.dim(2), images.dim(3)});
    for (int i = 0; i < n; ++i)
        std::copy_n(images.data.begin() +
                        static_cast<std::int64_t>(index[static_cast<std::size_t>(i)]) * sample,
                    sample, out.data.begin() + static_cast<std::int64_t>(i) * sample);
    return out;
}

}  // namespace

Tensor forward_eval(const Model& model, const Tensor& images,
                    const std::vector<nn::PrecisionConfig>& precision,
                    bool bypass_quantization) {
    Model& mutable_model = const_cast<Model&>(model);  // inference never mutates BN state
    Tensor out = forward_pass(mutable_model, images, precision, bypass_quantization,
                              /*training=*/false, nullptr, ZseSink{});
    return out.reshaped({out.dim(0), static_cast<int>(out.numel() / out.dim(0)), 1, 1});
}

double evaluate(const Model& model, const Dataset& data,
                const std::vector<nn::PrecisionConfig>& precision,
                bool bypass_quantization) {
    if (data.size() == 0) throw std::invalid_argument("evaluation split is empty");
    const int n = data.size();
    const int chunk = 64;
    int correct = 0;
    for (int start = 0; start < n; start += chunk) {
        const int m = std::min(chunk, n - start);
        std::vector<std::size_t> idx(static_cast<std::size_t>(m));
        std::iota(idx.begin(), idx.end(), static_cast<std::size_t>(start));
        Tensor batch = gather_batch(data.images, idx);
        Tensor logits = forward_eval(model, batch, precision, bypass_quantization);
        const int classes = logits.dim(1);
        for (int i = 0; i < m; ++i) {
            int best = 0;
            for (int c = 1; c < classes; ++c)
                if (logits.at(i, c, 0, 0) > logits.at(i, best, 0, 0)) best = c;
            if (best == data.labels[static_cast<std::size_t>(start + i)]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

TrainResult train(const NetworkSpec& network, const Dataset& train_data,
                  const Dataset& eval_data, const TrainConfig& config,
                  const accel::CostModelConfig& cost, const accel::CoreGeometry& geometry) {
    network.validate();
    config.validate(network.layers.size());
    if (train_data.size() == 0) throw std::invalid_argument("training split is empty");
    if (train_data.images.dim(1) != network.in_channels ||
        train_data.images.dim(2) != network.in_h ||
        train_data.images.dim(3) != network.in_w)
        throw std::invalid_argument("dataset shape does not match network input");

    TrainResult result;
    result.model = Model::init(network, config.seed);
    const std::size_t nl = network.layers.size();

    HysteresisState hyst;
    hyst.t_hi = config.controller.t_hi;
    hyst.t_lo = config.controller.t_lo;
    hyst.widths.resize(nl);
    hyst.epoch_zse.resize(nl);
    for (std::size_t i = 0; i < nl; ++i) {
        hyst.widths[i] = {config.precision[i].x_width, config.precision[i].w_width,
                          config.precision[i].g_width, config.precision[i].wg_width};
    }

    std::mt19937_64 shuffle_rng(config.seed * 0x2545f4914f6cdd1dull + 1);
    std::vector<std::size_t> order(static_cast<std::size_t>(train_data.size()));
    std::iota(order.begin(), order.end(), std::size_t{0});

    const int batches =
        (train_data.size() + config.batch_size - 1) / config.batch_size;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        hyst.reset_epoch_stats();
        ZseSink sink{&hyst.epoch_zse};

        std::vector<nn::PrecisionConfig> widths(nl);
        for (std::size_t i = 0; i < nl; ++i)
            widths[i] = {hyst.widths[i][0], hyst.widths[i][1], hyst.widths[i][2],
                         hyst.widths[i][3]};

        const double epoch_eta =
            (config.eta_decay_epoch >= 0 && epoch >= config.eta_decay_epoch)
                ? config.eta * config.eta_decay
                : config.eta;

        double loss_sum = 0.0;
        int loss_count = 0;
        for (int b = 0; b < batches; ++b) {
            const std::size_t lo = static_cast<std::size_t>(b) * config.batch_size;
            const std::size_t hi =
                std::min(lo + config.batch_size, order.size());
            if (hi - lo < 2) continue;  // range BN needs at least two samples
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                         order.begin() + static_cast<std::ptrdiff_t>(hi));
            Tensor batch = gather_batch(train_data.images, idx);

            const std::string where =
                " at epoch " + std::to_string(epoch) + " batch " + std::to_string(b);
            try {
                std::vector<LayerForwardCache> caches;
                caches.reserve(nl);
                Tensor out = forward_pass(result.model, batch, widths,
                                          config.bypass_quantization, true, &caches, sink);
                Tensor logits = out.reshaped(
                    {out.dim(0), static_cast<int>(out.numel() / out.dim(0)), 1, 1});
                LossResult lr = softmax_cross_entropy(logits, train_data.labels, idx);
                if (!std::isfinite(lr.loss))
                    throw DivergenceError("training diverged: loss is not finite" + where);
                loss_sum += lr.loss;
                ++loss_count;
                backward_and_update(result.model, caches, lr.grad, widths,
                                    config.bypass_quantization, epoch_eta, sink);
            } catch (const std::invalid_argument& e) {
                // Inputs and shapes were validated up front; a domain error
                // inside the step means values blew up to non-finite.
                throw DivergenceError(std::string("training diverged: ") + e.what() + where);
            }
        }

        EpochMetrics em;
        em.epoch = epoch;
        em.train_loss = loss_count ? loss_sum / loss_count : 0.0;
        em.eval_accuracy = eval_data.size() > 0
                               ? evaluate(result.model, eval_data, widths,
                                          config.bypass_quantization)
                               : 0.0;
        em.widths = hyst.widths;
        em.zse_ratio.resize(nl);
        for (std::size_t i = 0; i < nl; ++i)
            for (int r = 0; r < 4; ++r)
                em.zse_ratio[i][static_cast<std::size_t>(r)] =
                    hyst.epoch_zse[i][static_cast<std::size_t>(r)].ratio();

        const accel::TrainingStepEstimate step_est = accel::estimate_training_step(
            network.layers, widths, config.batch_size, cost, geometry);
        em.modeled_cycles = step_est.total.total_cycles * batches;
        em.modeled_joules = step_est.energy.joules * batches;
        result.epochs.push_back(em);

        if (config.controller.enabled) {
            for (std::size_t i = 0; i < nl; ++i)
                for (TensorRole role : config.controller.roles) {
                    const auto r = static_cast<std::size_t>(role);
                    hyst.widths[i][r] =
                        controller_step(hyst.epoch_zse[i][r].ratio(), hyst.widths[i][r],
                                        hyst.t_hi, hyst.t_lo);
                }
        }
    }
    return result;
}

std::string metrics_csv(const std::vector<EpochMetrics>& metrics,
                        const std::vector<std::string>& layer_names) {
    std::string out = "epoch,loss,accuracy";
    for (const std::string& name : layer_names)
        for (const char* role : {"x", "w", "g", "wg"})
            out += "," + name + "_" + role + "_bits";
    for (const std::string& name : layer_names)
        for (const char* role : {"x", "w", "g", "wg"})
            out += "," + name + "_" + role + "_zse";
    out += ",cycles,joules\n";

    char buf[64];
    for (const EpochMetrics& em : metrics) {
        out += std::to_string(em.epoch);
        std::snprintf(buf, sizeof buf, ",%.9g,%.9g", em.train_loss, em.eval_accuracy);
        out += buf;
        for (const auto& per_layer : em.widths)
            for (MantissaWidth w : per_layer) out += "," + std::to_string(bits(w));
        for (const auto& per_layer : em.zse_ratio)
            for (double z : per_layer) {
                std::snprintf(buf, sizeof buf, ",%.9g", z);
                out += buf;
            }
        std::snprintf(buf, sizeof buf, ",%lld,%.9g",
                      static_cast<long long>(em.modeled_cycles), em.modeled_joules);
        out += buf;
        out += "\n";
    }
    return out;
}

std::uint64_t content_hash(std::string_view bytes) {
    // FNV-1a, 64 bit.
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace bfpkit::train
