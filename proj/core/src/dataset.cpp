#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

#include "bfpkit/train.hpp"

namespace bfpkit::train {

namespace {

/// Low-frequency wave pattern from a seeded stream, normalized to zero
/// mean and unit deviation.
std::vector<double> wave_pattern(std::uint64_t seed, int h, int w) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> freq(0.5, 2.5);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> amp(0.6, 1.2);

    struct Wave {
        double fy, fx, ph, a;
    };
    std::vector<Wave> waves(3);
    for (auto& wv : waves) wv = {freq(rng), freq(rng), phase(rng), amp(rng)};

    std::vector<double> t(static_cast<std::size_t>(h) * w, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double v = 0.0;
            for (const auto& wv : waves)
                v += wv.a * std::cos(2.0 * std::numbers::pi *
                                         (wv.fy * y / h + wv.fx * x / w) +
                                     wv.ph);
            t[static_cast<std::size_t>(y) * w + x] = v;
        }
    double mean = 0.0;
    for (double v : t) mean += v;
    mean /= static_cast<double>(t.size());
    double var = 0.0;
    for (double v : t) var += (v - mean) * (v - mean);
    const double inv_std = 1.0 / std::sqrt(var / static_cast<double>(t.size()) + 1e-12);
    for (double& v : t) v = (v - mean) * inv_std;
    return t;
}

}  // namespace

Dataset make_synthetic(const SyntheticSpec& spec, bool train_split) {
    if (spec.classes < 2 || spec.h < 4 || spec.w < 4)
        throw std::invalid_argument("synthetic dataset spec out of range");
    const int count = train_split ? spec.train_samples : spec.test_samples;
    if (count < 1) throw std::invalid_argument("synthetic dataset needs samples");

    const std::vector<double> base = wave_pattern(spec.seed * 977 + 5, spec.h, spec.w);
    std::vector<std::vector<double>> patterns;
    patterns.reserve(static_cast<std::size_t>(spec.classes));
    for (int c = 0; c < spec.classes; ++c)
        patterns.push_back(wave_pattern(
            spec.seed * 7919 + static_cast<std::uint64_t>(c) * 104729 + 13, spec.h, spec.w));

    // Separate streams keep the two splits disjoint but reproducible.
    std::mt19937_64 rng(spec.seed * 31 + (train_split ? 1 : 2));
    std::normal_distribution<double> noise(0.0, spec.noise);
    std::uniform_real_distribution<double> amp(0.7, 1.3);
    std::uniform_int_distribution<int> shift(-2, 2);

    Dataset ds;
    ds.images = Tensor({count, 1, spec.h, spec.w});
    ds.labels.resize(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const int cls = i % spec.classes;
        ds.labels[static_cast<std::size_t>(i)] = cls;
        const double a = amp(rng);
        const int dy = shift(rng), dx = shift(rng);
        const auto& pat = patterns[static_cast<std::size_t>(cls)];
        for (int y = 0; y < spec.h; ++y)
            for (int x = 0; x < spec.w; ++x) {
                const int sy = ((y + dy) % spec.h + spec.h) % spec.h;
                const int sx = ((x + dx) % spec.w + spec.w) % spec.w;
                const std::size_t src = static_cast<std::size_t>(sy) * spec.w + sx;
                ds.images.at(i, 0, y, x) =
                    a * (base[src] + spec.class_separation * pat[src]) + noise(rng);
            }
    }
    return ds;
}

NetworkSpec desk_network() {
    NetworkSpec net;
    net.in_channels = 1;
    net.in_h = 16;
    net.in_w = 16;
    net.classes = 10;

    nn::LayerSpec stage1;
    stage1.kind = LayerKind::Conv3;
    stage1.c_in = 1;
    stage1.c_out = 12;
    stage1.h = 16;
    stage1.w = 16;
    stage1.stride = 1;
    stage1.padding = 1;
    stage1.batch_norm = true;
    stage1.activation = {nn::ActivationSpec::Kind::relu, 0.0};
    stage1.pool = {nn::PoolSpec::Kind::max, 2, 2};

    nn::LayerSpec stage2 = stage1;
    stage2.c_in = 12;
    stage2.c_out = 20;
    stage2.h = 8;
    stage2.w = 8;

    nn::LayerSpec head;
    head.kind = LayerKind::Conv1x1_or_FC;
    head.c_in = 20 * 4 * 4;
    head.c_out = 10;
    head.h = 1;
    head.w = 1;

    net.layers = {stage1, stage2, head};
    return net;
}

namespace {

std::uint32_t read_be32(std::ifstream& f, const std::string& path) {
    unsigned char b[4];
    if (!f.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error("truncated idx file: " + path);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace

Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                         int limit) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw std::runtime_error("cannot open " + images_path);
    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) throw std::runtime_error("cannot open " + labels_path);

    if (read_be32(imgs, images_path) != 0x00000803u)
        throw std::runtime_error("bad image idx magic in " + images_path);
    const int n_img = static_cast<int>(read_be32(imgs, images_path));
    const int h = static_cast<int>(read_be32(imgs, images_path));
    const int w = static_cast<int>(read_be32(imgs, images_path));
    if (read_be32(labs, labels_path) != 0x00000801u)
        throw std::runtime_error("bad label idx magic in " + labels_path);
    const int n_lab = static_cast<int>(read_be32(labs, labels_path));

    const int n = std::min({limit, n_img, n_lab});
    if (n <= 0) throw std::runtime_error("idx dataset is empty");

    Dataset ds;
    ds.images = Tensor({n, 1, h, w});
    ds.labels.resize(static_cast<std::size_t>(n));
    std::vector<unsigned char> row(static_cast<std::size_t>(h) * w);
    for (int i = 0; i < n; ++i) {
        if (!imgs.read(reinterpret_cast<char*>(row.data()),
                       static_cast<std::streamsize>(row.size())))
            throw std::runtime_error("truncated idx image data in " + images_path);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                ds.images.at(i, 0, y, x) =
                    row[static_cast<std::size_t>(y) * w + x] / 255.0 - 0.5;
        char lab = 0;
        if (!labs.read(&lab, 1))
            throw std::runtime_error("truncated idx label data in " + labels_path);
        ds.labels[static_cast<std::size_t>(i)] = static_cast<unsigned char>(lab);
    }
    return ds;
}

}  // namespace bfpkit::train
