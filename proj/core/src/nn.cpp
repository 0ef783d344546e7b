#include "bfpkit/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace bfpkit::nn {

void LayerSpec::validate() const {
    if (c_in < 1 || c_out < 1 || h < 1 || w < 1)
        throw std::invalid_argument("layer dimensions must be positive");
    if (stride < 1) throw std::invalid_argument("stride must be >= 1");
    if (padding < 0) throw std::invalid_argument("padding must be >= 0");
    if (depthwise() && c_in != c_out)
        throw std::invalid_argument("depthwise layer requires c_in == c_out");
    if (out_h() < 1 || out_w() < 1)
        throw std::invalid_argument("layer output collapses to zero size");
    if (activation.kind == ActivationSpec::Kind::relu_alpha && !(activation.alpha > 0))
        throw std::invalid_argument("relu_alpha requires alpha > 0");
    if (pool.kind != PoolSpec::Kind::none && pool.window < 1)
        throw std::invalid_argument("pool window must be >= 1");
}

namespace {

void check_shape(const std::vector<int>& got, const std::vector<int>& want,
                 const char* name) {
    if (got != want)
        throw std::invalid_argument(std::string(name) + " shape " + shape_string(got) +
                                    " does not match expected " + shape_string(want));
}

std::vector<int> x_shape(const LayerSpec& s, int n) { return {n, s.c_in, s.h, s.w}; }

std::vector<int> w_shape(const LayerSpec& s) {
    return {s.c_out, s.depthwise() ? 1 : s.c_in, s.kernel(), s.kernel()};
}

std::vector<int> y_shape(const LayerSpec& s, int n) {
    return {n, s.c_out, s.out_h(), s.out_w()};
}

}  // namespace

Tensor forward_conv(const bfp::BfpTensor& x, const bfp::BfpTensor& w,
                    const LayerSpec& spec) {
    spec.validate();
    const int batch = x.shape.empty() ? 0 : x.shape[0];
    check_shape(x.shape, x_shape(spec, batch), "input");
    check_shape(w.shape, w_shape(spec), "weight");
    if (w.ytiles != 1 || w.xtiles != 1)
        throw std::invalid_argument("weight blocks must span the whole kernel window");

    const int k = spec.kernel(), stride = spec.stride, pad = spec.padding;
    const int h = spec.h, wpx = spec.w;
    const int ho = spec.out_h(), wo = spec.out_w();
    const int bh = x.block_shape.kh, bw = x.block_shape.kw;
    const int xd = x.block_shape.depth, wd = w.block_shape.depth;
    const int ci = spec.depthwise() ? 1 : spec.c_in;

    Tensor y(y_shape(spec, batch));

    for (int n = 0; n < batch; ++n) {
        for (int co = 0; co < spec.c_out; ++co) {
            for (int oy = 0; oy < ho; ++oy) {
                for (int ox = 0; ox < wo; ++ox) {
                    const int y0 = oy * stride - pad;
                    const int x0 = ox * stride - pad;
                    const int yy_lo = std::max(y0, 0), yy_hi = std::min(y0 + k, h);
                    const int xx_lo = std::max(x0, 0), xx_hi = std::min(x0 + k, wpx);
                    double acc = 0.0;

                    // Channel runs where both operands stay inside one block.
                    int c = 0;
                    while (c < ci) {
                        // For depthwise layers the x channel is co itself and
                        // the kernel has a single input channel.
                        const int xc = spec.depthwise() ? co : c;
                        const int gx = xc / xd;
                        const int gw = c / wd;
                        const int c_end = spec.depthwise()
                                              ? 1
                                              : std::min({(gx + 1) * xd, (gw + 1) * wd, ci});
                        const bfp::BfpBlock& wb = w.block_at(co, gw, 0, 0);
                        if (wb.all_zero()) {
                            c = c_end;
                            continue;
                        }
                        const int run = c_end - c;
                        for (int ty = yy_lo / bh; ty * bh < yy_hi; ++ty) {
                            const int ry_lo = std::max(yy_lo, ty * bh);
                            const int ry_hi = std::min(yy_hi, (ty + 1) * bh);
                            for (int tx = xx_lo / bw; tx * bw < xx_hi; ++tx) {
                                const bfp::BfpBlock& xb = x.block_at(n, gx, ty, tx);
                                if (xb.all_zero()) continue;
                                const int rx_lo = std::max(xx_lo, tx * bw);
                                const int rx_hi = std::min(xx_hi, (tx + 1) * bw);
                                std::int64_t isum = 0;
                                for (int cc = 0; cc < run; ++cc) {
                                    const int xcl = (spec.depthwise() ? co : c + cc) - gx * xd;
                                    const int wcl = (c + cc) - gw * wd;
                                    for (int yy = ry_lo; yy < ry_hi; ++yy) {
                                        const int xrow = x.elem_index(xcl, yy - ty * bh, 0);
                                        const int wrow = w.elem_index(wcl, yy - y0, 0);
                                        for (int xx = rx_lo; xx < rx_hi; ++xx) {
                                            isum += static_cast<std::int64_t>(
                                                        xb.mantissas[xrow + (xx - tx * bw)]) *
                                                    static_cast<std::int64_t>(
                                                        wb.mantissas[wrow + (xx - x0)]);
                                        }
                                    }
                                }
                                acc += std::ldexp(static_cast<double>(isum),
                                                  xb.scale_exponent() + wb.scale_exponent());
                            }
                        }
                        c = c_end;
                    }
                    y.at(n, co, oy, ox) = acc;
                }
            }
        }
    }
    return y;
}

Tensor forward_conv_real(const Tensor& x, const Tensor& w, const LayerSpec& spec) {
    spec.validate();
    const int batch = x.shape.empty() ? 0 : x.shape[0];
    check_shape(x.shape, x_shape(spec, batch), "input");
    check_shape(w.shape, w_shape(spec), "weight");

    const int k = spec.kernel(), stride = spec.stride, pad = spec.padding;
    Tensor y(y_shape(spec, batch));
    const int ci = spec.depthwise() ? 1 : spec.c_in;

    for (int n = 0; n < batch; ++n)
        for (int co = 0; co < spec.c_out; ++co)
            for (int oy = 0; oy < spec.out_h(); ++oy)
                for (int ox = 0; ox < spec.out_w(); ++ox) {
                    const int y0 = oy * stride - pad, x0 = ox * stride - pad;
                    double acc = 0.0;
                    for (int c = 0; c < ci; ++c) {
                        const int xc = spec.depthwise() ? co : c;
                        for (int ky = 0; ky < k; ++ky) {
                            const int yy = y0 + ky;
                            if (yy < 0 || yy >= spec.h) continue;
                            for (int kx = 0; kx < k; ++kx) {
                                const int xx = x0 + kx;
                                if (xx < 0 || xx >= spec.w) continue;
                                acc += x.at(n, xc, yy, xx) * w.at(co, c, ky, kx);
                            }
                        }
                    }
                    y.at(n, co, oy, ox) = acc;
                }
    return y;
}

Tensor backward_conv_real(const Tensor& g_y, const Tensor& w, const LayerSpec& spec) {
    spec.validate();
    const int batch = g_y.shape.empty() ? 0 : g_y.shape[0];
    check_shape(g_y.shape, y_shape(spec, batch), "output gradient");
    check_shape(w.shape, w_shape(spec), "weight");

    const int k = spec.kernel(), stride = spec.stride, pad = spec.padding;
    Tensor g_x(x_shape(spec, batch));

    for (int n = 0; n < batch; ++n)
        for (int c = 0; c < spec.c_in; ++c)
            for (int yy = 0; yy < spec.h; ++yy)
                for (int xx = 0; xx < spec.w; ++xx) {
                    double acc = 0.0;
                    const int co_lo = spec.depthwise() ? c : 0;
                    const int co_hi = spec.depthwise() ? c + 1 : spec.c_out;
                    for (int co = co_lo; co < co_hi; ++co) {
                        const int wc = spec.depthwise() ? 0 : c;
                        for (int ky = 0; ky < k; ++ky) {
                            const int num_y = yy + pad - ky;
                            if (num_y < 0 || num_y % stride != 0) continue;
                            const int oy = num_y / stride;
                            if (oy >= spec.out_h()) continue;
                            for (int kx = 0; kx < k; ++kx) {
                                const int num_x = xx + pad - kx;
                                if (num_x < 0 || num_x % stride != 0) continue;
                                const int ox = num_x / stride;
                                if (ox >= spec.out_w()) continue;
                                acc += g_y.at(n, co, oy, ox) * w.at(co, wc, ky, kx);
                            }
                        }
                    }
                    g_x.at(n, c, yy, xx) = acc;
                }
    return g_x;
}

Tensor backward_conv(const bfp::BfpTensor& g_y, const bfp::BfpTensor& w,
                     const LayerSpec& spec) {
    // Decoding is exact, and every elementary product of two decoded values
    // is exactly representable, so computing in the decoded domain matches
    // mantissa-space arithmetic term for term.
    return backward_conv_real(bfp::dequantize_tensor(g_y), bfp::dequantize_tensor(w), spec);
}

Tensor weight_gradient_real(const Tensor& g_y, const Tensor& x, const LayerSpec& spec) {
    spec.validate();
    const int batch = x.shape.empty() ? 0 : x.shape[0];
    check_shape(x.shape, x_shape(spec, batch), "input");
    check_shape(g_y.shape, y_shape(spec, batch), "output gradient");

    const int k = spec.kernel(), stride = spec.stride, pad = spec.padding;
    Tensor dw(w_shape(spec));

    for (int co = 0; co < spec.c_out; ++co) {
        const int ci_lo = spec.depthwise() ? co : 0;
        const int ci_hi = spec.depthwise() ? co + 1 : spec.c_in;
        for (int c = ci_lo; c < ci_hi; ++c) {
            const int wc = spec.depthwise() ? 0 : c;
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    double acc = 0.0;
                    for (int n = 0; n < batch; ++n)
                        for (int oy = 0; oy < spec.out_h(); ++oy) {
                            const int yy = oy * stride + ky - pad;
                            if (yy < 0 || yy >= spec.h) continue;
                            for (int ox = 0; ox < spec.out_w(); ++ox) {
                                const int xx = ox * stride + kx - pad;
                                if (xx < 0 || xx >= spec.w) continue;
                                acc += x.at(n, c, yy, xx) * g_y.at(n, co, oy, ox);
                            }
                        }
                    dw.at(co, wc, ky, kx) = acc;
                }
        }
    }
    return dw;
}

Tensor weight_gradient(const bfp::BfpTensor& g_y, const bfp::BfpTensor& x,
                       const LayerSpec& spec, MantissaWidth wg_width) {
    // Re-encode both operands at the weight-gradient width. Widening an
    // existing block is lossless; tensors quantized at wg_width straight
    // from wide float pass through unchanged.
    const auto reblock = [&](const bfp::BfpTensor& t) {
        if (t.width == wg_width) return bfp::dequantize_tensor(t);
        Tensor dense = bfp::dequantize_tensor(t);
        return bfp::dequantize_tensor(bfp::block_tensor(dense, t.block_shape, wg_width));
    };
    return weight_gradient_real(reblock(g_y), reblock(x), spec);
}

Tensor weight_update(const Tensor& w, const Tensor& dw, double eta) {
    if (!w.same_shape(dw))
        throw std::invalid_argument("weight_update shape mismatch");
    if (!(eta > 0)) throw std::invalid_argument("learning rate must be positive");
    Tensor out = w;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= eta * dw.data[i];
    return out;
}

// --- Activation -----------------------------------------------------------

Tensor activation_fwd(const Tensor& x, const ActivationSpec& spec) {
    Tensor y = x;
    switch (spec.kind) {
        case ActivationSpec::Kind::none:
            break;
        case ActivationSpec::Kind::relu:
            for (double& v : y.data) v = std::max(0.0, v);
            break;
        case ActivationSpec::Kind::relu_alpha:
            for (double& v : y.data) v = std::min(std::max(0.0, v), spec.alpha);
            break;
    }
    return y;
}

Tensor activation_bwd(const Tensor& g, const Tensor& x_pre, const ActivationSpec& spec) {
    if (!g.same_shape(x_pre))
        throw std::invalid_argument("activation_bwd shape mismatch");
    Tensor out = g;
    switch (spec.kind) {
        case ActivationSpec::Kind::none:
            break;
        case ActivationSpec::Kind::relu:
            for (std::size_t i = 0; i < out.data.size(); ++i)
                if (!(x_pre.data[i] > 0.0)) out.data[i] = 0.0;
            break;
        case ActivationSpec::Kind::relu_alpha:
            for (std::size_t i = 0; i < out.data.size(); ++i)
                if (!(x_pre.data[i] > 0.0 && x_pre.data[i] < spec.alpha)) out.data[i] = 0.0;
            break;
    }
    return out;
}

// --- Pooling ---------------------------------------------------------------

Tensor pool_fwd(const Tensor& x, const PoolSpec& spec, PoolCache* cache) {
    if (spec.kind == PoolSpec::Kind::none) {
        if (cache) cache->in_shape = x.shape;
        return x;
    }
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int win = spec.window, stride = spec.stride;
    if (win > h || win > w)
        throw std::invalid_argument("pool window larger than input");
    const int ho = (h - win) / stride + 1;
    const int wo = (w - win) / stride + 1;

    Tensor y({n, c, ho, wo});
    if (cache) {
        cache->in_shape = x.shape;
        cache->argmax.assign(static_cast<std::size_t>(y.numel()), -1);
    }
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    const int y0 = oy * stride, x0 = ox * stride;
                    if (spec.kind == PoolSpec::Kind::max) {
                        double best = x.at(ni, ci, y0, x0);
                        std::int64_t best_idx =
                            static_cast<std::int64_t>(x.idx4(ni, ci, y0, x0));
                        for (int dy = 0; dy < win; ++dy)
                            for (int dx = 0; dx < win; ++dx) {
                                const double v = x.at(ni, ci, y0 + dy, x0 + dx);
                                if (v > best) {
                                    best = v;
                                    best_idx = static_cast<std::int64_t>(
                                        x.idx4(ni, ci, y0 + dy, x0 + dx));
                                }
                            }
                        y.at(ni, ci, oy, ox) = best;
                        if (cache)
                            cache->argmax[y.idx4(ni, ci, oy, ox)] = best_idx;
                    } else {
                        double sum = 0.0;
                        for (int dy = 0; dy < win; ++dy)
                            for (int dx = 0; dx < win; ++dx)
                                sum += x.at(ni, ci, y0 + dy, x0 + dx);
                        y.at(ni, ci, oy, ox) = sum / (win * win);
                    }
                }
    return y;
}

Tensor pool_bwd(const Tensor& g, const PoolSpec& spec, const PoolCache& cache) {
    if (spec.kind == PoolSpec::Kind::none) return g;
    Tensor g_in(cache.in_shape);
    const int n = g.dim(0), c = g.dim(1), ho = g.dim(2), wo = g.dim(3);
    const int win = spec.window, stride = spec.stride;
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    const double gv = g.at(ni, ci, oy, ox);
                    if (spec.kind == PoolSpec::Kind::max) {
                        g_in.data[static_cast<std::size_t>(
                            cache.argmax[g.idx4(ni, ci, oy, ox)])] += gv;
                    } else {
                        const double share = gv / (win * win);
                        for (int dy = 0; dy < win; ++dy)
                            for (int dx = 0; dx < win; ++dx)
                                g_in.at(ni, ci, oy * stride + dy, ox * stride + dx) += share;
                    }
                }
    return g_in;
}

// --- Range batch normalization ---------------------------------------------

Tensor range_batch_norm_fwd(const Tensor& x, BatchNormState& state, bool training,
                            BatchNormCache* cache) {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (static_cast<int>(state.gamma.size()) != c)
        throw std::invalid_argument("batch norm state channel mismatch");
    const std::int64_t count = static_cast<std::int64_t>(n) * h * w;
    if (training && count < 2)
        throw std::invalid_argument("range batch norm needs at least 2 samples per channel");

    Tensor y(x.shape);
    if (cache) {
        cache->mean.assign(c, 0.0);
        cache->scale.assign(c, 1.0);
        cache->amax.assign(c, -1);
        cache->amin.assign(c, -1);
        cache->count = count;
    }
    const double range_coeff =
        training ? 1.0 / std::sqrt(2.0 * std::log(static_cast<double>(count))) : 0.0;

    for (int ci = 0; ci < c; ++ci) {
        double mean, scale;
        if (training) {
            double sum = 0.0, mx = -std::numeric_limits<double>::infinity(),
                   mn = std::numeric_limits<double>::infinity();
            std::int64_t amax = -1, amin = -1;
            for (int ni = 0; ni < n; ++ni)
                for (int yy = 0; yy < h; ++yy)
                    for (int xx = 0; xx < w; ++xx) {
                        const double v = x.at(ni, ci, yy, xx);
                        sum += v;
                        if (v > mx) {
                            mx = v;
                            amax = static_cast<std::int64_t>(x.idx4(ni, ci, yy, xx));
                        }
                        if (v < mn) {
                            mn = v;
                            amin = static_cast<std::int64_t>(x.idx4(ni, ci, yy, xx));
                        }
                    }
            mean = sum / static_cast<double>(count);
            scale = range_coeff * (mx - mn) + state.epsilon;
            state.running_mean[ci] =
                (1.0 - state.momentum) * state.running_mean[ci] + state.momentum * mean;
            state.running_scale[ci] =
                (1.0 - state.momentum) * state.running_scale[ci] + state.momentum * scale;
            if (cache) {
                cache->mean[ci] = mean;
                cache->scale[ci] = scale;
                cache->amax[ci] = amax;
                cache->amin[ci] = amin;
            }
        } else {
            mean = state.running_mean[ci];
            scale = state.running_scale[ci];
        }
        const double g = state.gamma[ci], b = state.beta[ci];
        for (int ni = 0; ni < n; ++ni)
            for (int yy = 0; yy < h; ++yy)
                for (int xx = 0; xx < w; ++xx)
                    y.at(ni, ci, yy, xx) = g * (x.at(ni, ci, yy, xx) - mean) / scale + b;
    }
    return y;
}

BatchNormGrads range_batch_norm_bwd(const Tensor& g, const Tensor& x,
                                    const BatchNormState& state,
                                    const BatchNormCache& cache) {
    if (!g.same_shape(x)) throw std::invalid_argument("range_batch_norm_bwd shape mismatch");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const double count = static_cast<double>(cache.count);
    const double range_coeff = 1.0 / std::sqrt(2.0 * std::log(count));

    BatchNormGrads out;
    out.g_x = Tensor(x.shape);
    out.g_gamma.assign(c, 0.0);
    out.g_beta.assign(c, 0.0);

    for (int ci = 0; ci < c; ++ci) {
        const double mean = cache.mean[ci], scale = cache.scale[ci];
        const double gamma = state.gamma[ci];
        double g_sum = 0.0, gx_dot = 0.0;
        for (int ni = 0; ni < n; ++ni)
            for (int yy = 0; yy < h; ++yy)
                for (int xx = 0; xx < w; ++xx) {
                    const double gv = g.at(ni, ci, yy, xx);
                    const double centered = x.at(ni, ci, yy, xx) - mean;
                    g_sum += gv;
                    gx_dot += gv * centered;
                }
        out.g_beta[ci] = g_sum;
        out.g_gamma[ci] = gx_dot / scale;

        const double g_mean = g_sum / count;
        for (int ni = 0; ni < n; ++ni)
            for (int yy = 0; yy < h; ++yy)
                for (int xx = 0; xx < w; ++xx)
                    out.g_x.at(ni, ci, yy, xx) =
                        gamma / scale * (g.at(ni, ci, yy, xx) - g_mean);
        // Range term: the scale depends on x only through the extreme
        // elements.
        const double range_grad = gamma * range_coeff * gx_dot / (scale * scale);
        out.g_x.data[static_cast<std::size_t>(cache.amax[ci])] -= range_grad;
        out.g_x.data[static_cast<std::size_t>(cache.amin[ci])] += range_grad;
    }
    return out;
}

}  // namespace bfpkit::nn
