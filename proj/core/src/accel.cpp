#include "bfpkit/accel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bfpkit::accel {

void CoreGeometry::validate() const {
    if (mults_per_pe < 1 || pes_per_pu < 1 || pus_per_subcore < 1 ||
        subcores_per_core < 1 || cores < 1)
        throw std::invalid_argument("geometry counts must be >= 1");
    if (!(clock_hz > 0)) throw std::invalid_argument("clock must be positive");
}

void CostModelConfig::validate() const {
    if (input_buffer < 1 || weight_buffer < 1 || output_buffer < 1)
        throw std::invalid_argument("buffer sizes must be positive");
    if (!(dram_bandwidth > 0)) throw std::invalid_argument("dram bandwidth must be positive");
    if (dram_latency < 0) throw std::invalid_argument("dram latency must be >= 0");
    if (!(power_fb12 > 0) || !(power_fb16 > 0) || !(power_fb24 > 0))
        throw std::invalid_argument("mode power must be positive");
    if (dram_energy_per_byte < 0)
        throw std::invalid_argument("dram energy must be >= 0");
}

double CostModelConfig::mode_power(MantissaWidth widest) const {
    switch (widest) {
        case MantissaWidth::w4: return power_fb12;
        case MantissaWidth::w8: return power_fb16;
        default: return power_fb24;
    }
}

namespace {

int subwords(MantissaWidth w) { return bits(w) / 4; }

std::int64_t ceil_div64(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

/// Sub-word parallelism available at one level: how many independent
/// elements fit when each element occupies `sub` lanes of `lanes`.
int level_parallelism(int lanes, int sub, const char* level) {
    if (lanes % sub != 0)
        throw std::invalid_argument(std::string("geometry cannot carry this width at the ") +
                                    level + " level");
    return lanes / sub;
}

struct Clustering {
    int cluster_size;
    int clusters;
    std::int64_t fit_num;
    std::int64_t fit_den;
};

/// Group subcores so a cluster covers the kernel window. 1x1 kernels put
/// a reduction dimension on the multipliers instead and fit perfectly.
Clustering cluster_for_kernel(int k, const CoreGeometry& g) {
    Clustering c{1, g.subcores_per_core, 1, 1};
    if (k == 1) return c;
    const int kk = k * k;
    c.cluster_size = static_cast<int>(ceil_div64(kk, g.mults_per_pe));
    if (c.cluster_size > g.subcores_per_core)
        throw std::invalid_argument("kernel too large for one core");
    c.clusters = g.subcores_per_core / c.cluster_size;
    c.fit_num = static_cast<std::int64_t>(c.clusters) * kk;
    c.fit_den = static_cast<std::int64_t>(g.subcores_per_core) * g.mults_per_pe;
    const std::int64_t gcd = std::gcd(c.fit_num, c.fit_den);
    c.fit_num /= gcd;
    c.fit_den /= gcd;
    return c;
}

}  // namespace

std::int64_t peak_macs_per_cycle_per_core(const CoreGeometry& g, MantissaWidth x_width,
                                          MantissaWidth w_width) {
    g.validate();
    return static_cast<std::int64_t>(g.mults_per_core()) /
           (subwords(x_width) * subwords(w_width));
}

std::int64_t peak_macs_per_cycle(const CoreGeometry& g, MantissaWidth x_width,
                                 MantissaWidth w_width) {
    return peak_macs_per_cycle_per_core(g, x_width, w_width) * g.cores;
}

MappingPlan plan_mapping(const nn::LayerSpec& layer, MantissaWidth x_width,
                         MantissaWidth w_width, const CoreGeometry& g) {
    g.validate();
    layer.validate();
    const int k = layer.kernel();
    const int pe_par = level_parallelism(g.pes_per_pu, subwords(x_width), "PE");
    const int pu_par = level_parallelism(g.pus_per_subcore, subwords(w_width), "PU");
    const Clustering cl = cluster_for_kernel(k, g);

    MappingPlan p;
    p.kind = layer.kind;
    p.x_width = x_width;
    p.w_width = w_width;
    p.cluster_size = cl.cluster_size;
    p.clusters = cl.clusters;
    p.spatial_fit_num = cl.fit_num;
    p.spatial_fit_den = cl.fit_den;
    p.spatial_positions = (k == 1) ? g.mults_per_pe : k * k;
    p.peak_per_core = peak_macs_per_cycle_per_core(g, x_width, w_width);
    p.dims.pu = "c_out";
    p.dims.pe = "c_in";

    if (layer.depthwise()) {
        // 2D mode: the channel maps to subcores; the PE and PU sub-word
        // slots must agree on it, so only the smaller of the two
        // parallelisms carries distinct channels.
        p.reduction_path = ReductionPath::two_d;
        const int ch = cl.clusters * std::min(pe_par, pu_par);
        p.cin_per_cycle = ch;
        p.cout_per_cycle = ch;
        p.macs_per_cycle_per_core =
            static_cast<std::int64_t>(cl.clusters) * p.spatial_positions *
            std::min(pe_par, pu_par);
        p.dims.subcore = "c_out";
        p.dims.multiplier = "spatial";
    } else {
        p.reduction_path = ReductionPath::three_d;
        p.cin_per_cycle = cl.clusters * pe_par * (k == 1 ? g.mults_per_pe : 1);
        p.cout_per_cycle = pu_par;
        p.macs_per_cycle_per_core = static_cast<std::int64_t>(cl.clusters) *
                                    p.spatial_positions * pe_par * pu_par;
        p.dims.subcore = (k == 1 || k == 3) ? "c_in" : "spatial";
        p.dims.multiplier = (k == 1) ? "c_in" : "spatial";
    }

    p.passes.c_in = ceil_div64(layer.depthwise() ? 1 : layer.c_in, p.cin_per_cycle);
    p.passes.c_out = ceil_div64(layer.c_out, p.cout_per_cycle);
    p.passes.spatial = static_cast<std::int64_t>(layer.out_h()) * layer.out_w();
    return p;
}

MappingPlan plan_mapping_wu(const nn::LayerSpec& layer, MantissaWidth wg_width,
                            const CoreGeometry& g) {
    g.validate();
    layer.validate();
    if (layer.depthwise()) {
        // Depthwise weight gradients pair each channel with itself; the
        // mapping is identical to the depthwise forward shape.
        MappingPlan p = plan_mapping(layer, wg_width, wg_width, g);
        p.dims.subcore = "pairs";
        return p;
    }
    const int k = layer.kernel();
    const int pe_par = level_parallelism(g.pes_per_pu, subwords(wg_width), "PE");
    const int pu_par = level_parallelism(g.pus_per_subcore, subwords(wg_width), "PU");
    const Clustering cl = cluster_for_kernel(k, g);

    MappingPlan p;
    p.kind = layer.kind;
    p.x_width = wg_width;
    p.w_width = wg_width;
    p.reduction_path = ReductionPath::two_d;
    p.cluster_size = cl.cluster_size;
    p.clusters = cl.clusters;
    p.spatial_fit_num = cl.fit_num;
    p.spatial_fit_den = cl.fit_den;
    p.spatial_positions = (k == 1) ? g.mults_per_pe : k * k;
    p.peak_per_core = peak_macs_per_cycle_per_core(g, wg_width, wg_width);
    // (c_in, c_out) pairs: input channels at the PE level, gradient
    // channels at the PU level, further pairs across subcore clusters.
    p.cin_per_cycle = pe_par;
    p.cout_per_cycle = pu_par * cl.clusters;
    p.macs_per_cycle_per_core = static_cast<std::int64_t>(cl.clusters) *
                                p.spatial_positions * pe_par * pu_par;
    p.dims.subcore = "pairs";
    p.dims.pu = "c_out";
    p.dims.pe = "c_in";
    p.dims.multiplier = (k == 1) ? "reduction" : "spatial";

    p.passes.c_in = ceil_div64(layer.c_in, p.cin_per_cycle);
    p.passes.c_out = ceil_div64(layer.c_out, p.cout_per_cycle);
    p.passes.spatial = static_cast<std::int64_t>(layer.out_h()) * layer.out_w();
    return p;
}

namespace {

struct Rational {
    std::int64_t num = 1;
    std::int64_t den = 1;

    Rational times_fill(std::int64_t c, std::int64_t cap) const {
        // fill(c, cap) = c / (ceil(c/cap) * cap)
        const std::int64_t tiles = ceil_div64(c, cap);
        return Rational{num * c, den * tiles * cap};
    }
    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

Rational utilization_rational(const MappingPlan& plan, const nn::LayerSpec& layer) {
    // Useful-per-peak covers both the spatial kernel fit and any sub-word
    // pairing loss (depthwise 2D mode); channel remainders stack on top.
    Rational u{plan.macs_per_cycle_per_core, plan.peak_per_core};
    if (is_depthwise(plan.kind)) {
        u = u.times_fill(layer.c_out, plan.cout_per_cycle);
    } else {
        u = u.times_fill(layer.c_in, plan.cin_per_cycle);
        u = u.times_fill(layer.c_out, plan.cout_per_cycle);
    }
    return u;
}

std::int64_t total_macs(const nn::LayerSpec& layer, int batch) {
    const std::int64_t spatial =
        static_cast<std::int64_t>(layer.out_h()) * layer.out_w();
    const std::int64_t per_out = static_cast<std::int64_t>(layer.kernel()) *
                                 layer.kernel() * (layer.depthwise() ? 1 : layer.c_in);
    return static_cast<std::int64_t>(batch) * layer.c_out * spatial * per_out;
}

/// BFP-encoded size: mantissa bits per element plus one 8-bit shared
/// exponent per block.
std::int64_t bfp_bytes(std::int64_t elements, MantissaWidth w, int block_volume) {
    const std::int64_t bits_total =
        elements * bits(w) + ceil_div64(elements, block_volume) * 8;
    return ceil_div64(bits_total, 8);
}

struct TileModel {
    std::int64_t ntiles = 1;
    std::int64_t bytes_per_tile = 0;
};

/// Pick the largest output tile whose operand footprints fit the on-chip
/// buffers, splitting batch, then output rows/cols, then output channels.
TileModel plan_tiles(const MappingPlan& plan, const nn::LayerSpec& layer, int batch,
                     const CostModelConfig& cost, StepKind step) {
    const int k = layer.kernel();
    std::int64_t nt = batch, ho_t = layer.out_h(), wo_t = layer.out_w(),
                 co_t = layer.c_out;
    const std::int64_t ci = layer.depthwise() ? 1 : layer.c_in;
    const int block_volume = standard_block_shape(plan.kind, plan.x_width).volume();
    const std::int64_t divisor = cost.double_buffering ? 2 : 1;

    const auto footprint = [&](std::int64_t& in_b, std::int64_t& w_b, std::int64_t& out_b) {
        const std::int64_t in_h = (ho_t - 1) * layer.stride + k;
        const std::int64_t in_w = (wo_t - 1) * layer.stride + k;
        const std::int64_t x_elems =
            nt * (layer.depthwise() ? co_t : layer.c_in) *
            std::min<std::int64_t>(in_h, layer.h) * std::min<std::int64_t>(in_w, layer.w);
        const std::int64_t out_elems = nt * co_t * ho_t * wo_t;
        switch (step) {
            case StepKind::forward:
            case StepKind::backward:
                // Backward streams the mirrored problem; operand sizes match
                // the forward shapes at the plan's widths.
                in_b = bfp_bytes(x_elems, plan.x_width, block_volume);
                w_b = bfp_bytes(co_t * ci * k * k, plan.w_width, block_volume);
                out_b = out_elems * 4;  // FP32 before the next FP2BFP stage
                break;
            case StepKind::weight_update:
                in_b = bfp_bytes(x_elems, plan.x_width, block_volume);
                w_b = bfp_bytes(out_elems, plan.w_width, block_volume);  // G_Y tile
                out_b = co_t * ci * k * k * 4;  // weight-gradient tile
                break;
        }
    };

    std::int64_t in_b = 0, w_b = 0, out_b = 0;
    for (;;) {
        footprint(in_b, w_b, out_b);
        const bool fits = in_b <= cost.input_buffer / divisor &&
                          w_b <= cost.weight_buffer / divisor &&
                          out_b <= cost.output_buffer / divisor;
        if (fits) break;
        if (nt > 1) nt = ceil_div64(nt, 2);
        else if (ho_t > 1) ho_t = ceil_div64(ho_t, 2);
        else if (wo_t > 1) wo_t = ceil_div64(wo_t, 2);
        else if (co_t > 1) co_t = ceil_div64(co_t, 2);
        else break;  // minimum tile still over capacity: stall dominated
    }

    TileModel tm;
    tm.ntiles = ceil_div64(batch, nt) * ceil_div64(layer.out_h(), ho_t) *
                ceil_div64(layer.out_w(), wo_t) * ceil_div64(layer.c_out, co_t);
    tm.bytes_per_tile = in_b + w_b + out_b;
    return tm;
}

struct CycleAndBytes {
    CycleEstimate est;
    std::int64_t dram_bytes = 0;
};

CycleAndBytes estimate_cycles_internal(const MappingPlan& plan, const nn::LayerSpec& layer,
                                       int batch, const CostModelConfig& cost,
                                       const CoreGeometry& g, StepKind step) {
    cost.validate();
    if (batch < 0) throw std::invalid_argument("batch must be >= 0");
    CycleAndBytes out;
    const std::int64_t macs = total_macs(layer, batch);
    if (macs == 0) return out;

    const Rational util = utilization_rational(plan, layer);
    // cycles = ceil(macs / (peak * cores * util)), kept in integers.
    const unsigned __int128 num =
        static_cast<unsigned __int128>(macs) * static_cast<unsigned __int128>(util.den);
    const unsigned __int128 den = static_cast<unsigned __int128>(plan.peak_per_core) *
                                  static_cast<unsigned __int128>(g.cores) *
                                  static_cast<unsigned __int128>(util.num);
    out.est.compute_cycles = static_cast<std::int64_t>((num + den - 1) / den);
    out.est.utilization = util.value();

    const TileModel tm = plan_tiles(plan, layer, batch, cost, step);
    const double bytes_per_cycle = cost.dram_bandwidth / g.clock_hz;
    const std::int64_t transfer =
        cost.dram_latency +
        static_cast<std::int64_t>(
            std::ceil(static_cast<double>(tm.bytes_per_tile) / bytes_per_cycle));
    const std::int64_t compute_per_tile = ceil_div64(out.est.compute_cycles, tm.ntiles);
    if (cost.double_buffering) {
        out.est.memory_stall_cycles =
            tm.ntiles * std::max<std::int64_t>(0, transfer - compute_per_tile);
    } else {
        out.est.memory_stall_cycles = tm.ntiles * transfer;
    }
    out.est.total_cycles = out.est.compute_cycles + out.est.memory_stall_cycles;
    out.dram_bytes = tm.ntiles * tm.bytes_per_tile;
    return out;
}

}  // namespace

double utilization(const MappingPlan& plan, const nn::LayerSpec& layer) {
    return utilization_rational(plan, layer).value();
}

std::int64_t accumulation_scale_factor(ParallelismStyle style, int x_halvings,
                                       int w_halvings) {
    if (x_halvings < 0 || w_halvings < 0)
        throw std::invalid_argument("halving counts must be >= 0");
    const int exp =
        style == ParallelismStyle::fusion_unit ? x_halvings + w_halvings
                                               : std::max(x_halvings, w_halvings);
    return std::int64_t{1} << exp;
}

CycleEstimate estimate_cycles(const MappingPlan& plan, const nn::LayerSpec& layer,
                              int batch, const CostModelConfig& cost,
                              const CoreGeometry& g, StepKind step) {
    return estimate_cycles_internal(plan, layer, batch, cost, g, step).est;
}

TrainingStepEstimate estimate_training_step(const std::vector<nn::LayerSpec>& layers,
                                            const std::vector<nn::PrecisionConfig>& precision,
                                            int batch, const CostModelConfig& cost,
                                            const CoreGeometry& g) {
    if (layers.size() != precision.size())
        throw std::invalid_argument("one precision config per layer required");
    TrainingStepEstimate agg;
    double util_weight = 0.0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const nn::LayerSpec& layer = layers[i];
        const nn::PrecisionConfig& pc = precision[i];
        const struct {
            StepKind step;
            MappingPlan plan;
            MantissaWidth widest;
        } passes[3] = {
            {StepKind::forward, plan_mapping(layer, pc.x_width, pc.w_width, g),
             std::max(pc.x_width, pc.w_width)},
            {StepKind::backward, plan_mapping(layer, pc.g_width, pc.w_width, g),
             std::max(pc.g_width, pc.w_width)},
            {StepKind::weight_update, plan_mapping_wu(layer, pc.wg_width, g), pc.wg_width},
        };
        for (const auto& pass : passes) {
            const CycleAndBytes cb =
                estimate_cycles_internal(pass.plan, layer, batch, cost, g, pass.step);
            StepEstimate row;
            row.layer_id = static_cast<int>(i);
            row.step = pass.step;
            row.cycles = cb.est;
            row.utilization = cb.est.utilization;
            row.energy.joules =
                static_cast<double>(cb.est.total_cycles) / g.clock_hz *
                    cost.mode_power(pass.widest) +
                cost.dram_energy_per_byte * static_cast<double>(cb.dram_bytes);
            agg.total.compute_cycles += cb.est.compute_cycles;
            agg.total.memory_stall_cycles += cb.est.memory_stall_cycles;
            agg.total.total_cycles += cb.est.total_cycles;
            agg.energy.joules += row.energy.joules;
            util_weight += cb.est.utilization * static_cast<double>(cb.est.compute_cycles);
            agg.rows.push_back(std::move(row));
        }
    }
    agg.total.utilization = agg.total.compute_cycles > 0
                                ? util_weight / static_cast<double>(agg.total.compute_cycles)
                                : 1.0;
    return agg;
}

}  // namespace bfpkit::accel
