#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bfpkit/formats.hpp"
#include "bfpkit/nn.hpp"

namespace bfpkit::accel {

/// Compute hierarchy of one accelerator: 4-bit multipliers grouped into
/// PEs, PEs into PUs (input sub-word parallelism), PUs into subcores
/// (weight sub-word parallelism), subcores into cores.
struct CoreGeometry {
    int mults_per_pe = 9;
    int pes_per_pu = 4;
    int pus_per_subcore = 4;
    int subcores_per_core = 6;
    int cores = 64;
    double clock_hz = 333e6;

    int mults_per_core() const {
        return mults_per_pe * pes_per_pu * pus_per_subcore * subcores_per_core;
    }
    void validate() const;
};

/// Buffer, DRAM and power calibration constants for the cost model.
struct CostModelConfig {
    std::int64_t input_buffer = 512 * 1024;
    std::int64_t weight_buffer = 512 * 1024;
    std::int64_t output_buffer = 256 * 1024;
    double dram_bandwidth = 25.6e9;  // bytes/s, calibration knob
    int dram_latency = 100;          // cycles per tile transfer, calibration knob
    double power_fb12 = 8.27;        // watts per mode, calibration constants
    double power_fb16 = 7.80;
    double power_fb24 = 7.36;
    double dram_energy_per_byte = 0.0;  // joules, off by default
    bool double_buffering = true;

    void validate() const;
    double mode_power(MantissaWidth widest) const;
};

enum class ReductionPath { two_d, three_d };

enum class StepKind { forward, backward, weight_update };

inline const char* step_name(StepKind s) {
    switch (s) {
        case StepKind::forward: return "fw";
        case StepKind::backward: return "bw";
        default: return "wu";
    }
}

/// Which tensor dimension each hierarchy level carries for a mapping.
struct DimAssignment {
    std::string subcore;
    std::string pu;
    std::string pe;
    std::string multiplier;
};

/// Tile iteration counts over the layer's loop nest for one pass.
struct PassCounts {
    std::int64_t c_in = 1;
    std::int64_t c_out = 1;
    std::int64_t spatial = 1;
    std::int64_t batch = 1;
};

/// How one layer at one precision maps onto the hierarchy, and the
/// per-cycle throughput the mapping achieves at full occupancy.
struct MappingPlan {
    LayerKind kind = LayerKind::Conv3;
    MantissaWidth x_width = MantissaWidth::w8;
    MantissaWidth w_width = MantissaWidth::w8;
    ReductionPath reduction_path = ReductionPath::three_d;
    DimAssignment dims;

    int cluster_size = 1;  // subcores grouped per cluster
    int clusters = 1;
    int spatial_positions = 1;  // kernel positions carried by one cluster

    // Per-cycle channel capacities of one core.
    int cin_per_cycle = 1;
    int cout_per_cycle = 1;

    std::int64_t macs_per_cycle_per_core = 0;  // useful MACs at perfect channel fit
    std::int64_t peak_per_core = 0;

    PassCounts passes;

    /// Spatial kernel fit as an exact rational (e.g. 25/27 for Conv5).
    std::int64_t spatial_fit_num = 1;
    std::int64_t spatial_fit_den = 1;
};

struct CycleEstimate {
    std::int64_t compute_cycles = 0;
    std::int64_t memory_stall_cycles = 0;
    std::int64_t total_cycles = 0;
    double utilization = 1.0;  // achieved / peak MACs
};

struct EnergyEstimate {
    double joules = 0.0;
};

/// Peak MAC throughput per cycle across all cores for a format pair:
/// total 4-bit multipliers / ((x_bits/4) * (w_bits/4)).
std::int64_t peak_macs_per_cycle(const CoreGeometry& g, MantissaWidth x_width,
                                 MantissaWidth w_width);
std::int64_t peak_macs_per_cycle_per_core(const CoreGeometry& g, MantissaWidth x_width,
                                          MantissaWidth w_width);

/// Plan the forward/backward mapping of a layer. Depthwise layers route
/// through the 2D reduction path; everything else uses the 3D path.
MappingPlan plan_mapping(const nn::LayerSpec& layer, MantissaWidth x_width,
                         MantissaWidth w_width, const CoreGeometry& g);

/// Plan the weight-gradient pass: a 2D-mode mapping with (c_in, c_out)
/// pairs spread across subcores and both operands at wg_width.
MappingPlan plan_mapping_wu(const nn::LayerSpec& layer, MantissaWidth wg_width,
                            const CoreGeometry& g);

/// Achieved/peak MAC ratio for a plan applied to the layer's actual
/// channel counts: spatial kernel fit times channel remainder fill.
double utilization(const MappingPlan& plan, const nn::LayerSpec& layer);

/// Growth of the accumulated partial-sum count under operand halving:
/// a monolithic fusion unit multiplies the count by 2^(xh+wh); splitting
/// the two 1-D sub-word dimensions grows it by 2^max(xh, wh).
enum class ParallelismStyle { fusion_unit, pu_split };
std::int64_t accumulation_scale_factor(ParallelismStyle style, int x_halvings,
                                       int w_halvings);

/// Cycle-approximate estimate for one pass of one layer: compute cycles
/// from the plan's effective rate, stalls from a double-buffered tile
/// transfer model over BFP-encoded tensor bytes.
CycleEstimate estimate_cycles(const MappingPlan& plan, const nn::LayerSpec& layer,
                              int batch, const CostModelConfig& cost,
                              const CoreGeometry& g, StepKind step = StepKind::forward);

/// One row of a training-step report.
struct StepEstimate {
    int layer_id = 0;
    StepKind step = StepKind::forward;
    CycleEstimate cycles;
    EnergyEstimate energy;
    double utilization = 1.0;
};

struct TrainingStepEstimate {
    std::vector<StepEstimate> rows;
    CycleEstimate total;
    EnergyEstimate energy;
};

/// Aggregate FW+BW+WU estimates over a whole network at the given
/// per-layer precisions.
TrainingStepEstimate estimate_training_step(const std::vector<nn::LayerSpec>& layers,
                                            const std::vector<nn::PrecisionConfig>& precision,
                                            int batch, const CostModelConfig& cost,
                                            const CoreGeometry& g);

}  // namespace bfpkit::accel
