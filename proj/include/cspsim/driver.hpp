// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "cspsim/csp_runtime.hpp"
#include "cspsim/graph.hpp"
#include "cspsim/platform.hpp"

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

namespace cspsim {

/// Layer indices (into NetworkGraph::layers) of the three pipeline stages.
/// Stage 1 is everything before the first accelerator layer, stage 2 runs
/// up to and including the last accelerator layer, stage 3 is the tail.
/// Networks that interleave host layers with accelerator layers keep those
/// host layers in stage 2.
struct StagePlan {
    std::array<std::vector<int>, 3> stages;
    int stage_of(int layer) const;
};

StagePlan build_stage_plan(const NetworkGraph& g);

struct LayerTiming {
    std::string name;
    LayerKind kind = LayerKind::Identity;
    Placement placement = Placement::GPP;
    std::string block;
    Shape out_shape;
    int stage = 0;    // 0-based
    int worker = -1;  // host worker, -1 for the accelerator
    double t_start = 0;
    double t_end = 0;
    int64_t ops = 0;  // conv and FC only, MAC = 2 ops
    double gops = 0;

    double duration() const { return t_end - t_start; }
};

struct FrameProfile {
    std::string network;
    std::vector<LayerTiming> layers;  // graph order
    double latency = 0;               // makespan
    std::array<double, 3> stage_latency{};
    double serial_sum = 0;            // sum of layer durations
    double csp_busy = 0;
    double gpp_busy = 0;
    int64_t total_ops = 0;
    double avg_gops = 0;              // total_ops / latency
    std::vector<Event> csp_events;
};

/// Single frame: accelerator commands run in FIFO order as soon as their
/// inputs exist, host layers go to the earliest free worker (list
/// scheduling in graph order).
FrameProfile simulate_frame(const PlatformConfig& cfg, const NetworkGraph& g);

/// Start/end of one stage of one frame in the software pipeline.
struct StageSlot {
    int frame = 0;
    int stage = 0;
    double t_start = 0;
    double t_end = 0;
};

struct RunReport {
    std::string network;
    std::string config_hash;
    int frames = 0;
    FrameProfile profile;             // single-frame profile
    std::array<double, 3> stage_latency{};
    double first_frame_latency = 0;   // sum of stages
    double period = 0;                // max stage latency (frame latency for one frame)
    double fps = 0;
    double makespan = 0;
    double pipelined_gops = 0;        // ops per frame / period
    std::vector<StageSlot> timeline;
};

/// Pipelined stream of `n_frames`: stage k of frame f starts once frame f
/// finished stage k-1, frame f-1 finished stage k, and a buffer slot towards
/// stage k+1 is free (depth cfg.stage_buffer_depth).
RunReport simulate_stream(const PlatformConfig& cfg, const NetworkGraph& g, int n_frames);

/// Stream timeline from given stage latencies, for pipeline-algebra checks.
std::vector<StageSlot> pipeline_timeline(const std::array<double, 3>& stages, int n_frames, int buffer_depth);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Flat table: one row per layer, then block subtotals and totals.
void write_csv(std::ostream& os, const FrameProfile& p);
void write_json(std::ostream& os, const RunReport& r);
void write_json(std::ostream& os, const FrameProfile& p);
/// One row per resource (CSP, GPP workers) for a single frame, or one row
/// per stage for a stream; `width` characters across the makespan.
void write_gantt(std::ostream& os, const FrameProfile& p, int width = 100);
void write_gantt(std::ostream& os, const RunReport& r, int width = 100);

/// ops / seconds / 1e9, 0 for non-positive times.
double gops_per_sec(int64_t ops, double seconds);

// ---------------------------------------------------------------------------
// Functional inference
// ---------------------------------------------------------------------------

enum class NumericMode { Fixed, Float };

struct InferenceResult {
    std::vector<double> scores;  // softmax output if the net ends in one, else logits
    int argmax = -1;
    FeatureMap fixed_output;     // final tensor in fixed mode
    FloatMap float_output;       // final tensor in float mode
};

/// Runs every layer through the accelerator or host kernels according to
/// its placement. Fixed mode needs quantised weights (real ones are
/// quantised on the fly); float mode ignores placement and marshals.
InferenceResult run_inference(const PlatformConfig& cfg, const NetworkGraph& g, const FloatMap& input,
                              NumericMode mode = NumericMode::Fixed);
InferenceResult run_inference(const PlatformConfig& cfg, const NetworkGraph& g, const FeatureMap& input);

/// Forces every layer onto the host and re-runs placement.
void force_host_placement(NetworkGraph& g);

}  // namespace cspsim
