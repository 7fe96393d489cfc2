// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "cspsim/graph.hpp"
#include "cspsim/platform.hpp"

#include <optional>
#include <span>
#include <vector>

namespace cspsim {

enum class LineBufferMode { Single5x5, Tri3x3 };

/// One CE work unit: up to 4 output features from up to 12 (3x3) or 4
/// (5x5, 1x1) input features over one input tile.
struct ConvJob {
    int kh = 3;
    int kw = 3;
    int stride = 1;
    Padding pad;              // virtual zero padding around the tile (negative crops)
    int in_features = 1;
    int out_features = 1;
    int tile_h = 0;           // input rows loaded
    int tile_w = 0;           // input columns loaded
    bool accumulate_partial = false;
    bool relu = false;
    std::optional<FusedPool> pool;
    bool embedded_1x1 = false;

    int out_h() const { return window_out(tile_h, kh, stride, pad.top, pad.bottom); }
    int out_w() const { return window_out(tile_w, kw, stride, pad.left, pad.right); }
};

LineBufferMode line_buffer_mode(int kernel);

/// Input features consumed per pass, and the size of every partial-sum
/// group in the shared numeric contract: 12 for 3x3, 4 for 5x5 and 1x1
/// (including 1x1 embedded in 3x3, which runs single-stream).
int streams_per_pass(const CeConfig& cfg, int kernel, bool embedded_1x1);

/// Host-side group size for the same contract; kernels the CE cannot run
/// accumulate all inputs before one renormalisation.
int accumulation_group(const CeConfig& cfg, int kh, int kw, bool embedded_1x1, int n_in);

/// Throws ValidationError when the CE cannot execute the job.
void validate(const CeConfig& cfg, const ConvJob& job);

/// Bit-exact pass. `x` holds job.in_features channels of the tile, `w` is
/// out_features x in_features x kh x kw. The accumulator is seeded with
/// `y_prev` when job.accumulate_partial is set, else with `bias`. ReLU and
/// pooling are applied when the job requests them.
FeatureMap run_conv_pass(const CeConfig& cfg, const ConvJob& job, const FeatureMap& x, const WeightTensor& w,
                         std::span<const Fix16> bias, const FeatureMap* y_prev = nullptr);

FeatureMap apply_relu(const FeatureMap& tile);

/// window 2 or 4 (4 = two cascaded 2x2 stages). Trailing rows/columns that
/// do not fill a window are dropped. Avg rounds half to even.
FeatureMap apply_pool(const FeatureMap& tile, PoolMode mode, int window);

/// overhead + (preload_rows + tile_h) * ceil(tile_w / pixels_per_cycle),
/// preload_rows = kh - 1 with 1x1 treated as 3x3.
int64_t pass_cycles(const CeConfig& cfg, const ConvJob& job);

struct PassDesc {
    Range outputs;
    Range inputs;
    bool first = false;  // seeds with bias
    bool last = false;   // applies relu/pool
};

/// ceil(N_o/4) * ceil(N_i/streams) passes, output chunk major.
std::vector<PassDesc> layer_passes(const CeConfig& cfg, const LayerDesc& conv);

/// Multiply-accumulates counted as two operations. Embedded 1x1 layers
/// count as 1x1.
int64_t conv_ops(const LayerDesc& conv);

/// CE-only cycles for a whole layer processed as a single tile of
/// `tile_h` x `tile_w` input pixels (defaults to the full input).
int64_t layer_ce_cycles(const CeConfig& cfg, const LayerDesc& conv, int tile_h = 0, int tile_w = 0);

/// Whole layer on the CE: column stripes no wider than the line buffers,
/// passes chained through partial sums. Output is interlaced.
FeatureMap run_layer(const CeConfig& cfg, const LayerDesc& conv, const WeightTensor& w, const FeatureMap& input);

}  // namespace cspsim
