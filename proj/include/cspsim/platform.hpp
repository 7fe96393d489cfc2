// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace cspsim {

/// Convolution engine geometry and clocking.
struct CeConfig {
    int lb_count = 4;          // line buffers, one SoP column each
    int sop_rows = 4;          // output ports
    int macs_per_window = 27;  // per SoP and output pixel
    int pixels_per_cycle = 2;  // windows emitted per line buffer and cycle
    int lb_max_width = 256;
    double clk_hz = 140e6;
    int pass_overhead_cycles = 60;

    int streams_3x3() const { return lb_count * 3; }
    int streams_5x5() const { return lb_count; }
    int outputs_per_pass() const { return sop_rows; }
    int64_t macs_per_cycle() const { return int64_t{lb_count} * sop_rows * macs_per_window * pixels_per_cycle; }
    double peak_ops_per_sec() const { return 2.0 * static_cast<double>(macs_per_cycle()) * clk_hz; }
};

struct DmaConfig {
    double adma_bytes_per_sec = 560e6;
    double wdma_bytes_per_sec = 1120e6;
    double efficiency = 0.7;
    double setup_sec = 1e-6;

    double adma_effective() const { return adma_bytes_per_sec * efficiency; }
    double wdma_effective() const { return wdma_bytes_per_sec * efficiency; }
};

struct TcdmConfig {
    int banks = 32;
    int64_t capacity_bytes = 512 * 1024;
    int64_t weight_memory_bytes = 256 * 1024;
};

struct RooflineParams {
    double peak_ops_per_sec = 6.4e9;
    double mem_bytes_per_sec = 4e9;
    double fc_effective_density = 0.25;
    double marshal_bytes_per_sec = 120e6;
    // Zero means "use marshal_bytes_per_sec".
    double marshal_to_csp_bytes_per_sec = 0;
    double marshal_from_csp_bytes_per_sec = 0;
    double marshal_setup_sec = 20e-6;
    // Fraction of the roofline bound reached by element-wise host kernels
    // (pooling, add, relu, merge, LRN, batch norm).
    double stream_kernel_efficiency = 0.25;
    int activation_bytes = 2;

    double ridge_point() const { return peak_ops_per_sec / mem_bytes_per_sec; }
    double marshal_rate(bool to_csp) const {
        const double r = to_csp ? marshal_to_csp_bytes_per_sec : marshal_from_csp_bytes_per_sec;
        return r > 0 ? r : marshal_bytes_per_sec;
    }
};

struct PlatformConfig {
    std::string name = "zynq7045";
    CeConfig ce;
    DmaConfig dma;
    TcdmConfig tcdm;
    RooflineParams host;
    int host_workers = 2;
    int queue_depth = 16;
    int stage_buffer_depth = 1;
};

/// Built-in defaults with the calibrated overrides shipped in configs/zynq7045.cfg.
PlatformConfig default_platform();

/// `key = value` lines, '#' comments. Unknown keys are an error.
PlatformConfig parse_platform(std::string_view text, PlatformConfig base = PlatformConfig{});
PlatformConfig load_platform(const std::string& path);
/// Canonical text form (every key, fixed order).
std::string write_platform(const PlatformConfig& cfg);
/// 64-bit FNV-1a of the canonical text, as 16 hex digits.
std::string platform_hash(const PlatformConfig& cfg);

}  // namespace cspsim
