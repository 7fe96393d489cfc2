// SPDX-License-Identifier: Apache-2.0

#include "cspsim/platform.hpp"

#include "cspsim/errors.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace cspsim {

namespace {

struct Key {
    std::string_view name;
    std::function<void(PlatformConfig&, const std::string&)> set;
    std::function<std::string(const PlatformConfig&)> get;
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double to_double(const std::string& key, const std::string& s) {
    try {
        size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw ValidationError("platform key '" + key + "': expected a number, got '" + s + "'");
}

template <typename T>
Key num(std::string_view name, T& (*ref)(PlatformConfig&)) {
    return Key{name,
               [name, ref](PlatformConfig& c, const std::string& v) {
                   const double d = to_double(std::string(name), v);
                   if constexpr (std::is_integral_v<T>) {
                       if (d != static_cast<double>(static_cast<T>(d)))
                           throw ValidationError("platform key '" + std::string(name) + "' must be an integer");
                   }
                   ref(c) = static_cast<T>(d);
               },
               [ref](const PlatformConfig& c) {
                   auto& m = ref(const_cast<PlatformConfig&>(c));
                   if constexpr (std::is_integral_v<T>) return std::to_string(m);
                   else return fmt(m);
               }};
}

#define CSPSIM_KEY(name, expr) num(name, +[](PlatformConfig& c) -> auto& { return expr; })

const std::vector<Key>& keys() {
    static const std::vector<Key> k = {
        Key{"name", [](PlatformConfig& c, const std::string& v) { c.name = v; },
            [](const PlatformConfig& c) { return c.name; }},
        CSPSIM_KEY("ce.lb_count", c.ce.lb_count),
        CSPSIM_KEY("ce.sop_rows", c.ce.sop_rows),
        CSPSIM_KEY("ce.macs_per_window", c.ce.macs_per_window),
        CSPSIM_KEY("ce.pixels_per_cycle", c.ce.pixels_per_cycle),
        CSPSIM_KEY("ce.lb_max_width", c.ce.lb_max_width),
        CSPSIM_KEY("ce.clk_hz", c.ce.clk_hz),
        CSPSIM_KEY("ce.pass_overhead_cycles", c.ce.pass_overhead_cycles),
        CSPSIM_KEY("dma.adma_bytes_per_sec", c.dma.adma_bytes_per_sec),
        CSPSIM_KEY("dma.wdma_bytes_per_sec", c.dma.wdma_bytes_per_sec),
        CSPSIM_KEY("dma.efficiency", c.dma.efficiency),
        CSPSIM_KEY("dma.setup_sec", c.dma.setup_sec),
        CSPSIM_KEY("tcdm.banks", c.tcdm.banks),
        CSPSIM_KEY("tcdm.capacity_bytes", c.tcdm.capacity_bytes),
        CSPSIM_KEY("tcdm.weight_memory_bytes", c.tcdm.weight_memory_bytes),
        CSPSIM_KEY("host.peak_ops_per_sec", c.host.peak_ops_per_sec),
        CSPSIM_KEY("host.mem_bytes_per_sec", c.host.mem_bytes_per_sec),
        CSPSIM_KEY("host.fc_effective_density", c.host.fc_effective_density),
        CSPSIM_KEY("host.marshal_bytes_per_sec", c.host.marshal_bytes_per_sec),
        CSPSIM_KEY("host.marshal_to_csp_bytes_per_sec", c.host.marshal_to_csp_bytes_per_sec),
        CSPSIM_KEY("host.marshal_from_csp_bytes_per_sec", c.host.marshal_from_csp_bytes_per_sec),
        CSPSIM_KEY("host.marshal_setup_sec", c.host.marshal_setup_sec),
        CSPSIM_KEY("host.stream_kernel_efficiency", c.host.stream_kernel_efficiency),
        CSPSIM_KEY("host.activation_bytes", c.host.activation_bytes),
        CSPSIM_KEY("host_workers", c.host_workers),
        CSPSIM_KEY("queue_depth", c.queue_depth),
        CSPSIM_KEY("stage_buffer_depth", c.stage_buffer_depth),
    };
    return k;
}

#undef CSPSIM_KEY

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

void check(const PlatformConfig& c) {
    auto positive = [](double v, const char* what) {
        if (!(v > 0)) throw ValidationError(std::string("platform: ") + what + " must be positive");
    };
    positive(c.ce.lb_count, "ce.lb_count");
    positive(c.ce.sop_rows, "ce.sop_rows");
    positive(c.ce.macs_per_window, "ce.macs_per_window");
    positive(c.ce.pixels_per_cycle, "ce.pixels_per_cycle");
    positive(c.ce.lb_max_width, "ce.lb_max_width");
    positive(c.ce.clk_hz, "ce.clk_hz");
    positive(c.dma.adma_bytes_per_sec, "dma.adma_bytes_per_sec");
    positive(c.dma.wdma_bytes_per_sec, "dma.wdma_bytes_per_sec");
    positive(c.dma.efficiency, "dma.efficiency");
    positive(static_cast<double>(c.tcdm.capacity_bytes), "tcdm.capacity_bytes");
    positive(c.host.peak_ops_per_sec, "host.peak_ops_per_sec");
    positive(c.host.mem_bytes_per_sec, "host.mem_bytes_per_sec");
    positive(c.host.fc_effective_density, "host.fc_effective_density");
    positive(c.host.marshal_bytes_per_sec, "host.marshal_bytes_per_sec");
    positive(c.host.stream_kernel_efficiency, "host.stream_kernel_efficiency");
    positive(c.host_workers, "host_workers");
    positive(c.queue_depth, "queue_depth");
    positive(c.stage_buffer_depth, "stage_buffer_depth");
    if (c.ce.pass_overhead_cycles < 0 || c.dma.setup_sec < 0 || c.host.marshal_setup_sec < 0)
        throw ValidationError("platform: overheads must be non-negative");
}

}  // namespace

PlatformConfig default_platform() {
    PlatformConfig c;
    // Fitted once against the compute-bound layers (28x28 and 14x14 tiles).
    c.ce.pass_overhead_cycles = 50;
    // Input marshaling also converts float activations; measured slower.
    c.host.marshal_to_csp_bytes_per_sec = 60e6;
    return c;
}

PlatformConfig parse_platform(std::string_view text, PlatformConfig base) {
    std::istringstream is{std::string(text)};
    std::string raw;
    int line = 0;
    while (std::getline(is, raw)) {
        ++line;
        if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
        raw = trim(raw);
        if (raw.empty()) continue;
        const auto eq = raw.find('=');
        if (eq == std::string::npos)
            throw ValidationError("platform line " + std::to_string(line) + ": expected 'key = value'");
        const std::string key = trim(raw.substr(0, eq));
        const std::string value = trim(raw.substr(eq + 1));
        bool found = false;
        for (const auto& k : keys()) {
            if (k.name == key) {
                k.set(base, value);
                found = true;
                break;
            }
        }
        if (!found) throw ValidationError("platform line " + std::to_string(line) + ": unknown key '" + key + "'");
    }
    check(base);
    return base;
}

PlatformConfig load_platform(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open platform config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_platform(ss.str());
}

std::string write_platform(const PlatformConfig& cfg) {
    std::string out;
    for (const auto& k : keys()) out += std::string(k.name) + " = " + k.get(cfg) + "\n";
    return out;
}

std::string platform_hash(const PlatformConfig& cfg) {
    uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : write_platform(cfg)) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace cspsim
