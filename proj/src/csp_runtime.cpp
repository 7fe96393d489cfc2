// SPDX-License-Identifier: Apache-2.0

#include "cspsim/csp_runtime.hpp"

#include "cspsim/transforms.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <ostream>

namespace cspsim {

namespace {

struct Geometry {
    int n_i = 0, n_o = 0, k = 0, stride = 1;
    Padding pad;
    int in_h = 0, in_w = 0, out_h = 0, out_w = 0, win = 1;
    int streams = 0;
    bool embedded = false;
};

Geometry geometry(const CeConfig& ce, const LayerDesc& l) {
    Geometry g;
    g.n_i = l.in_shape.c;
    g.n_o = l.out_channels;
    g.k = l.kh;
    g.stride = l.stride;
    g.pad = l.pad;
    g.in_h = l.in_shape.h;
    g.in_w = l.in_shape.w;
    g.out_h = window_out(g.in_h, l.kh, l.stride, l.pad.top, l.pad.bottom);
    g.out_w = window_out(g.in_w, l.kw, l.stride, l.pad.left, l.pad.right);
    g.win = l.fused_pool ? l.fused_pool->window : 1;
    g.embedded = l.embedded_1x1;
    g.streams = streams_per_pass(ce, l.kh, l.embedded_1x1);
    return g;
}

struct Tile {
    int rows = 0;      // input rows loaded
    int cols = 0;      // input columns loaded
    int out_rows = 0;  // before pooling
    int out_cols = 0;
};

Range clamp(Range r, int hi) { return {std::clamp(r.begin, 0, hi), std::clamp(r.end, 0, hi)}; }

std::vector<Tile> tiles_for(const Geometry& g, int stripe_width, int band_rows) {
    const auto stripes = stripe_columns(g.in_w, g.out_w, g.k, g.stride, g.pad.left, stripe_width, g.win);
    std::vector<Tile> out;
    for (int r0 = 0; r0 < g.out_h; r0 += band_rows) {
        const Range rows{r0, std::min(r0 + band_rows, g.out_h)};
        const Range in_rows = clamp(input_span(rows, g.k, g.stride, g.pad.top), g.in_h);
        for (const Stripe& s : stripes) {
            // A tile whose window lies entirely in the padding still costs a pass.
            out.push_back({std::max(in_rows.size(), 1), std::max(s.cols.size(), 1), rows.size(), s.out_cols.size()});
        }
    }
    return out;
}

int count_stripes(const Geometry& g, int stripe_width) {
    return static_cast<int>(stripe_columns(g.in_w, g.out_w, g.k, g.stride, g.pad.left, stripe_width, g.win).size());
}

int group_channels(const Geometry& g, int group) { return std::min(g.streams, g.n_i - group * g.streams); }
int chunk_channels(const Geometry& g, int out_chunk, int c) { return std::min(out_chunk, g.n_o - c * out_chunk); }

int64_t in_bytes(const Tile& t, int channels) { return int64_t{channels} * t.rows * t.cols * 2; }
int64_t out_bytes(const Geometry& g, const Tile& t, int channels) {
    return int64_t{channels} * (t.out_rows / g.win) * (t.out_cols / g.win) * 2;
}
int64_t weight_bytes(const Geometry& g, int out_ch, int in_ch, bool with_bias) {
    return int64_t{out_ch} * in_ch * g.k * g.k * 2 + (with_bias ? int64_t{out_ch} * 2 : 0);
}

bool input_reused_across_chunks(const TilePlan& p) { return p.groups == 1; }
bool weights_resident(const TilePlan& p) { return int64_t{p.chunks} * p.groups <= 2; }

int64_t tile_cycles(const CeConfig& ce, const Geometry& g, const Tile& t) {
    ConvJob job;
    job.kh = job.kw = g.k;
    job.tile_h = t.rows;
    job.tile_w = t.cols;
    return pass_cycles(ce, job);
}

struct Footprint {
    int64_t tcdm = 0;
    int64_t weights = 0;
};

Footprint footprint(const Geometry& g, const std::vector<Tile>& tiles, int out_chunk) {
    Footprint f;
    int64_t max_in = 0, max_partial = 0;
    for (const Tile& t : tiles) {
        max_in = std::max(max_in, in_bytes(t, std::min(g.streams, g.n_i)));
        max_partial = std::max(max_partial, int64_t{std::min(out_chunk, g.n_o)} * t.out_rows * t.out_cols * 2);
    }
    f.tcdm = 2 * max_in + 2 * max_partial;
    f.weights = 2 * weight_bytes(g, std::min(out_chunk, g.n_o), std::min(g.streams, g.n_i), true);
    return f;
}

double analytic_impl(const PlatformConfig& cfg, const Geometry& g, const std::vector<Tile>& tiles,
                     const TilePlan& p) {
    const auto& dma = cfg.dma;
    const double adma = dma.adma_effective(), wdma = dma.wdma_effective();
    const int per = cfg.ce.outputs_per_pass();
    const bool reuse = input_reused_across_chunks(p);
    const bool resident = weights_resident(p);
    const int in_loads_per_tile = reuse ? p.groups : p.chunks * p.groups;
    const int in_repeats = reuse ? 1 : p.chunks;
    int64_t pass_count = 0;  // per tile
    for (int c = 0; c < p.chunks; ++c) pass_count += ceil_div(chunk_channels(g, p.out_chunk, c), per);
    pass_count *= p.groups;
    const int64_t all_weights = weight_bytes(g, g.n_o, g.n_i, false) + int64_t{g.n_o} * 2;

    double ce = 0, tin = 0, tout = 0, tw = 0;
    for (size_t ti = 0; ti < tiles.size(); ++ti) {
        const Tile& t = tiles[ti];
        ce += static_cast<double>(pass_count * tile_cycles(cfg.ce, g, t)) / cfg.ce.clk_hz;
        tin += in_loads_per_tile * dma.setup_sec + static_cast<double>(in_repeats * in_bytes(t, g.n_i)) / adma;
        tout += p.chunks * dma.setup_sec + static_cast<double>(out_bytes(g, t, g.n_o)) / adma;
        if (!resident || ti == 0)
            tw += int64_t{p.chunks} * p.groups * dma.setup_sec + static_cast<double>(all_weights) / wdma;
    }
    const Tile& first = tiles.front();
    const Tile& last = tiles.back();
    const double first_in = dma_time(dma, in_bytes(first, group_channels(g, 0)), DmaChannel::ADMA);
    const double first_w =
        dma_time(dma, weight_bytes(g, chunk_channels(g, p.out_chunk, 0), group_channels(g, 0), true), DmaChannel::WDMA);
    const double last_out =
        dma_time(dma, out_bytes(g, last, chunk_channels(g, p.out_chunk, p.chunks - 1)), DmaChannel::ADMA);
    return std::max(first_in, first_w) + std::max({ce, tin, tout, tw}) + last_out;
}

// Candidates ordered by analytic time, then fewer tiles, then fewer chunks.
std::vector<TilePlan> candidate_plans(const PlatformConfig& cfg, const Geometry& g, size_t keep) {
    std::vector<TilePlan> all;
    for (int width = cfg.ce.lb_max_width; width >= std::max(g.k, 8); width /= 2) {
        int stripes = 0;
        try {
            stripes = count_stripes(g, width);
        } catch (const UnschedulableError&) {
            break;
        }
        std::vector<int> band_options;
        for (int nb = 1; nb <= g.out_h; ++nb) {
            int r = ceil_div(g.out_h, nb);
            if (r < g.out_h) r = std::max(g.win, r / g.win * g.win);
            if (band_options.empty() || band_options.back() != r) band_options.push_back(r);
        }
        for (int r : band_options) {
            const auto tiles = tiles_for(g, width, r);
            int prev_chunks = -1;
            for (int chunks = 1; chunks <= ceil_div(g.n_o, cfg.ce.outputs_per_pass()); ++chunks) {
                const int oc = round_up(ceil_div(g.n_o, chunks), cfg.ce.outputs_per_pass());
                const int real_chunks = ceil_div(g.n_o, oc);
                if (real_chunks == prev_chunks) continue;
                prev_chunks = real_chunks;
                const Footprint f = footprint(g, tiles, oc);
                if (f.tcdm > cfg.tcdm.capacity_bytes || f.weights > cfg.tcdm.weight_memory_bytes) continue;
                TilePlan p;
                p.stripe_width = width;
                p.stripes = stripes;
                p.band_rows = r;
                p.bands = ceil_div(g.out_h, r);
                p.out_chunk = oc;
                p.chunks = real_chunks;
                p.in_group = g.streams;
                p.groups = ceil_div(g.n_i, g.streams);
                p.tcdm_bytes = f.tcdm;
                p.weight_bytes = f.weights;
                p.analytic_sec = analytic_impl(cfg, g, tiles, p);
                all.push_back(p);
            }
        }
    }
    if (all.empty())
        throw UnschedulableError("no tiling fits the accelerator memories (TCDM " +
                                 std::to_string(cfg.tcdm.capacity_bytes) + " B)");
    std::stable_sort(all.begin(), all.end(), [](const TilePlan& a, const TilePlan& b) {
        if (a.analytic_sec != b.analytic_sec) return a.analytic_sec < b.analytic_sec;
        if (a.tiles() != b.tiles()) return a.tiles() < b.tiles();
        return a.chunks < b.chunks;
    });
    if (all.size() > keep) all.resize(keep);
    return all;
}

struct SlotTimes {
    std::array<double, 2> free{0, 0};
};

// How many of the best analytic candidates get a full timeline simulation.
constexpr size_t kSimulatedCandidates = 12;

}  // namespace

static LayerSchedule simulate(const PlatformConfig& cfg, const Geometry& g, const TilePlan& p);

std::string_view to_string(Unit u) {
    switch (u) {
        case Unit::CE: return "CE";
        case Unit::ADMA: return "ADMA";
        case Unit::WDMA: return "WDMA";
        case Unit::UC: return "UC";
    }
    return "?";
}

double dma_time(const DmaConfig& cfg, int64_t bytes, DmaChannel channel) {
    if (bytes < 0) throw ValidationError("dma_time: negative byte count");
    const double bw = channel == DmaChannel::ADMA ? cfg.adma_effective() : cfg.wdma_effective();
    return cfg.setup_sec + static_cast<double>(bytes) / bw;
}

double analytic_time(const PlatformConfig& cfg, const LayerDesc& conv, const TilePlan& plan) {
    const Geometry g = geometry(cfg.ce, conv);
    return analytic_impl(cfg, g, tiles_for(g, plan.stripe_width, plan.band_rows), plan);
}

LayerSchedule tile_and_schedule(const PlatformConfig& cfg, const LayerDesc& conv) {
    LayerSchedule s;
    if (!conv.is_conv()) throw ValidationError("tile_and_schedule: '" + conv.name + "' is not a convolution");
    if (conv.in_shape.elements() == 0 || conv.out_shape.elements() == 0 || conv.out_channels == 0) return s;
    if (!csp_supports(conv))
        throw ValidationError("tile_and_schedule: '" + conv.name + "' cannot run on the accelerator");

    const Geometry g = geometry(cfg.ce, conv);
    std::optional<LayerSchedule> best;
    for (const TilePlan& p : candidate_plans(cfg, g, kSimulatedCandidates)) {
        LayerSchedule c = simulate(cfg, g, p);
        if (!best || c.duration < best->duration) best = std::move(c);
    }
    return std::move(*best);
}

static LayerSchedule simulate(const PlatformConfig& cfg, const Geometry& g, const TilePlan& p) {
    LayerSchedule s;
    s.plan = p;
    const auto tiles = tiles_for(g, p.stripe_width, p.band_rows);
    const bool reuse = input_reused_across_chunks(p);
    const bool resident = weights_resident(p);
    const int per = cfg.ce.outputs_per_pass();

    double t_in = 0, t_out = 0, t_w = 0, t_ce = 0;
    SlotTimes in_slots, w_slots, partial_slots;
    int64_t n_in_loads = 0, n_w_loads = 0, n_partials = 0;
    int pass_id = 0;

    struct Interval {
        double begin, end;
        int64_t bytes;
    };
    std::vector<Interval> occupancy;

    std::vector<double> w_ready(static_cast<size_t>(p.chunks) * p.groups, 0.0);
    for (const Tile& t : tiles) {
        const int64_t cycles = tile_cycles(cfg.ce, g, t);
        const double pass_sec = static_cast<double>(cycles) / cfg.ce.clk_hz;
        double in_ready = 0;
        int in_slot = 0;
        double in_start = 0;
        int64_t in_held = 0;
        for (int c = 0; c < p.chunks; ++c) {
            const int oc = chunk_channels(g, p.out_chunk, c);
            const int pslot = static_cast<int>(n_partials++ % 2);
            const double partial_free = partial_slots.free[pslot];
            double chunk_first_ce = -1, ce_end = 0;
            for (int gi = 0; gi < p.groups; ++gi) {
                const int ic = group_channels(g, gi);
                if (!reuse || c == 0) {
                    in_slot = static_cast<int>(n_in_loads++ % 2);
                    const int64_t b = in_bytes(t, ic);
                    in_start = std::max(t_in, in_slots.free[in_slot]);
                    in_ready = in_start + dma_time(cfg.dma, b, DmaChannel::ADMA);
                    t_in = in_ready;
                    in_held = b;
                    s.adma_in_busy += in_ready - in_start;
                    s.bytes_in += b;
                    s.events.push_back({in_start, in_ready, Unit::ADMA, 0, -1, b, 0, "in"});
                }
                double weights_ready;
                const size_t wi = static_cast<size_t>(c) * p.groups + gi;
                if (!resident || &t == &tiles.front()) {
                    const int wslot = static_cast<int>(n_w_loads++ % 2);
                    const int64_t b = weight_bytes(g, oc, ic, gi == 0);
                    const double ws = std::max(t_w, w_slots.free[wslot]);
                    weights_ready = ws + dma_time(cfg.dma, b, DmaChannel::WDMA);
                    t_w = weights_ready;
                    w_ready[wi] = weights_ready;
                    s.wdma_busy += weights_ready - ws;
                    s.bytes_weights += b;
                    s.events.push_back({ws, weights_ready, Unit::WDMA, 0, -1, b, 0, "weights"});
                } else {
                    weights_ready = w_ready[wi];
                }

                const double ready = std::max({in_ready, weights_ready, partial_free});
                double tc = std::max(t_ce, ready);
                if (chunk_first_ce < 0) chunk_first_ce = tc;
                const int np = ceil_div(oc, per);
                for (int k = 0; k < np; ++k) {
                    s.events.push_back({tc, tc + pass_sec, Unit::CE, 0, pass_id++, 0, cycles, ""});
                    s.ce_ready.push_back(ready);
                    tc += pass_sec;
                }
                s.passes += np;
                s.ce_cycles += cycles * np;
                s.ce_busy += pass_sec * np;
                t_ce = ce_end = tc;
                if (!resident) w_slots.free[static_cast<size_t>((n_w_loads - 1) % 2)] = ce_end;

                const bool last_use = !reuse || c + 1 == p.chunks;
                if (last_use) {
                    in_slots.free[in_slot] = ce_end;
                    occupancy.push_back({in_start, ce_end, in_held});
                }
            }
            const int64_t ob = out_bytes(g, t, oc);
            const double os = std::max(t_out, ce_end);
            t_out = os + dma_time(cfg.dma, ob, DmaChannel::ADMA);
            s.adma_out_busy += t_out - os;
            s.bytes_out += ob;
            s.events.push_back({os, t_out, Unit::ADMA, 0, -1, ob, 0, "out"});
            partial_slots.free[pslot] = t_out;
            occupancy.push_back({chunk_first_ce, t_out, int64_t{oc} * t.out_rows * t.out_cols * 2});
        }
    }
    s.duration = std::max({t_in, t_out, t_w, t_ce});

    // Peak resident activation bytes over time.
    std::vector<std::pair<double, int64_t>> deltas;
    for (const auto& iv : occupancy) {
        deltas.emplace_back(iv.begin, iv.bytes);
        deltas.emplace_back(iv.end, -iv.bytes);
    }
    std::sort(deltas.begin(), deltas.end(), [](const auto& a, const auto& b) {
        return a.first < b.first || (a.first == b.first && a.second < b.second);
    });
    int64_t cur = 0;
    for (const auto& [t, d] : deltas) {
        cur += d;
        s.peak_tcdm_bytes = std::max(s.peak_tcdm_bytes, cur);
    }
    std::stable_sort(s.events.begin(), s.events.end(),
                     [](const Event& a, const Event& b) { return a.t_start < b.t_start; });
    return s;
}

ScheduleCheck check_schedule(const PlatformConfig& cfg, const LayerSchedule& s) {
    constexpr double eps = 1e-12;
    if (s.peak_tcdm_bytes > cfg.tcdm.capacity_bytes)
        return {false, "TCDM occupancy " + std::to_string(s.peak_tcdm_bytes) + " exceeds capacity"};
    double prev_end = 0;
    size_t k = 0;
    for (const Event& e : s.events) {
        if (e.unit != Unit::CE) continue;
        if (k >= s.ce_ready.size()) return {false, "missing readiness record"};
        const double expect = std::max(prev_end, s.ce_ready[k]);
        if (std::abs(e.t_start - expect) > eps * std::max(1.0, expect))
            return {false, "CE idle while pass " + std::to_string(e.pass_id) + " was ready"};
        prev_end = e.t_end;
        ++k;
    }
    const double lower = std::max({s.ce_busy, s.adma_in_busy, s.adma_out_busy, s.wdma_busy});
    const double upper = s.ce_busy + s.adma_in_busy + s.adma_out_busy + s.wdma_busy;
    if (s.duration + eps < lower) return {false, "layer shorter than its busiest resource"};
    if (s.duration > upper + eps) return {false, "layer longer than the serial sum of its resources"};
    return {};
}

CspRuntime::CspRuntime(PlatformConfig cfg) : cfg_(std::move(cfg)) {}

Ticket CspRuntime::enqueue(Command cmd) {
    if (static_cast<int>(queue_.size()) >= cfg_.queue_depth)
        throw QueueFull("command queue full (" + std::to_string(cfg_.queue_depth) + " entries)");
    const int id = next_id_++;
    const bool blocking = cmd.blocking;
    queue_.emplace_back(id, std::move(cmd));
    Ticket t{id, std::nullopt};
    if (blocking) {
        run_queue();
        t.completed_at = completed_.back().t_end;
    }
    return t;
}

std::vector<CommandProfile> CspRuntime::run_queue() {
    std::vector<CommandProfile> out;
    while (!queue_.empty()) {
        auto [id, cmd] = std::move(queue_.front());
        queue_.pop_front();
        out.push_back(execute(id, cmd));
        completed_.push_back(out.back());
    }
    return out;
}

CommandProfile CspRuntime::execute(int id, const Command& cmd) {
    CommandProfile prof;
    prof.command_id = id;
    prof.op = cmd.op;
    prof.layer = cmd.layer.name;
    const double start = std::max(busy_until_, cmd.ready_time);
    prof.t_start = start;
    if (cmd.op == CommandOp::Sync) {
        prof.t_end = start;
        events_.push_back({start, start, Unit::UC, id, -1, 0, 0, "sync"});
        return prof;
    }
    prof.schedule = tile_and_schedule(cfg_, cmd.layer);
    events_.push_back({start, start, Unit::UC, id, -1, 0, 0, "start"});
    for (Event e : prof.schedule.events) {
        e.t_start += start;
        e.t_end += start;
        e.command_id = id;
        events_.push_back(std::move(e));
    }
    prof.t_end = start + prof.schedule.duration;
    busy_until_ = prof.t_end;
    return prof;
}

void write_event_log(std::ostream& os, const std::vector<Event>& events) {
    char buf[256];
    for (const Event& e : events) {
        std::snprintf(buf, sizeof buf,
                      "{\"t_start_ns\":%.3f,\"t_end_ns\":%.3f,\"unit\":\"%s\",\"command\":%d,\"pass\":%d,"
                      "\"bytes\":%lld,\"cycles\":%lld,\"detail\":\"%s\"}\n",
                      e.t_start * 1e9, e.t_end * 1e9, std::string(to_string(e.unit)).c_str(), e.command_id,
                      e.pass_id, static_cast<long long>(e.bytes), static_cast<long long>(e.cycles), e.detail.c_str());
        os << buf;
    }
}

}  // namespace cspsim
