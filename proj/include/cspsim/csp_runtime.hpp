// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "cspsim/ce_model.hpp"
#include "cspsim/graph.hpp"
#include "cspsim/platform.hpp"

#include <deque>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace cspsim {

enum class Unit { CE, ADMA, WDMA, UC };
enum class DmaChannel { ADMA, WDMA };

std::string_view to_string(Unit u);

/// One timeline record. Times are seconds on the global CSP timeline.
struct Event {
    double t_start = 0;
    double t_end = 0;
    Unit unit = Unit::CE;
    int command_id = 0;
    int pass_id = -1;  // -1 for transfers not tied to a single pass
    int64_t bytes = 0;
    int64_t cycles = 0;
    std::string detail;  // "in", "out", "weights", "start", "sync"
};

double dma_time(const DmaConfig& cfg, int64_t bytes, DmaChannel channel);

/// How a convolution is cut into tiles.
struct TilePlan {
    int stripe_width = 0;  // max input columns per stripe
    int stripes = 0;
    int band_rows = 0;     // output rows (before pooling) per band
    int bands = 0;
    int out_chunk = 0;     // output features resident per chunk, multiple of 4
    int chunks = 0;
    int in_group = 0;      // input features per transfer (streams per pass)
    int groups = 0;
    int64_t tcdm_bytes = 0;    // double-buffered activation footprint
    int64_t weight_bytes = 0;  // double-buffered weight footprint
    double analytic_sec = 0;
    int tiles() const { return stripes * bands; }
};

struct LayerSchedule {
    TilePlan plan;
    std::vector<Event> events;  // relative to the start of the layer
    double duration = 0;
    double ce_busy = 0;
    double adma_in_busy = 0;
    double adma_out_busy = 0;
    double wdma_busy = 0;
    int64_t ce_cycles = 0;
    int64_t passes = 0;
    int64_t bytes_in = 0;
    int64_t bytes_out = 0;
    int64_t bytes_weights = 0;
    int64_t peak_tcdm_bytes = 0;
    // Per CE event: the time its inputs, weights and partial buffer were all
    // ready. Used to check that the engine never idles needlessly.
    std::vector<double> ce_ready;
};

/// Ranks tilings by analytic time, simulates the double-buffered
/// transfer/compute timeline of the best few and keeps the fastest.
LayerSchedule tile_and_schedule(const PlatformConfig& cfg, const LayerDesc& conv);

/// Analytic estimate for one candidate plan (fill + max of per-resource
/// totals + drain).
double analytic_time(const PlatformConfig& cfg, const LayerDesc& conv, const TilePlan& plan);

struct ScheduleCheck {
    bool ok = true;
    std::string message;
};

/// Work conservation, TCDM capacity and the double-buffering bounds.
ScheduleCheck check_schedule(const PlatformConfig& cfg, const LayerSchedule& s);

enum class CommandOp { ConvBlock, Sync };

struct Command {
    CommandOp op = CommandOp::ConvBlock;
    LayerDesc layer;
    double ready_time = 0;  // inputs available on the shared memory
    bool blocking = false;
};

struct Ticket {
    int id = -1;
    std::optional<double> completed_at;  // filled for blocking commands
};

struct CommandProfile {
    int command_id = 0;
    CommandOp op = CommandOp::ConvBlock;
    std::string layer;
    double t_start = 0;
    double t_end = 0;
    LayerSchedule schedule;
};

class QueueFull : public Error {
public:
    explicit QueueFull(const std::string& what) : Error(what, ExitCode::Unschedulable) {}
};

/// Behavioural model of the accelerator's resident runtime. Commands run
/// in FIFO order on a single engine.
class CspRuntime {
public:
    explicit CspRuntime(PlatformConfig cfg);

    Ticket enqueue(Command cmd);
    /// Drains the queue and returns profiles of the commands it ran.
    std::vector<CommandProfile> run_queue();

    const std::vector<Event>& events() const { return events_; }
    const std::vector<CommandProfile>& completed() const { return completed_; }
    double busy_until() const { return busy_until_; }
    size_t pending() const { return queue_.size(); }

private:
    CommandProfile execute(int id, const Command& cmd);

    PlatformConfig cfg_;
    std::deque<std::pair<int, Command>> queue_;
    std::vector<Event> events_;
    std::vector<CommandProfile> completed_;
    double busy_until_ = 0;
    int next_id_ = 0;
};

/// One JSON object per line: t_start_ns, t_end_ns, unit, command, pass,
/// bytes, cycles, detail.
void write_event_log(std::ostream& os, const std::vector<Event>& events);

}  // namespace cspsim
