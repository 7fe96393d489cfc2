// SPDX-License-Identifier: Apache-2.0

#include "cspsim/driver.hpp"

#include "cspsim/ce_model.hpp"
#include "cspsim/host_model.hpp"
#include "cspsim/transforms.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <map>
#include <ostream>

namespace cspsim {

namespace {

int64_t layer_ops(const LayerDesc& l) {
    if (l.is_conv()) return conv_ops(l);
    if (l.kind == LayerKind::FullyConnected) return 2 * l.in_shape.elements() * l.out_channels;
    return 0;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

}  // namespace

int StagePlan::stage_of(int layer) const {
    for (int s = 0; s < 3; ++s)
        if (std::find(stages[s].begin(), stages[s].end(), layer) != stages[s].end()) return s;
    return -1;
}

StagePlan build_stage_plan(const NetworkGraph& g) {
    StagePlan plan;
    const int n = static_cast<int>(g.layers.size());
    int first = -1, last = -1;
    for (int i = 0; i < n; ++i)
        if (g.layers[i].placement == Placement::CSP) {
            if (first < 0) first = i;
            last = i;
        }
    for (int i = 0; i < n; ++i) {
        int s = 2;
        if (first >= 0 && i < first) s = 0;
        else if (first >= 0 && i <= last) s = 1;
        plan.stages[s].push_back(i);
    }
    return plan;
}

double gops_per_sec(int64_t ops, double seconds) {
    return seconds > 0 ? static_cast<double>(ops) / seconds / 1e9 : 0.0;
}

FrameProfile simulate_frame(const PlatformConfig& cfg, const NetworkGraph& g) {
    FrameProfile p;
    p.network = g.name;
    const StagePlan plan = build_stage_plan(g);
    CspRuntime csp(cfg);
    std::vector<double> workers(static_cast<size_t>(std::max(cfg.host_workers, 1)), 0.0);
    std::map<std::string, double> ready{{std::string(kInputName), 0.0}};

    for (int i = 0; i < static_cast<int>(g.layers.size()); ++i) {
        const LayerDesc& l = g.layers[static_cast<size_t>(i)];
        double deps = 0;
        for (const auto& in : l.inputs) deps = std::max(deps, ready.at(in));

        LayerTiming t;
        t.name = l.name;
        t.kind = l.kind;
        t.placement = l.placement;
        t.block = l.block;
        t.out_shape = l.out_shape;
        t.stage = plan.stage_of(i);
        t.ops = layer_ops(l);
        if (l.placement == Placement::CSP) {
            Command cmd;
            cmd.layer = l;
            cmd.ready_time = deps;
            cmd.blocking = true;
            const Ticket ticket = csp.enqueue(std::move(cmd));
            t.t_start = csp.completed().back().t_start;
            t.t_end = *ticket.completed_at;
            p.csp_busy += t.duration();
        } else {
            const double dur = host_time(cfg, g, l);
            size_t best = 0;
            for (size_t w = 1; w < workers.size(); ++w)
                if (std::max(workers[w], deps) < std::max(workers[best], deps)) best = w;
            t.worker = static_cast<int>(best);
            t.t_start = std::max(workers[best], deps);
            t.t_end = t.t_start + dur;
            workers[best] = t.t_end;
            p.gpp_busy += dur;
        }
        t.gops = gops_per_sec(t.ops, t.duration());
        ready[l.name] = t.t_end;
        p.serial_sum += t.duration();
        p.total_ops += t.ops;
        p.latency = std::max(p.latency, t.t_end);
        p.layers.push_back(std::move(t));
    }

    // Stage latencies by completion: they add up to the makespan.
    std::array<double, 3> stage_end{};
    for (int s = 0; s < 3; ++s) {
        stage_end[s] = s > 0 ? stage_end[s - 1] : 0.0;
        for (int i : plan.stages[s]) stage_end[s] = std::max(stage_end[s], p.layers[static_cast<size_t>(i)].t_end);
    }
    stage_end[2] = p.latency;
    for (int s = 0; s < 3; ++s) p.stage_latency[s] = stage_end[s] - (s > 0 ? stage_end[s - 1] : 0.0);
    p.avg_gops = gops_per_sec(p.total_ops, p.latency);
    p.csp_events = csp.events();
    return p;
}

std::vector<StageSlot> pipeline_timeline(const std::array<double, 3>& stages, int n_frames, int buffer_depth) {
    if (n_frames < 1) throw ValidationError("stream needs at least one frame");
    if (buffer_depth < 1) throw ValidationError("stage buffer depth must be at least 1");
    std::vector<StageSlot> slots;
    const auto at = [&](int f, int k) -> const StageSlot& { return slots[static_cast<size_t>(f * 3 + k)]; };
    for (int f = 0; f < n_frames; ++f)
        for (int k = 0; k < 3; ++k) {
            double start = 0;
            if (k > 0) start = std::max(start, at(f, k - 1).t_end);
            if (f > 0) start = std::max(start, at(f - 1, k).t_end);
            // The output buffer towards stage k+1 holds buffer_depth frames.
            if (k < 2 && f >= buffer_depth) start = std::max(start, at(f - buffer_depth, k + 1).t_start);
            slots.push_back({f, k, start, start + stages[static_cast<size_t>(k)]});
        }
    return slots;
}

RunReport simulate_stream(const PlatformConfig& cfg, const NetworkGraph& g, int n_frames) {
    RunReport r;
    r.network = g.name;
    r.config_hash = platform_hash(cfg);
    r.frames = n_frames;
    r.profile = simulate_frame(cfg, g);
    r.stage_latency = r.profile.stage_latency;
    r.timeline = pipeline_timeline(r.stage_latency, n_frames, cfg.stage_buffer_depth);
    r.first_frame_latency = r.stage_latency[0] + r.stage_latency[1] + r.stage_latency[2];
    r.period = n_frames == 1 ? r.first_frame_latency
                             : *std::max_element(r.stage_latency.begin(), r.stage_latency.end());
    r.fps = r.period > 0 ? 1.0 / r.period : 0.0;
    r.makespan = r.timeline.back().t_end;
    r.pipelined_gops = gops_per_sec(r.profile.total_ops, r.period);
    return r;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

void write_csv(std::ostream& os, const FrameProfile& p) {
    os << "row,block,layer,kind,placement,stage,size,t_start_ms,t_end_ms,time_ms,ops,gops\n";
    std::map<std::string, std::pair<double, int64_t>> blocks;
    std::vector<std::string> order;
    for (const auto& t : p.layers) {
        os << "layer," << t.block << ',' << t.name << ',' << to_string(t.kind) << ',' << to_string(t.placement) << ','
           << t.stage + 1 << ',' << t.out_shape.c << 'x' << t.out_shape.h << 'x' << t.out_shape.w << ','
           << fmt("%.6f", t.t_start * 1e3) << ',' << fmt("%.6f", t.t_end * 1e3) << ','
           << fmt("%.6f", t.duration() * 1e3) << ',' << t.ops << ',' << fmt("%.3f", t.gops) << '\n';
        if (t.block.empty()) continue;
        if (!blocks.count(t.block)) order.push_back(t.block);
        blocks[t.block].first += t.duration();
        blocks[t.block].second += t.ops;
    }
    for (const auto& b : order) {
        const auto& [sec, ops] = blocks[b];
        os << "block," << b << ",,,,,,,," << fmt("%.6f", sec * 1e3) << ',' << ops << ','
           << fmt("%.3f", gops_per_sec(ops, sec)) << '\n';
    }
    for (int s = 0; s < 3; ++s)
        os << "stage,,stage" << s + 1 << ",,,,,,," << fmt("%.6f", p.stage_latency[s] * 1e3) << ",,\n";
    os << "total,,latency,,,,,,," << fmt("%.6f", p.latency * 1e3) << ',' << p.total_ops << ','
       << fmt("%.3f", p.avg_gops) << '\n';
}

namespace {

nlohmann::ordered_json to_json(const FrameProfile& p) {
    nlohmann::ordered_json j;
    j["network"] = p.network;
    j["latency_ms"] = p.latency * 1e3;
    j["stage_latency_ms"] = {p.stage_latency[0] * 1e3, p.stage_latency[1] * 1e3, p.stage_latency[2] * 1e3};
    j["serial_sum_ms"] = p.serial_sum * 1e3;
    j["csp_busy_ms"] = p.csp_busy * 1e3;
    j["gpp_busy_ms"] = p.gpp_busy * 1e3;
    j["total_ops"] = p.total_ops;
    j["avg_gops"] = p.avg_gops;
    auto& layers = j["layers"] = nlohmann::ordered_json::array();
    for (const auto& t : p.layers) {
        nlohmann::ordered_json l;
        l["name"] = t.name;
        l["kind"] = std::string(to_string(t.kind));
        l["placement"] = std::string(to_string(t.placement));
        l["block"] = t.block;
        l["stage"] = t.stage + 1;
        l["worker"] = t.worker;
        l["shape"] = {t.out_shape.c, t.out_shape.h, t.out_shape.w};
        l["t_start_ms"] = t.t_start * 1e3;
        l["t_end_ms"] = t.t_end * 1e3;
        l["time_ms"] = t.duration() * 1e3;
        l["ops"] = t.ops;
        l["gops"] = t.gops;
        layers.push_back(std::move(l));
    }
    return j;
}

}  // namespace

void write_json(std::ostream& os, const FrameProfile& p) { os << to_json(p).dump(2) << '\n'; }

void write_json(std::ostream& os, const RunReport& r) {
    nlohmann::ordered_json j;
    j["report_version"] = 1;
    j["network"] = r.network;
    j["config_hash"] = r.config_hash;
    j["frames"] = r.frames;
    j["stage_latency_ms"] = {r.stage_latency[0] * 1e3, r.stage_latency[1] * 1e3, r.stage_latency[2] * 1e3};
    j["first_frame_latency_ms"] = r.first_frame_latency * 1e3;
    j["period_ms"] = r.period * 1e3;
    j["fps"] = r.fps;
    j["makespan_ms"] = r.makespan * 1e3;
    j["pipelined_gops"] = r.pipelined_gops;
    auto& tl = j["timeline"] = nlohmann::ordered_json::array();
    for (const auto& s : r.timeline)
        tl.push_back({{"frame", s.frame}, {"stage", s.stage + 1}, {"t_start_ms", s.t_start * 1e3},
                      {"t_end_ms", s.t_end * 1e3}});
    j["profile"] = to_json(r.profile);
    os << j.dump(2) << '\n';
}

namespace {

void paint(std::string& row, double t0, double t1, double span, char c) {
    const int w = static_cast<int>(row.size());
    if (span <= 0) return;
    int a = static_cast<int>(t0 / span * w), b = static_cast<int>(t1 / span * w);
    a = std::clamp(a, 0, w - 1);
    b = std::clamp(std::max(b, a + 1), 0, w);
    for (int i = a; i < b; ++i) row[static_cast<size_t>(i)] = c;
}

char glyph(const LayerTiming& t) {
    switch (t.kind) {
        case LayerKind::Conv: return '#';
        case LayerKind::Marshal: return 'm';
        case LayerKind::FullyConnected: return 'F';
        case LayerKind::Merge:
        case LayerKind::Add: return '+';
        case LayerKind::MaxPool:
        case LayerKind::AvgPool: return 'p';
        default: return '-';
    }
}

}  // namespace

void write_gantt(std::ostream& os, const FrameProfile& p, int width) {
    width = std::max(width, 10);
    int n_workers = 0;
    for (const auto& t : p.layers) n_workers = std::max(n_workers, t.worker + 1);
    std::vector<std::string> rows(static_cast<size_t>(n_workers + 1), std::string(static_cast<size_t>(width), '.'));
    for (const auto& t : p.layers) paint(rows[static_cast<size_t>(t.worker + 1)], t.t_start, t.t_end, p.latency, glyph(t));
    os << p.network << "  0 .. " << fmt("%.3f", p.latency * 1e3) << " ms   # conv  m marshal  F fc  + add/merge  p pool\n";
    os << "CSP   |" << rows[0] << "|\n";
    for (int w = 0; w < n_workers; ++w) os << "GPP" << w << "  |" << rows[static_cast<size_t>(w + 1)] << "|\n";
}

void write_gantt(std::ostream& os, const RunReport& r, int width) {
    width = std::max(width, 10);
    std::array<std::string, 3> rows;
    rows.fill(std::string(static_cast<size_t>(width), '.'));
    for (const auto& s : r.timeline)
        paint(rows[static_cast<size_t>(s.stage)], s.t_start, s.t_end, r.makespan, static_cast<char>('0' + s.frame % 10));
    os << r.network << "  " << r.frames << " frames, 0 .. " << fmt("%.3f", r.makespan * 1e3) << " ms, period "
       << fmt("%.3f", r.period * 1e3) << " ms (digits = frame index)\n";
    for (int s = 0; s < 3; ++s) os << "Stage" << s + 1 << " |" << rows[static_cast<size_t>(s)] << "|\n";
}

// ---------------------------------------------------------------------------
// Functional inference
// ---------------------------------------------------------------------------

namespace {

const LayerParams& params_for(const NetworkGraph& g, const LayerDesc& l) {
    const LayerParams* p = g.params_of(l.name);
    if (!p) throw ValidationError("layer '" + l.name + "' has no parameters loaded");
    return *p;
}

WeightTensor fixed_weights(const NetworkGraph& g, const LayerDesc& l) {
    const LayerParams& p = params_for(g, l);
    if (p.fixed) return *p.fixed;
    if (p.real) return quantize(*p.real);
    throw ValidationError("layer '" + l.name + "' has no weights");
}

FloatWeights float_weights(const NetworkGraph& g, const LayerDesc& l) {
    const LayerParams& p = params_for(g, l);
    if (p.real) return *p.real;
    if (p.fixed) return dequantize(*p.fixed);
    throw ValidationError("layer '" + l.name + "' has no weights");
}

template <typename Map>
std::vector<typename std::remove_cvref_t<decltype(std::declval<Map>().data()[0])>> flatten(const Map& m) {
    std::vector<std::remove_cvref_t<decltype(m.data()[0])>> v;
    v.reserve(static_cast<size_t>(m.channels()) * m.plane_size());
    for (int c = 0; c < m.channels(); ++c)
        for (int y = 0; y < m.height(); ++y)
            for (int x = 0; x < m.width(); ++x) v.push_back(m.at(c, y, x));
    return v;
}

template <typename T>
BasicFeatureMap<T> column(const std::vector<T>& v) {
    BasicFeatureMap<T> m(static_cast<int>(v.size()), 1, 1);
    for (size_t i = 0; i < v.size(); ++i) m.at(static_cast<int>(i), 0, 0) = v[i];
    return m;
}

int argmax(const std::vector<double>& v) {
    return v.empty() ? -1 : static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

FeatureMap run_fixed_layer(const PlatformConfig& cfg, const NetworkGraph& g, const LayerDesc& l,
                           const std::vector<const FeatureMap*>& in) {
    const FeatureMap& x = *in.front();
    switch (l.kind) {
        case LayerKind::Conv: {
            const WeightTensor w = fixed_weights(g, l);
            return l.placement == Placement::CSP ? run_layer(cfg.ce, l, w, x) : conv2d(cfg.ce, l, w, x);
        }
        case LayerKind::FullyConnected: {
            const auto y = fc_forward(flatten(x), fixed_weights(g, l));
            FeatureMap out = column(y);
            return l.fused_relu ? relu(out) : out;
        }
        case LayerKind::MaxPool:
        case LayerKind::AvgPool: {
            FeatureMap out = pool_generic(x, l.kh, l.kw, l.stride, l.pad,
                                          l.kind == LayerKind::MaxPool ? PoolMode::Max : PoolMode::Avg);
            return l.fused_relu ? relu(out) : out;
        }
        case LayerKind::Add: {
            std::vector<FeatureMap> parts;
            for (const auto* p : in) parts.push_back(*p);
            FeatureMap out = add_merge(parts);
            return l.fused_relu ? relu(out) : out;
        }
        case LayerKind::Merge: {
            std::vector<FeatureMap> parts;
            for (const auto* p : in) parts.push_back(*p);
            const LayerParams* p = g.params_of(l.name);
            std::vector<Fix16> bias(static_cast<size_t>(x.channels()));
            if (p && !p->merge_bias_fixed.empty()) bias = p->merge_bias_fixed;
            else if (p && !p->merge_bias_real.empty())
                for (size_t c = 0; c < bias.size(); ++c) bias[c] = quantize(double{p->merge_bias_real.at(c)});
            FeatureMap out = merge4(parts, bias);
            return l.fused_relu ? relu(out) : out;
        }
        case LayerKind::ReLU: return relu(x);
        case LayerKind::Identity: return x;
        case LayerKind::LRN: return lrn(x, l.lrn);
        case LayerKind::BatchNorm: {
            const LayerParams& p = params_for(g, l);
            if (!p.bn) throw ValidationError("batchnorm '" + l.name + "' has no parameters");
            return batchnorm(x, *p.bn);
        }
        case LayerKind::Marshal: return marshal(x, l.marshal_direction);
        case LayerKind::Softmax: {
            std::vector<double> logits;
            for (Fix16 v : flatten(x)) logits.push_back(dequantize(v));
            FeatureMap out(x.channels(), x.height(), x.width());
            const auto probs = softmax(logits);
            size_t k = 0;
            for (int c = 0; c < out.channels(); ++c)
                for (int y = 0; y < out.height(); ++y)
                    for (int xx = 0; xx < out.width(); ++xx) out.at(c, y, xx) = quantize(probs[k++]);
            return out;
        }
    }
    throw ValidationError("unsupported layer kind");
}

FloatMap run_float_layer(const NetworkGraph& g, const LayerDesc& l, const std::vector<const FloatMap*>& in) {
    const FloatMap& x = *in.front();
    switch (l.kind) {
        case LayerKind::Conv: return conv2d(l, float_weights(g, l), x);
        case LayerKind::FullyConnected: {
            FloatMap out = column(fc_forward(flatten(x), float_weights(g, l)));
            return l.fused_relu ? relu(out) : out;
        }
        case LayerKind::MaxPool:
        case LayerKind::AvgPool: {
            FloatMap out = pool_generic(x, l.kh, l.kw, l.stride, l.pad,
                                        l.kind == LayerKind::MaxPool ? PoolMode::Max : PoolMode::Avg);
            return l.fused_relu ? relu(out) : out;
        }
        case LayerKind::Add: {
            std::vector<FloatMap> parts;
            for (const auto* p : in) parts.push_back(*p);
            FloatMap out = add_merge(parts);
            return l.fused_relu ? relu(out) : out;
        }
        case LayerKind::Merge: {
            std::vector<FloatMap> parts;
            for (const auto* p : in) parts.push_back(*p);
            const LayerParams* p = g.params_of(l.name);
            std::vector<float> bias(static_cast<size_t>(x.channels()), 0.0f);
            if (p && !p->merge_bias_real.empty()) bias = p->merge_bias_real;
            else if (p && !p->merge_bias_fixed.empty())
                for (size_t c = 0; c < bias.size(); ++c) bias[c] = static_cast<float>(dequantize(p->merge_bias_fixed.at(c)));
            FloatMap out = merge4(parts, bias);
            return l.fused_relu ? relu(out) : out;
        }
        case LayerKind::ReLU: return relu(x);
        case LayerKind::Identity:
        case LayerKind::Marshal: return x;
        case LayerKind::LRN: return lrn(x, l.lrn);
        case LayerKind::BatchNorm: {
            const LayerParams& p = params_for(g, l);
            if (!p.bn) throw ValidationError("batchnorm '" + l.name + "' has no parameters");
            return batchnorm(x, *p.bn);
        }
        case LayerKind::Softmax: {
            std::vector<double> logits;
            for (float v : flatten(x)) logits.push_back(v);
            const auto probs = softmax(logits);
            FloatMap out(x.channels(), x.height(), x.width());
            size_t k = 0;
            for (int c = 0; c < out.channels(); ++c)
                for (int y = 0; y < out.height(); ++y)
                    for (int xx = 0; xx < out.width(); ++xx) out.at(c, y, xx) = static_cast<float>(probs[k++]);
            return out;
        }
    }
    throw ValidationError("unsupported layer kind");
}

// Scores of the final exit: softmax probabilities in double precision when
// the net ends in a softmax, else the logits.
template <typename Map, typename ToDouble>
std::vector<double> final_scores(const NetworkGraph& g, const std::map<std::string, Map>& values, ToDouble conv) {
    const auto exits = g.exits();
    if (exits.empty()) return {};
    const LayerDesc& last = g.layers[static_cast<size_t>(exits.back())];
    const bool soft = last.kind == LayerKind::Softmax;
    const Map& src = values.at(soft ? last.inputs.front() : last.name);
    std::vector<double> v;
    for (const auto& e : flatten(src)) v.push_back(conv(e));
    return soft ? softmax(v) : v;
}

template <typename Map>
void check_input(const NetworkGraph& g, const Map& input) {
    if (input.channels() != g.input_shape.c || input.height() != g.input_shape.h || input.width() != g.input_shape.w)
        throw ValidationError("input tensor does not match the network input " + to_string(g.input_shape));
}

}  // namespace

InferenceResult run_inference(const PlatformConfig& cfg, const NetworkGraph& g, const FeatureMap& input) {
    check_input(g, input);
    std::map<std::string, FeatureMap> values{{std::string(kInputName), to_planar(input)}};
    for (const auto& l : g.layers) {
        std::vector<const FeatureMap*> in;
        for (const auto& name : l.inputs) in.push_back(&values.at(name));
        values[l.name] = run_fixed_layer(cfg, g, l, in);
    }
    InferenceResult r;
    r.scores = final_scores(g, values, [](Fix16 v) { return dequantize(v); });
    r.argmax = argmax(r.scores);
    const auto exits = g.exits();
    if (!exits.empty()) r.fixed_output = values.at(g.layers[static_cast<size_t>(exits.back())].name);
    return r;
}

InferenceResult run_inference(const PlatformConfig& cfg, const NetworkGraph& g, const FloatMap& input,
                              NumericMode mode) {
    if (mode == NumericMode::Fixed) return run_inference(cfg, g, quantize(to_planar(input)));
    check_input(g, input);
    std::map<std::string, FloatMap> values{{std::string(kInputName), to_planar(input)}};
    for (const auto& l : g.layers) {
        std::vector<const FloatMap*> in;
        for (const auto& name : l.inputs) in.push_back(&values.at(name));
        values[l.name] = run_float_layer(g, l, in);
    }
    InferenceResult r;
    r.scores = final_scores(g, values, [](float v) { return double{v}; });
    r.argmax = argmax(r.scores);
    const auto exits = g.exits();
    if (!exits.empty()) r.float_output = values.at(g.layers[static_cast<size_t>(exits.back())].name);
    return r;
}

void force_host_placement(NetworkGraph& g) {
    for (auto& l : g.layers) l.forced_placement = Placement::GPP;
    place_layers(g);
}

}  // namespace cspsim
