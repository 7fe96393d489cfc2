// SPDX-License-Identifier: Apache-2.0

#include "cspsim/graph.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <queue>
#include <set>
#include <sstream>

namespace cspsim {

namespace {

struct KindName {
    LayerKind kind;
    std::string_view name;
};

constexpr KindName kKindNames[] = {
    {LayerKind::Conv, "conv"},       {LayerKind::MaxPool, "maxpool"}, {LayerKind::AvgPool, "avgpool"},
    {LayerKind::FullyConnected, "fc"}, {LayerKind::Add, "add"},     {LayerKind::ReLU, "relu"},
    {LayerKind::Identity, "identity"}, {LayerKind::LRN, "lrn"},     {LayerKind::Marshal, "marshal"},
    {LayerKind::Merge, "merge"},     {LayerKind::BatchNorm, "batchnorm"}, {LayerKind::Softmax, "softmax"},
};

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    size_t start = 0;
    while (start <= s.size()) {
        const size_t pos = s.find(sep, start);
        const auto piece = s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
        if (!piece.empty()) out.emplace_back(piece);
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::vector<std::string> tokens(std::string_view line) {
    std::vector<std::string> out;
    std::istringstream is{std::string(line)};
    std::string t;
    while (is >> t) out.push_back(t);
    return out;
}

int parse_int(const std::string& s, int line) {
    int v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw ValidationError("line " + std::to_string(line) + ": expected integer, got '" + s + "'");
    return v;
}

double parse_double(const std::string& s, int line) {
    try {
        size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ValidationError("line " + std::to_string(line) + ": expected number, got '" + s + "'");
    }
}

std::pair<int, int> parse_kernel(const std::string& s, int line) {
    const auto x = s.find('x');
    if (x == std::string::npos) {
        const int k = parse_int(s, line);
        return {k, k};
    }
    return {parse_int(s.substr(0, x), line), parse_int(s.substr(x + 1), line)};
}

LayerKind parse_kind(const std::string& s, int line) {
    for (const auto& kn : kKindNames)
        if (kn.name == s) return kn.kind;
    throw ValidationError("line " + std::to_string(line) + ": unknown layer kind '" + s + "'");
}

PoolMode parse_pool_mode(const std::string& s, int line) {
    if (s == "max") return PoolMode::Max;
    if (s == "avg") return PoolMode::Avg;
    if (s == "down") return PoolMode::Downsample;
    throw ValidationError("line " + std::to_string(line) + ": unknown pool mode '" + s + "'");
}

void apply_key(LayerDesc& l, const std::vector<std::string>& t, int line) {
    const std::string& key = t[0];
    auto need = [&](size_t n) {
        if (t.size() < n + 1)
            throw ValidationError("line " + std::to_string(line) + ": key '" + key + "' needs " + std::to_string(n) +
                                  " value(s)");
    };
    if (key == "kind") {
        need(1);
        l.kind = parse_kind(t[1], line);
    } else if (key == "out") {
        need(1);
        l.out_channels = parse_int(t[1], line);
    } else if (key == "in") {
        need(1);
        l.declared_in_channels = parse_int(t[1], line);
    } else if (key == "kernel" || key == "window") {
        need(1);
        std::tie(l.kh, l.kw) = parse_kernel(t[1], line);
    } else if (key == "stride") {
        need(1);
        l.stride = parse_int(t[1], line);
    } else if (key == "pad") {
        need(1);
        const auto parts = split(t[1], ',');
        if (parts.size() == 1) {
            l.pad = Padding::uniform(parse_int(parts[0], line));
        } else if (parts.size() == 4) {
            l.pad = {parse_int(parts[0], line), parse_int(parts[1], line), parse_int(parts[2], line),
                     parse_int(parts[3], line)};
        } else {
            throw ValidationError("line " + std::to_string(line) + ": pad takes 1 or 4 comma-separated values");
        }
    } else if (key == "activation") {
        need(1);
        if (t[1] == "relu") l.fused_relu = true;
        else if (t[1] == "none") l.fused_relu = false;
        else throw ValidationError("line " + std::to_string(line) + ": unknown activation '" + t[1] + "'");
    } else if (key == "pool") {
        need(2);
        l.fused_pool = FusedPool{parse_pool_mode(t[1], line), parse_int(t[2], line)};
    } else if (key == "from") {
        need(1);
        for (size_t i = 1; i < t.size(); ++i)
            for (auto& s : split(t[i], ',')) l.inputs.push_back(s);
    } else if (key == "block") {
        need(1);
        l.block = t[1];
    } else if (key == "bias") {
        need(1);
        l.has_bias = t[1] == "yes";
    } else if (key == "embedded") {
        need(1);
        l.embedded_1x1 = t[1] == "1x1";
    } else if (key == "direction") {
        need(1);
        if (t[1] == "to_csp") l.marshal_direction = MarshalDirection::ToCSP;
        else if (t[1] == "from_csp") l.marshal_direction = MarshalDirection::FromCSP;
        else throw ValidationError("line " + std::to_string(line) + ": unknown marshal direction '" + t[1] + "'");
    } else if (key == "placement") {
        need(1);
        if (t[1] == "csp") l.forced_placement = Placement::CSP;
        else if (t[1] == "gpp") l.forced_placement = Placement::GPP;
        else throw ValidationError("line " + std::to_string(line) + ": unknown placement '" + t[1] + "'");
    } else if (key == "lrn") {
        need(4);
        l.lrn = {parse_int(t[1], line), parse_double(t[2], line), parse_double(t[3], line), parse_double(t[4], line)};
    } else if (key == "eps") {
        need(1);
        l.bn_epsilon = parse_double(t[1], line);
    } else if (key == "history") {
        need(1);
        l.history = split(t[1], ';');
    } else {
        throw ValidationError("line " + std::to_string(line) + ": unknown key '" + key + "'");
    }
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace

std::string_view to_string(LayerKind k) {
    for (const auto& kn : kKindNames)
        if (kn.kind == k) return kn.name;
    return "?";
}

std::string_view to_string(Placement p) { return p == Placement::CSP ? "CSP" : "GPP"; }

std::string_view to_string(PoolMode m) {
    switch (m) {
        case PoolMode::Max: return "max";
        case PoolMode::Avg: return "avg";
        case PoolMode::Downsample: return "down";
    }
    return "?";
}

std::string_view to_string(MarshalDirection d) { return d == MarshalDirection::ToCSP ? "to_csp" : "from_csp"; }

std::string to_string(const Shape& s) {
    return std::to_string(s.c) + "x" + std::to_string(s.h) + "x" + std::to_string(s.w);
}

bool LayerDesc::has_history(std::string_view prefix) const {
    return std::any_of(history.begin(), history.end(), [&](const std::string& h) { return h.starts_with(prefix); });
}

int NetworkGraph::index_of(std::string_view n) const {
    for (size_t i = 0; i < layers.size(); ++i)
        if (layers[i].name == n) return static_cast<int>(i);
    return -1;
}

LayerDesc& NetworkGraph::layer(std::string_view n) {
    const int i = index_of(n);
    if (i < 0) throw ValidationError("no layer named '" + std::string(n) + "'");
    return layers[static_cast<size_t>(i)];
}

const LayerDesc& NetworkGraph::layer(std::string_view n) const {
    return const_cast<NetworkGraph*>(this)->layer(n);
}

Shape NetworkGraph::shape_of(std::string_view tensor) const {
    if (tensor == kInputName) return input_shape;
    return layer(tensor).out_shape;
}

std::vector<int> NetworkGraph::consumers(std::string_view n) const {
    std::vector<int> out;
    for (size_t i = 0; i < layers.size(); ++i)
        if (std::find(layers[i].inputs.begin(), layers[i].inputs.end(), n) != layers[i].inputs.end())
            out.push_back(static_cast<int>(i));
    return out;
}

std::vector<int> NetworkGraph::exits() const {
    std::vector<int> out;
    for (size_t i = 0; i < layers.size(); ++i)
        if (consumers(layers[i].name).empty()) out.push_back(static_cast<int>(i));
    return out;
}

LayerParams* NetworkGraph::params_of(std::string_view n) {
    const auto it = params.find(std::string(n));
    return it == params.end() ? nullptr : &it->second;
}

const LayerParams* NetworkGraph::params_of(std::string_view n) const {
    const auto it = params.find(std::string(n));
    return it == params.end() ? nullptr : &it->second;
}

void NetworkGraph::finalize() {
    if (layers.empty()) throw ValidationError("network '" + name + "' has no layers");
    if (input_shape.c <= 0 || input_shape.h <= 0 || input_shape.w <= 0)
        throw ValidationError("network input shape must be positive");

    std::map<std::string, size_t> by_name;
    for (size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].name.empty() || layers[i].name == kInputName)
            throw ValidationError("invalid layer name '" + layers[i].name + "'");
        if (!by_name.emplace(layers[i].name, i).second)
            throw ValidationError("duplicate layer name '" + layers[i].name + "'");
    }

    // Stable Kahn sort: among ready layers always take the earliest declared.
    std::vector<int> indegree(layers.size(), 0);
    std::vector<std::vector<size_t>> succ(layers.size());
    for (size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].inputs.empty())
            throw ValidationError("layer '" + layers[i].name + "' has no inputs");
        for (const auto& in : layers[i].inputs) {
            if (in == kInputName) continue;
            const auto it = by_name.find(in);
            if (it == by_name.end())
                throw ValidationError("layer '" + layers[i].name + "' reads unknown tensor '" + in + "'");
            succ[it->second].push_back(i);
            ++indegree[i];
        }
    }
    std::priority_queue<size_t, std::vector<size_t>, std::greater<>> ready;
    for (size_t i = 0; i < layers.size(); ++i)
        if (indegree[i] == 0) ready.push(i);
    std::vector<LayerDesc> sorted;
    sorted.reserve(layers.size());
    while (!ready.empty()) {
        const size_t i = ready.top();
        ready.pop();
        sorted.push_back(layers[i]);
        for (size_t s : succ[i])
            if (--indegree[s] == 0) ready.push(s);
    }
    if (sorted.size() != layers.size()) throw ValidationError("network '" + name + "' contains a cycle");
    layers = std::move(sorted);

    std::map<std::string, Shape> shapes{{std::string(kInputName), input_shape}};
    for (auto& l : layers) {
        const auto err = [&](const std::string& msg) { return ValidationError("layer '" + l.name + "': " + msg); };
        const Shape in = shapes.at(l.inputs.front());
        for (const auto& src : l.inputs)
            if (l.kind != LayerKind::FullyConnected && shapes.at(src) != in)
                throw err("input shapes differ (" + to_string(in) + " vs " + to_string(shapes.at(src)) + ")");
        const bool single = l.kind != LayerKind::Add && l.kind != LayerKind::Merge;
        if (single && l.inputs.size() != 1) throw err("expects exactly one input");
        if (!single && l.inputs.size() < 2) throw err("expects at least two inputs");

        l.in_shape = in;
        Shape out = in;
        switch (l.kind) {
            case LayerKind::Conv: {
                if (l.kh < 1 || l.kw < 1 || l.stride < 1) throw err("bad kernel or stride");
                if (l.out_channels < 1) throw err("conv needs 'out'");
                if (l.declared_in_channels != 0 && l.declared_in_channels != in.c)
                    throw err("declared in=" + std::to_string(l.declared_in_channels) + " but producer has " +
                              std::to_string(in.c) + " channels");
                out = {l.out_channels, window_out(in.h, l.kh, l.stride, l.pad.top, l.pad.bottom),
                       window_out(in.w, l.kw, l.stride, l.pad.left, l.pad.right)};
                if (l.fused_pool) {
                    if (l.fused_pool->window < 1) throw err("bad pool window");
                    out.h /= l.fused_pool->window;
                    out.w /= l.fused_pool->window;
                }
                break;
            }
            case LayerKind::MaxPool:
            case LayerKind::AvgPool:
                if (l.kh < 1 || l.kw < 1 || l.stride < 1) throw err("bad pooling window or stride");
                out = {in.c, window_out(in.h, l.kh, l.stride, l.pad.top, l.pad.bottom),
                       window_out(in.w, l.kw, l.stride, l.pad.left, l.pad.right)};
                break;
            case LayerKind::FullyConnected:
                if (l.out_channels < 1) throw err("fc needs 'out'");
                if (l.declared_in_channels != 0 && l.declared_in_channels != in.elements())
                    throw err("declared in does not match flattened input");
                out = {l.out_channels, 1, 1};
                break;
            default:
                if (l.declared_in_channels != 0 && l.declared_in_channels != in.c)
                    throw err("declared in does not match producer channels");
                break;
        }
        if (out.c < 1 || out.h < 1 || out.w < 1) throw err("output shape " + to_string(out) + " is empty");
        l.out_shape = out;
        shapes[l.name] = out;
    }
}

NetworkGraph parse_network(std::string_view text) {
    NetworkGraph g;
    bool have_input = false;
    std::optional<LayerDesc> current;
    std::istringstream is{std::string(text)};
    std::string raw;
    int line = 0;
    while (std::getline(is, raw)) {
        ++line;
        if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
        const auto t = tokens(raw);
        if (t.empty()) continue;
        if (current) {
            if (t[0] == "end") {
                g.layers.push_back(std::move(*current));
                current.reset();
            } else {
                apply_key(*current, t, line);
            }
            continue;
        }
        if (t[0] == "network" && t.size() >= 2) {
            g.name = t[1];
        } else if (t[0] == "input" && t.size() >= 4) {
            g.input_shape = {parse_int(t[1], line), parse_int(t[2], line), parse_int(t[3], line)};
            if (t.size() >= 5) g.input_is_float = t[4] != "fixed";
            have_input = true;
        } else if (t[0] == "layer" && t.size() == 2) {
            current.emplace();
            current->name = t[1];
        } else {
            throw ValidationError("line " + std::to_string(line) + ": unexpected '" + t[0] + "'");
        }
    }
    if (current) throw ValidationError("layer '" + current->name + "' is missing 'end'");
    if (!have_input) throw ValidationError("network description lacks an 'input' line");
    g.finalize();
    return g;
}

NetworkGraph load_network(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open network description " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_network(ss.str());
}

std::string write_network(const NetworkGraph& g) {
    std::ostringstream os;
    os << "network " << g.name << "\n";
    os << "input " << g.input_shape.c << " " << g.input_shape.h << " " << g.input_shape.w << " "
       << (g.input_is_float ? "float" : "fixed") << "\n";
    for (const auto& l : g.layers) {
        os << "\nlayer " << l.name << "\n";
        os << "  kind " << to_string(l.kind) << "\n";
        os << "  from ";
        for (size_t i = 0; i < l.inputs.size(); ++i) os << (i ? "," : "") << l.inputs[i];
        os << "\n";
        const bool windowed = l.kind == LayerKind::Conv || l.kind == LayerKind::MaxPool || l.kind == LayerKind::AvgPool;
        if (l.kind == LayerKind::Conv || l.kind == LayerKind::FullyConnected) os << "  out " << l.out_channels << "\n";
        if (l.declared_in_channels) os << "  in " << l.declared_in_channels << "\n";
        if (windowed) {
            os << "  kernel " << l.kh;
            if (l.kw != l.kh) os << "x" << l.kw;
            os << "\n  stride " << l.stride << "\n";
            if (l.pad.is_uniform()) os << "  pad " << l.pad.top << "\n";
            else os << "  pad " << l.pad.top << "," << l.pad.left << "," << l.pad.bottom << "," << l.pad.right << "\n";
        }
        if (l.has_weights() || l.kind == LayerKind::Merge) {
            if (!l.has_bias) os << "  bias no\n";
        }
        if (l.fused_relu) os << "  activation relu\n";
        if (l.fused_pool) os << "  pool " << to_string(l.fused_pool->mode) << " " << l.fused_pool->window << "\n";
        if (l.embedded_1x1) os << "  embedded 1x1\n";
        if (l.kind == LayerKind::Marshal) os << "  direction " << to_string(l.marshal_direction) << "\n";
        if (l.kind == LayerKind::LRN)
            os << "  lrn " << l.lrn.size << " " << fmt_double(l.lrn.alpha) << " " << fmt_double(l.lrn.beta) << " "
               << fmt_double(l.lrn.k) << "\n";
        if (l.kind == LayerKind::BatchNorm) os << "  eps " << fmt_double(l.bn_epsilon) << "\n";
        if (l.forced_placement) os << "  placement " << (*l.forced_placement == Placement::CSP ? "csp" : "gpp") << "\n";
        if (!l.block.empty()) os << "  block " << l.block << "\n";
        if (!l.history.empty()) {
            os << "  history ";
            for (size_t i = 0; i < l.history.size(); ++i) os << (i ? ";" : "") << l.history[i];
            os << "\n";
        }
        os << "end\n";
    }
    return os.str();
}

}  // namespace cspsim
