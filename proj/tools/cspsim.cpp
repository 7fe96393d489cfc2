// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: functional inference, profiling, streaming,
// graph transformations, validation and random network generation.

#include "cspsim/ce_model.hpp"
#include "cspsim/csp_runtime.hpp"
#include "cspsim/driver.hpp"
#include "cspsim/host_model.hpp"
#include "cspsim/transforms.hpp"
#include "cspsim/weights_io.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

using namespace cspsim;

namespace {

struct TransformOpts {
    bool fold_bn = false;
    bool split_7x7 = false;
    bool embed_1x1 = false;
    double svd_factor = 0;
    int svd_rank = 0;
    std::string svd_layer;
};

void add_transform_flags(CLI::App* cmd, TransformOpts& t) {
    cmd->add_flag("--fold-bn", t.fold_bn, "Fold batch norm into the preceding convolution");
    cmd->add_flag("--split-7x7", t.split_7x7, "Decompose 7x7 convolutions into four 5x5 ones and a merge");
    cmd->add_flag("--embed-1x1", t.embed_1x1, "Run 1x1 convolutions as 3x3 with a centre tap");
    cmd->add_option("--svd-fc", t.svd_factor, "Low-rank compression of an FC layer by this parameter factor");
    cmd->add_option("--svd-rank", t.svd_rank, "Explicit rank for --svd-fc");
    cmd->add_option("--svd-layer", t.svd_layer, "FC layer to compress (default: the first one)");
}

void apply_transforms(NetworkGraph& g, const TransformOpts& t) {
    if (t.fold_bn) fold_batchnorm(g);
    if (t.split_7x7) decompose_7x7(g);
    if (t.embed_1x1) embed_1x1(g);
    if (t.svd_factor > 0 || t.svd_rank > 0) {
        std::string name = t.svd_layer;
        if (name.empty()) {
            const auto it = std::find_if(g.layers.begin(), g.layers.end(),
                                         [](const LayerDesc& l) { return l.kind == LayerKind::FullyConnected; });
            if (it == g.layers.end()) throw ValidationError("--svd-fc: the network has no FC layer");
            name = it->name;
        }
        svd_compress(g, name, t.svd_factor > 0 ? t.svd_factor : 3.0,
                     t.svd_rank > 0 ? std::optional<int>(t.svd_rank) : std::nullopt);
    }
}

PlatformConfig platform_from(const std::string& path) { return path.empty() ? default_platform() : load_platform(path); }

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot write " + path);
    return f;
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

int cmd_run(const std::string& net, const std::string& weights, const std::string& input, const std::string& platform,
            bool use_float, int top_k) {
    NetworkGraph g = load_network(net);
    load_weights_file(weights, g);
    place_layers(g);
    const PlatformConfig cfg = platform_from(platform);
    const FeatureMap x = load_tensor(input);
    const InferenceResult r = use_float ? run_inference(cfg, g, dequantize(to_planar(x)), NumericMode::Float)
                                        : run_inference(cfg, g, x);
    std::vector<int> idx(r.scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return r.scores[a] > r.scores[b]; });
    top_k = std::min<int>(top_k, static_cast<int>(idx.size()));
    std::printf("rank,class,score\n");
    for (int k = 0; k < top_k; ++k) std::printf("%d,%d,%.6f\n", k + 1, idx[k], r.scores[static_cast<size_t>(idx[k])]);
    return 0;
}

// ---------------------------------------------------------------------------
// profile / stream
// ---------------------------------------------------------------------------

NetworkGraph prepared(const std::string& net, const std::string& weights, const TransformOpts& t) {
    NetworkGraph g = load_network(net);
    if (!weights.empty()) load_weights_file(weights, g);
    apply_transforms(g, t);
    place_layers(g);
    return g;
}

int cmd_profile(const std::string& net, const std::string& weights, const std::string& platform,
                const std::string& format, const std::string& events, const TransformOpts& t) {
    const NetworkGraph g = prepared(net, weights, t);
    const FrameProfile p = simulate_frame(platform_from(platform), g);
    if (format == "csv") write_csv(std::cout, p);
    else if (format == "json") write_json(std::cout, p);
    else write_gantt(std::cout, p);
    if (!events.empty()) {
        auto f = open_out(events);
        write_event_log(f, p.csp_events);
    }
    return 0;
}

int cmd_stream(const std::string& net, const std::string& weights, const std::string& platform, int frames,
               const std::string& format, const TransformOpts& t) {
    const NetworkGraph g = prepared(net, weights, t);
    const RunReport r = simulate_stream(platform_from(platform), g, frames);
    if (format == "json") {
        write_json(std::cout, r);
    } else if (format == "csv") {
        write_csv(std::cout, r.profile);
    } else {
        write_gantt(std::cout, r);
        std::printf("first-frame latency %.3f ms, period %.3f ms, %.3f fps, %.2f GOps/s pipelined\n",
                    r.first_frame_latency * 1e3, r.period * 1e3, r.fps, r.pipelined_gops);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// transform
// ---------------------------------------------------------------------------

int cmd_transform(const std::string& net, const std::string& weights, const std::string& out_net,
                  const std::string& out_weights, const TransformOpts& t) {
    NetworkGraph g = load_network(net);
    bool have_real = false;
    if (!weights.empty()) {
        load_weights_file(weights, g);
        for (const auto& [name, p] : g.params) have_real = have_real || p.real.has_value();
    }
    apply_transforms(g, t);
    const std::string text = write_network(g);
    if (out_net.empty()) {
        std::cout << text;
    } else {
        auto f = open_out(out_net);
        f << text;
    }
    if (!out_weights.empty()) {
        if (weights.empty()) throw ValidationError("--weights-out needs input weights");
        save_weights_file(out_weights, g, have_real ? WeightDtype::Float : WeightDtype::Fixed);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

// Small random CE-vs-host comparison for the given kernel/stride.
bool oracle_selftest(const CeConfig& ce, int k, int stride, std::mt19937& rng) {
    LayerDesc l;
    l.name = "selftest";
    l.kind = LayerKind::Conv;
    l.kh = l.kw = k;
    l.stride = stride;
    l.pad = Padding::uniform(k / 2);
    l.out_channels = 6;
    std::uniform_int_distribution<int> val(-600, 600);
    FeatureMap x(14, 11, 13);
    for (Fix16& v : x.data()) v = Fix16::from_raw(val(rng));
    WeightTensor w(6, 14, k, k);
    for (Fix16& v : w.data) v = Fix16::from_raw(val(rng) / 4);
    for (Fix16& v : w.bias) v = Fix16::from_raw(val(rng));
    l.in_shape = {14, 11, 13};
    return to_planar(run_layer(ce, l, w, x)) == conv2d(ce, l, w, x);
}

int cmd_validate(const std::string& net, const std::string& weights, const std::string& platform,
                 const TransformOpts& t) {
    const PlatformConfig cfg = platform_from(platform);
    const NetworkGraph g = prepared(net, weights, t);
    int failures = 0;
    std::printf("network %s: %zu layers, input %s\n", g.name.c_str(), g.layers.size(), to_string(g.input_shape).c_str());
    for (const auto& l : g.layers) {
        std::string status = "ok";
        if (l.placement == Placement::CSP) {
            try {
                const LayerSchedule s = tile_and_schedule(cfg, l);
                const ScheduleCheck c = check_schedule(cfg, s);
                if (!c.ok) status = "schedule check failed: " + c.message;
            } catch (const Error& e) {
                status = e.what();
            }
        }
        if (status != "ok") ++failures;
        std::printf("  %-28s %-9s %-3s %-14s %s\n", l.name.c_str(), std::string(to_string(l.kind)).c_str(),
                    std::string(to_string(l.placement)).c_str(), to_string(l.out_shape).c_str(), status.c_str());
    }
    std::mt19937 rng(7);
    for (int k : {1, 3, 5})
        for (int s : {1, 2}) {
            const bool ok = oracle_selftest(cfg.ce, k, s, rng);
            std::printf("self-test CE vs host %dx%d stride %d: %s\n", k, k, s, ok ? "ok" : "MISMATCH");
            failures += ok ? 0 : 1;
        }
    if (failures) {
        std::printf("%d problem(s)\n", failures);
        return static_cast<int>(ExitCode::ValidationFailure);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// gen-random
// ---------------------------------------------------------------------------

// Comma-separated tokens: conv<k>:<out>[/s<stride>], maxpool, avgpool, relu,
// fc:<out>, softmax. Example: "conv3:16,maxpool,conv5:8/s2,fc:10,softmax".
NetworkGraph random_network(const std::string& spec, Shape input, const std::string& name) {
    NetworkGraph g;
    g.name = name;
    g.input_shape = input;
    std::string prev(kInputName);
    int n = 0;
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        LayerDesc l;
        l.name = "l" + std::to_string(n++);
        l.inputs = {prev};
        if (tok.rfind("conv", 0) == 0) {
            int k = 0, out = 0, stride = 1;
            if (std::sscanf(tok.c_str(), "conv%d:%d/s%d", &k, &out, &stride) < 2)
                throw ValidationError("gen-random: bad token '" + tok + "'");
            l.kind = LayerKind::Conv;
            l.kh = l.kw = k;
            l.stride = stride;
            l.pad = Padding::uniform(k / 2);
            l.out_channels = out;
        } else if (tok == "maxpool" || tok == "avgpool") {
            l.kind = tok == "maxpool" ? LayerKind::MaxPool : LayerKind::AvgPool;
            l.kh = l.kw = 2;
            l.stride = 2;
        } else if (tok == "relu") {
            l.kind = LayerKind::ReLU;
        } else if (tok.rfind("fc:", 0) == 0) {
            l.kind = LayerKind::FullyConnected;
            l.out_channels = std::stoi(tok.substr(3));
        } else if (tok == "softmax") {
            l.kind = LayerKind::Softmax;
        } else {
            throw ValidationError("gen-random: unknown token '" + tok + "'");
        }
        prev = l.name;
        g.layers.push_back(std::move(l));
    }
    if (g.layers.empty()) throw ValidationError("gen-random: empty spec");
    g.finalize();
    return g;
}

int cmd_gen_random(const std::string& spec, const std::string& input, unsigned seed, const std::string& prefix) {
    Shape in{};
    if (std::sscanf(input.c_str(), "%dx%dx%d", &in.c, &in.h, &in.w) != 3)
        throw ValidationError("--input expects CxHxW");
    NetworkGraph g = random_network(spec, in, "random");
    std::mt19937 rng(seed);
    for (const auto& l : g.layers) {
        if (!l.has_weights()) continue;
        const int n_in = l.is_conv() ? l.in_shape.c : static_cast<int>(l.in_shape.elements());
        const int kh = l.is_conv() ? l.kh : 1, kw = l.is_conv() ? l.kw : 1;
        FloatWeights w(l.out_channels, n_in, kh, kw);
        // Scaled so that activations stay well inside Q5.11.
        std::uniform_real_distribution<float> d(-1.0f, 1.0f);
        const float scale = 1.0f / std::sqrt(static_cast<float>(n_in * kh * kw));
        for (float& v : w.data) v = d(rng) * scale;
        for (float& v : w.bias) v = d(rng) * 0.1f;
        g.params[l.name].real = std::move(w);
    }
    FloatMap x(in.c, in.h, in.w);
    std::uniform_real_distribution<float> d(-1.0f, 1.0f);
    for (float& v : x.data()) v = d(rng);

    {
        auto f = open_out(prefix + ".net");
        f << write_network(g);
    }
    save_weights_file(prefix + ".ngwb", g, WeightDtype::Float);
    save_tensor(prefix + ".ngtf", quantize(x));
    std::printf("wrote %s.net, %s.ngwb, %s.ngtf\n", prefix.c_str(), prefix.c_str(), prefix.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Simulator of a convolution accelerator with a host processor"};
    app.require_subcommand(1);

    std::string net, weights, input, platform, format = "gantt", events, out_net, out_weights, spec;
    std::string in_shape = "3x32x32", prefix = "random";
    bool use_float = false;
    int top_k = 5, frames = 4;
    unsigned seed = 1;
    TransformOpts t;

    auto* run = app.add_subcommand("run", "Functional inference, prints the top-k classes");
    run->add_option("net", net, "Network description")->required();
    run->add_option("weights", weights, "Weight container")->required();
    run->add_option("input", input, "Input tensor (NGTF)")->required();
    run->add_option("--platform", platform, "Platform config file");
    run->add_flag("--float", use_float, "Float reference instead of Q5.11");
    run->add_option("--top", top_k, "Number of classes to print");

    auto* profile = app.add_subcommand("profile", "Single-frame timing profile");
    profile->add_option("net", net)->required();
    profile->add_option("weights", weights, "Optional weight container");
    profile->add_option("--platform", platform);
    profile->add_option("--format", format, "csv, json or gantt")->check(CLI::IsMember({"csv", "json", "gantt"}));
    profile->add_option("--events", events, "Write the accelerator event log (JSON lines)");
    add_transform_flags(profile, t);

    auto* stream = app.add_subcommand("stream", "Pipelined multi-frame timing");
    stream->add_option("net", net)->required();
    stream->add_option("weights", weights);
    stream->add_option("--platform", platform);
    stream->add_option("--frames", frames)->check(CLI::PositiveNumber);
    stream->add_option("--format", format)->check(CLI::IsMember({"csv", "json", "gantt"}));
    add_transform_flags(stream, t);

    auto* transform = app.add_subcommand("transform", "Apply graph transformations");
    transform->add_option("net", net)->required();
    transform->add_option("weights", weights);
    transform->add_option("-o,--out", out_net, "Output network (default stdout)");
    transform->add_option("--weights-out", out_weights, "Output weight container");
    add_transform_flags(transform, t);

    auto* validate = app.add_subcommand("validate", "Placement, shape and schedule checks plus oracle self-tests");
    validate->add_option("net", net)->required();
    validate->add_option("weights", weights);
    validate->add_option("--platform", platform);
    add_transform_flags(validate, t);

    auto* gen = app.add_subcommand("gen-random", "Random network, weights and input");
    gen->add_option("spec", spec, "e.g. conv3:16,maxpool,fc:10,softmax")->required();
    gen->add_option("--input", in_shape, "CxHxW");
    gen->add_option("--seed", seed);
    gen->add_option("-o,--out", prefix, "Output prefix");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(ExitCode::ValidationFailure);
    }

    try {
        if (*run) return cmd_run(net, weights, input, platform, use_float, top_k);
        if (*profile) return cmd_profile(net, weights, platform, format, events, t);
        if (*stream) return cmd_stream(net, weights, platform, frames, format, t);
        if (*transform) return cmd_transform(net, weights, out_net, out_weights, t);
        if (*validate) return cmd_validate(net, weights, platform, t);
        if (*gen) return cmd_gen_random(spec, in_shape, seed, prefix);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::IoError);
    }
    return 0;
}
