// SPDX-License-Identifier: Apache-2.0

#include "cspsim/driver.hpp"
#include "cspsim/transforms.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <sstream>

using namespace cspsim;

namespace {

NetworkGraph net(const char* file) {
    NetworkGraph g = load_network(std::string(CSPSIM_SOURCE_DIR) + "/networks/" + file);
    if (g.contains("fc6")) svd_compress(g, "fc6", 3.0, 512);
    fold_batchnorm(g);
    decompose_7x7(g);
    embed_1x1(g);
    place_layers(g);
    return g;
}

// 5x7 glyphs, one string per row.
constexpr std::array<std::array<const char*, 7>, 10> kGlyphs{{
    {" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "},
    {"  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "},
    {" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"},
    {"#####", "   # ", "  #  ", "   # ", "    #", "#   #", " ### "},
    {"   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "},
    {"#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "},
    {"  ## ", " #   ", "#    ", "#### ", "#   #", "#   #", " ### "},
    {"#####", "    #", "   # ", "  #  ", " #   ", " #   ", " #   "},
    {" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "},
    {" ### ", "#   #", "#   #", " ####", "    #", "   # ", " ##  "},
}};

FloatMap digit(std::mt19937& rng, int label) {
    std::uniform_int_distribution<int> shift_x(0, 3), shift_y(0, 1);
    std::normal_distribution<float> noise(0.0f, 0.15f);
    FloatMap m(1, 8, 8);
    const int dx = shift_x(rng), dy = shift_y(rng);
    for (int y = 0; y < 7; ++y)
        for (int x = 0; x < 5; ++x)
            if (kGlyphs[size_t(label)][size_t(y)][x] == '#') m.at(0, y + dy, x + dx) = 1.0f;
    for (float& v : m.data()) v = std::clamp(v + noise(rng), -1.0f, 2.0f);
    return m;
}

const char* kDigitNet = R"(
network digits
input 1 8 8 float
layer c1
  kind conv
  from input
  out 8
  kernel 3
  pad 1
  activation relu
  pool max 2
end
layer fc
  kind fc
  from c1
  out 10
end
layer prob
  kind softmax
  from fc
end
)";

// Features the classifier head sees, computed with the oracle.
std::vector<double> features(const FloatMap& x, const FloatWeights& w) {
    auto spec = oracle::ConvSpec::uniform(3, 1, 1, 0);
    spec.relu = true;
    const FloatMap y = oracle::conv_float(x, w, spec);
    std::vector<double> f;
    for (int c = 0; c < y.channels(); ++c)
        for (int r = 0; r < 4; ++r)
            for (int k = 0; k < 4; ++k)
                f.push_back(std::max({y.at(c, 2 * r, 2 * k), y.at(c, 2 * r, 2 * k + 1), y.at(c, 2 * r + 1, 2 * k),
                                      y.at(c, 2 * r + 1, 2 * k + 1)}));
    return f;
}

}  // namespace

TEST_CASE("pipeline algebra") {
    const auto t = pipeline_timeline({0.010, 0.100, 0.020}, 6, 1);
    auto slot = [&](int f, int s) {
        for (const StageSlot& x : t)
            if (x.frame == f && x.stage == s) return x;
        FAIL("missing slot");
        return StageSlot{};
    };
    CHECK(slot(0, 2).t_end == doctest::Approx(0.130));
    for (int f = 1; f < 6; ++f) {
        CHECK(slot(f, 2).t_end - slot(f - 1, 2).t_end == doctest::Approx(0.100));
        for (int s = 0; s < 3; ++s) {
            CHECK(slot(f, s).t_start >= slot(f - 1, s).t_end - 1e-12);
            if (s > 0) CHECK(slot(f, s).t_start >= slot(f, s - 1).t_end - 1e-12);
        }
    }
    const auto one = pipeline_timeline({0.010, 0.100, 0.020}, 1, 1);
    CHECK(one.back().t_end == doctest::Approx(0.130));
}

TEST_CASE("GOps/s helper") {
    const int64_t b1l1 = 2LL * 3 * 64 * 224 * 224 * 9;
    CHECK(gops_per_sec(b1l1, 13.999e-3) == doctest::Approx(12.39).epsilon(0.001));
    const int64_t b4l3 = 2LL * 512 * 512 * 28 * 28 * 9;
    CHECK(gops_per_sec(b4l3, 16.428e-3) == doctest::Approx(225.1).epsilon(0.001));
    CHECK(gops_per_sec(b1l1, 0.0) == 0.0);
}

TEST_CASE("single host layer network") {
    NetworkGraph g = parse_network("input 4 6 6\nlayer r\n kind relu\n from input\nend\n");
    place_layers(g);
    const StagePlan plan = build_stage_plan(g);
    CHECK(plan.stages[0].empty());
    CHECK(plan.stages[1].empty());
    CHECK(plan.stages[2].size() == 1);
    const RunReport r = simulate_stream(default_platform(), g, 1);
    CHECK(r.profile.layers.size() == 1);
    CHECK(r.profile.latency == doctest::Approx(r.profile.layers[0].duration()));
    CHECK(r.period == doctest::Approx(r.profile.latency));
}

TEST_CASE("VGG-16 stages and frame accounting") {
    const PlatformConfig cfg = default_platform();
    const NetworkGraph g = net("vgg16.net");
    const StagePlan plan = build_stage_plan(g);
    REQUIRE(plan.stages[0].size() == 1);
    CHECK(g.layers[size_t(plan.stages[0][0])].kind == LayerKind::Marshal);
    int convs = 0;
    for (int i : plan.stages[1]) convs += g.layers[size_t(i)].is_conv();
    CHECK(convs == 13);
    const FrameProfile p = simulate_frame(cfg, g);
    CHECK(p.stage_latency[0] + p.stage_latency[1] + p.stage_latency[2] == doctest::Approx(p.latency));
    CHECK(p.serial_sum >= p.latency - 1e-12);
    for (const LayerTiming& l : p.layers) {
        CHECK(l.t_end >= l.t_start);
        CHECK(l.t_end <= p.latency + 1e-12);
        if (l.placement == Placement::CSP) CHECK(l.worker == -1);
    }
    const RunReport r = simulate_stream(cfg, g, 8);
    CHECK(r.period == doctest::Approx(*std::max_element(r.stage_latency.begin(), r.stage_latency.end())));
    CHECK(r.fps == doctest::Approx(1.0 / r.period));
    CHECK(r.first_frame_latency == doctest::Approx(p.latency));
}

TEST_CASE("ResNet-18 frame schedules host work alongside the accelerator") {
    const FrameProfile p = simulate_frame(default_platform(), net("resnet18.net"));
    CHECK(p.latency < p.serial_sum);
    CHECK(p.csp_busy > 0);
    CHECK(p.gpp_busy > 0);
}

TEST_CASE("reports are deterministic") {
    const PlatformConfig cfg = default_platform();
    const NetworkGraph g = net("resnet18.net");
    auto render = [&] {
        std::ostringstream os;
        const RunReport r = simulate_stream(cfg, g, 3);
        write_json(os, r);
        write_csv(os, r.profile);
        write_gantt(os, r);
        return os.str();
    };
    const std::string a = render();
    CHECK(a == render());
    CHECK(a.find("\"report_version\"") != std::string::npos);
}

TEST_CASE("placement does not change fixed-point results") {
    std::mt19937 rng(7);
    for (int trial = 0; trial < 4; ++trial) {
        NetworkGraph g = parse_network(
            "input 5 20 19 float\n"
            "layer a\n kind conv\n from input\n out 14\n kernel 3\n pad 1\n activation relu\nend\n"
            "layer b\n kind conv\n from a\n out 6\n kernel 5\n stride 2\n pad 2\nend\n"
            "layer c\n kind conv\n from b\n out 6\n kernel 1\nend\n"
            "layer s\n kind add\n from b c\nend\n"
            "layer r\n kind relu\n from s\nend\n"
            "layer d\n kind conv\n from r\n out 8\n kernel 3\n pad 1\n activation relu\n pool max 2\nend\n"
            "layer f\n kind fc\n from d\n out 7\nend\n");
        for (const auto& l : g.layers)
            if (l.has_weights()) {
                const int n_in = l.kind == LayerKind::FullyConnected ? int(l.in_shape.elements()) : l.in_shape.c;
                g.params[l.name].real = oracle::random_float_weights(rng, l.out_channels, n_in, l.kh, l.kw, 0.3f);
            }
        quantize_graph(g);
        embed_1x1(g);
        place_layers(g);
        NetworkGraph host = g;
        force_host_placement(host);
        for (const auto& l : host.layers) CHECK(l.placement == Placement::GPP);

        const FloatMap x = oracle::random_float(rng, 5, 20, 19, 1.0f);
        const PlatformConfig cfg = default_platform();
        const InferenceResult a = run_inference(cfg, g, x);
        const InferenceResult b = run_inference(cfg, host, x);
        CHECK(to_planar(a.fixed_output) == to_planar(b.fixed_output));
        CHECK(a.argmax == b.argmax);
    }
}

TEST_CASE("trained digit classifier agrees across numeric modes") {
    std::mt19937 rng(2024);
    NetworkGraph g = parse_network(kDigitNet);
    const FloatWeights conv = oracle::random_float_weights(rng, 8, 1, 3, 3, 0.6f);

    // softmax regression on the conv features, plain batch gradient descent
    std::vector<std::vector<double>> xs;
    std::vector<int> ys;
    for (int i = 0; i < 400; ++i) {
        ys.push_back(i % 10);
        xs.push_back(features(digit(rng, i % 10), conv));
    }
    const size_t n_f = xs[0].size();
    std::vector<double> w(10 * n_f, 0.0), b(10, 0.0);
    for (int epoch = 0; epoch < 300; ++epoch) {
        std::vector<double> gw(w.size(), 0.0), gb(10, 0.0);
        for (size_t s = 0; s < xs.size(); ++s) {
            std::array<double, 10> z{};
            for (size_t o = 0; o < 10; ++o) {
                z[o] = b[o];
                for (size_t k = 0; k < n_f; ++k) z[o] += w[o * n_f + k] * xs[s][k];
            }
            const double m = *std::max_element(z.begin(), z.end());
            double sum = 0;
            for (double& v : z) sum += (v = std::exp(v - m));
            for (size_t o = 0; o < 10; ++o) {
                const double err = z[o] / sum - (int(o) == ys[s] ? 1.0 : 0.0);
                gb[o] += err;
                for (size_t k = 0; k < n_f; ++k) gw[o * n_f + k] += err * xs[s][k];
            }
        }
        const double lr = 0.5 / double(xs.size());
        for (size_t i = 0; i < w.size(); ++i) w[i] -= lr * gw[i];
        for (size_t o = 0; o < 10; ++o) b[o] -= lr * gb[o];
    }

    g.params["c1"].real = conv;
    FloatWeights head(10, int(n_f), 1, 1);
    for (size_t i = 0; i < w.size(); ++i) head.data[i] = float(w[i]);
    for (size_t o = 0; o < 10; ++o) head.bias[o] = float(b[o]);
    g.params["fc"].real = head;
    CHECK(quantize_graph(g) == 0);
    place_layers(g);

    const PlatformConfig cfg = default_platform();
    int agree = 0, correct = 0;
    for (int i = 0; i < 200; ++i) {
        const int label = i % 10;
        const FloatMap x = digit(rng, label);
        const int fixed = run_inference(cfg, g, x).argmax;
        const int real = run_inference(cfg, g, x, NumericMode::Float).argmax;
        agree += fixed == real;
        correct += real == label;
    }
    MESSAGE("float accuracy ", correct, "/200, fixed/float agreement ", agree, "/200");
    CHECK(correct >= 150);
    CHECK(agree >= 190);
}
