// SPDX-License-Identifier: Apache-2.0

#include "cspsim/graph.hpp"
#include "cspsim/transforms.hpp"
#include "cspsim/weights_io.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>

using namespace cspsim;

namespace {

const std::string kSmall = R"(
# two convs and a classifier
network small
input 3 16 16 float

layer c1
  kind conv
  from input
  out 8
  kernel 3
  pad 1
  activation relu
  pool max 2
end

layer c2
  kind conv
  from c1
  out 4
  kernel 5
  stride 2
  pad 1,2,1,2
end

layer f
  kind fc
  from c2
  out 10
end
)";

NetworkGraph load(const char* file) { return load_network(std::string(CSPSIM_SOURCE_DIR) + "/networks/" + file); }

int count(const NetworkGraph& g, LayerKind k) {
    return static_cast<int>(std::count_if(g.layers.begin(), g.layers.end(), [&](const LayerDesc& l) { return l.kind == k; }));
}

}  // namespace

TEST_CASE("parse a small network and infer shapes") {
    NetworkGraph g = parse_network(kSmall);
    CHECK(g.name == "small");
    CHECK(g.input_shape == Shape{3, 16, 16});
    REQUIRE(g.layers.size() == 3);
    const LayerDesc& c1 = g.layer("c1");
    CHECK(c1.fused_relu);
    REQUIRE(c1.fused_pool);
    CHECK(c1.fused_pool->window == 2);
    CHECK(c1.out_shape == Shape{8, 8, 8});
    const LayerDesc& c2 = g.layer("c2");
    CHECK(c2.pad == Padding{1, 2, 1, 2});
    // (8 + 1 + 1 - 5) / 2 + 1 = 3 rows, (8 + 2 + 2 - 5) / 2 + 1 = 4 columns
    CHECK(c2.out_shape == Shape{4, 3, 4});
    CHECK(g.layer("f").out_shape == Shape{10, 1, 1});
    CHECK(g.exits() == std::vector<int>{2});
    CHECK(g.consumers("c1") == std::vector<int>{1});
}

TEST_CASE("write and re-parse is stable") {
    NetworkGraph g = parse_network(kSmall);
    const std::string text = write_network(g);
    NetworkGraph h = parse_network(text);
    CHECK(write_network(h) == text);
    CHECK(h.layer("c2").out_shape == g.layer("c2").out_shape);
}

TEST_CASE("parser and finalize reject malformed descriptions") {
    CHECK_THROWS_AS(parse_network("network x\nlayer a\n kind conv\nend\n"), ValidationError);
    CHECK_THROWS_AS(parse_network("input 1 4 4\nlayer a\n kind bogus\n from input\nend\n"), ValidationError);
    CHECK_THROWS_AS(parse_network("input 1 4 4\nlayer a\n kind relu\n from input\n"), ValidationError);
    CHECK_THROWS_AS(parse_network("input 1 4 4\nlayer a\n kind relu\n from nowhere\nend\n"), ValidationError);
    CHECK_THROWS_AS(parse_network("input 1 4 4\nlayer a\n kind relu\n from input\n colour red\nend\n"), ValidationError);
    CHECK_THROWS_AS(parse_network("input 1 4 4\nlayer a\n kind conv\n from input\n out 2\n kernel 7\nend\n"),
                    ValidationError);
    CHECK_THROWS_AS(parse_network("input 1 4 4\nlayer a\n kind relu\n from b\nend\nlayer b\n kind relu\n from a\nend\n"),
                    ValidationError);
    CHECK_THROWS_AS(parse_network("input 1 4 4\nlayer a\n kind relu\n from input\nend\nlayer a\n kind relu\n from a\nend\n"),
                    ValidationError);
    CHECK_THROWS_AS(load_network("/nonexistent/x.net"), FormatError);
}

TEST_CASE("layers are sorted topologically") {
    NetworkGraph g = parse_network(
        "input 2 4 4\n"
        "layer s\n kind add\n from a b\nend\n"
        "layer a\n kind relu\n from input\nend\n"
        "layer b\n kind identity\n from input\nend\n");
    CHECK(g.index_of("s") > g.index_of("a"));
    CHECK(g.index_of("s") > g.index_of("b"));
    CHECK(g.layer("s").out_shape == Shape{2, 4, 4});
}

TEST_CASE("VGG-16 structure and placement") {
    NetworkGraph g = load("vgg16.net");
    CHECK(count(g, LayerKind::Conv) == 13);
    CHECK(count(g, LayerKind::MaxPool) == 5);
    CHECK(count(g, LayerKind::FullyConnected) == 3);
    CHECK(g.layer("conv1_1").out_shape == Shape{64, 224, 224});
    CHECK(g.layer("pool5").out_shape == Shape{512, 7, 7});
    CHECK(g.layer("fc6").in_shape == Shape{512, 7, 7});

    place_layers(g);
    CHECK(count(g, LayerKind::MaxPool) == 0);  // fused into the preceding convolutions
    CHECK(count(g, LayerKind::Marshal) == 2);
    for (const auto& l : g.layers)
        if (l.is_conv()) {
            CHECK(l.placement == Placement::CSP);
            CHECK(l.fused_relu);
        }
    CHECK(g.layer("conv5_3").fused_pool.has_value());
    CHECK(g.layer("conv5_3").out_shape == Shape{512, 7, 7});
    CHECK(g.layer("fc6").placement == Placement::GPP);
    CHECK(g.contains("marshal_input_to_csp"));
    CHECK(g.contains("marshal_conv5_3_from_csp"));
}

TEST_CASE("ResNet-18 placement keeps residual adds on the host without marshalling") {
    NetworkGraph g = load("resnet18.net");
    CHECK(g.layer("pool1").out_shape == Shape{64, 56, 56});
    CHECK(g.layer("fc").in_shape == Shape{512, 1, 1});
    fold_batchnorm(g);
    decompose_7x7(g);
    embed_1x1(g);
    place_layers(g);
    CHECK(count(g, LayerKind::BatchNorm) == 0);
    const LayerDesc& pool = g.layer("pool1");
    CHECK(pool.kind == LayerKind::MaxPool);
    CHECK(pool.placement == Placement::GPP);
    for (const auto& l : g.layers)
        if (l.kind == LayerKind::Add) CHECK(l.placement == Placement::GPP);
    // input, four 5x5 outputs, the pooled stem and the tail; none exists for an Add alone
    CHECK(count(g, LayerKind::Marshal) == 7);
    for (const auto& l : g.layers) {
        if (l.kind != LayerKind::Marshal) continue;
        bool non_add = false;
        for (int c : g.consumers(l.name)) non_add |= g.layers[static_cast<size_t>(c)].kind != LayerKind::Add;
        CHECK_MESSAGE(non_add, l.name);
    }
    for (const auto& l : g.layers)
        if (l.is_conv()) CHECK(l.placement == Placement::CSP);
}

TEST_CASE("weights round trip in both encodings") {
    NetworkGraph g = parse_network(kSmall);
    std::mt19937 rng(4);
    for (const char* n : {"c1", "c2", "f"}) {
        const LayerDesc& l = g.layer(n);
        const int n_in = l.kind == LayerKind::FullyConnected ? static_cast<int>(l.in_shape.elements()) : l.in_shape.c;
        g.params[n].real = oracle::random_float_weights(rng, l.out_channels, n_in, l.kh, l.kw, 0.5f);
    }
    quantize_graph(g);

    const auto fixed = save_weights(g);
    NetworkGraph h = parse_network(kSmall);
    load_weights(fixed, h);
    for (const char* n : {"c1", "c2", "f"}) CHECK(*h.params_of(n)->fixed == *g.params_of(n)->fixed);

    const auto real = save_weights(g, WeightDtype::Float);
    NetworkGraph r = parse_network(kSmall);
    load_weights(real, r);
    for (const char* n : {"c1", "c2", "f"}) CHECK(*r.params_of(n)->real == *g.params_of(n)->real);

    auto truncated = fixed;
    truncated.resize(truncated.size() - 3);
    NetworkGraph t = parse_network(kSmall);
    CHECK_THROWS_AS(load_weights(truncated, t), FormatError);

    auto extra = fixed;
    extra.push_back(0);
    CHECK_THROWS_AS(load_weights(extra, t), FormatError);

    auto bad = fixed;
    bad[1] = 'X';
    CHECK_THROWS_AS(load_weights(bad, t), FormatError);

    NetworkGraph other = parse_network(
        "input 3 16 16\nlayer c1\n kind conv\n from input\n out 9\n kernel 3\n pad 1\nend\n");
    CHECK_THROWS_AS(load_weights(fixed, other), FormatError);
}

TEST_CASE("zero weight blob covers every parameterised layer") {
    NetworkGraph g = load("vgg16.net");
    const auto blob = zero_weights_blob(g);
    load_weights(blob, g);
    for (const auto& l : g.layers)
        if (l.has_weights()) {
            REQUIRE(g.params_of(l.name));
            CHECK(g.params_of(l.name)->fixed->consistent());
        }
}
