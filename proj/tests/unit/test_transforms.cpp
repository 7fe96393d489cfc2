// SPDX-License-Identifier: Apache-2.0

#include "cspsim/driver.hpp"
#include "cspsim/transforms.hpp"

#include "oracles.hpp"

#include <Eigen/Dense>
#include <doctest.h>

#include <cmath>
#include <random>

using namespace cspsim;

namespace {

BnParams random_bn(std::mt19937& rng, int c) {
    std::uniform_real_distribution<double> d(-1.0, 1.0), pos(0.1, 2.0);
    BnParams bn;
    for (int i = 0; i < c; ++i) {
        bn.gamma.push_back(pos(rng));
        bn.beta.push_back(d(rng));
        bn.mean.push_back(d(rng));
        bn.variance.push_back(pos(rng));
    }
    return bn;
}

FloatMap apply_bn(const FloatMap& x, const BnParams& bn) {
    FloatMap y = x;
    for (int c = 0; c < x.channels(); ++c)
        for (int r = 0; r < x.height(); ++r)
            for (int k = 0; k < x.width(); ++k) {
                const auto i = static_cast<size_t>(c);
                y.at(c, r, k) = static_cast<float>((x.at(c, r, k) - bn.mean[i]) / std::sqrt(bn.variance[i] + bn.epsilon) *
                                                       bn.gamma[i] +
                                                   bn.beta[i]);
            }
    return y;
}

Eigen::MatrixXd as_matrix(const FloatWeights& w) {
    Eigen::MatrixXd m(w.n_out, w.n_in);
    for (int o = 0; o < w.n_out; ++o)
        for (int i = 0; i < w.n_in; ++i) m(o, i) = w.at(o, i, 0, 0);
    return m;
}

}  // namespace

TEST_CASE("batch-norm fold with identity statistics leaves weights unchanged") {
    std::mt19937 rng(1);
    const FloatWeights w = oracle::random_float_weights(rng, 3, 2, 3, 3, 1.0f);
    BnParams bn;
    bn.gamma.assign(3, 1.0);
    bn.beta.assign(3, 0.0);
    bn.mean.assign(3, 0.0);
    bn.variance.assign(3, 1.0);
    bn.epsilon = 0.0;
    const FloatWeights f = fold_batchnorm(w, bn);
    for (size_t i = 0; i < w.data.size(); ++i) CHECK(f.data[i] == doctest::Approx(w.data[i]));
    for (size_t i = 0; i < w.bias.size(); ++i) CHECK(f.bias[i] == doctest::Approx(w.bias[i]));
}

TEST_CASE("batch-norm fold with gamma 2 doubles weights and bias") {
    FloatWeights w(1, 1, 1, 1);
    w.data[0] = 0.75f;
    w.bias[0] = -0.25f;
    BnParams bn{{2.0}, {0.0}, {0.0}, {1.0}, 0.0};
    const FloatWeights f = fold_batchnorm(w, bn);
    CHECK(f.data[0] == doctest::Approx(1.5));
    CHECK(f.bias[0] == doctest::Approx(-0.5));
}

TEST_CASE("folded convolution equals convolution followed by batch norm") {
    std::mt19937 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const FloatMap x = oracle::random_float(rng, 3, 6, 7, 1.0f);
        const FloatWeights w = oracle::random_float_weights(rng, 4, 3, 3, 3, 0.5f);
        const BnParams bn = random_bn(rng, 4);
        const auto spec = oracle::ConvSpec::uniform(3, 1, 1, 0);
        const FloatMap expect = apply_bn(oracle::conv_float(x, w, spec), bn);
        const FloatMap got = oracle::conv_float(x, fold_batchnorm(w, bn), spec);
        CHECK(oracle::max_abs_diff(expect, got) < 1e-4);
    }
}

TEST_CASE("graph-level fold removes the batch-norm node and preserves results") {
    NetworkGraph g = parse_network(
        "input 2 5 5\n"
        "layer c\n kind conv\n from input\n out 3\n kernel 3\n pad 1\nend\n"
        "layer bn\n kind batchnorm\n from c\nend\n"
        "layer r\n kind relu\n from bn\nend\n");
    std::mt19937 rng(3);
    g.params["c"].real = oracle::random_float_weights(rng, 3, 2, 3, 3, 0.5f);
    g.params["bn"].bn = random_bn(rng, 3);
    const FloatMap x = oracle::random_float(rng, 2, 5, 5, 1.0f);
    const PlatformConfig cfg = default_platform();
    const FloatMap before = run_inference(cfg, g, x, NumericMode::Float).float_output;
    CHECK(fold_batchnorm(g) == 1);
    CHECK_FALSE(g.contains("bn"));
    const FloatMap after = run_inference(cfg, g, x, NumericMode::Float).float_output;
    CHECK(oracle::max_abs_diff(before, after) < 1e-4);
}

TEST_CASE("7x7 split places the corner taps") {
    FloatWeights w(1, 1, 7, 7);
    for (int y = 0; y < 7; ++y)
        for (int x = 0; x < 7; ++x) w.at(0, 0, y, x) = static_cast<float>(10 * y + x + 1);
    const auto parts = split_7x7(w);
    CHECK(parts[0].at(0, 0, 0, 0) == 1.0f);
    CHECK(parts[3].at(0, 0, 1, 1) == 67.0f);
    CHECK(parts[3].at(0, 0, 2, 2) == 0.0f);
    double total = 0, orig = 0;
    for (const auto& p : parts) {
        CHECK(p.kh == 5);
        for (float v : p.bias) CHECK(v == 0.0f);
        for (float v : p.data) total += v;
    }
    for (float v : w.data) orig += v;
    CHECK(total == orig);  // every tap lands in exactly one sub-kernel
}

TEST_CASE("four 5x5 sub-convolutions reproduce a 7x7 convolution") {
    std::mt19937 rng(4);
    for (int trial = 0; trial < 25; ++trial) {
        const int h = 9 + trial % 5, wd = 8 + trial % 7, stride = 1 + trial % 2;
        const FeatureMap x = oracle::random_fixed(rng, 3, h, wd, -2048, 2048);
        const WeightTensor w = oracle::random_fixed_weights(rng, 2, 3, 7, -300, 300);
        auto direct_spec = oracle::ConvSpec::uniform(7, stride, 3, 3);
        const FeatureMap direct = *oracle::conv_fixed(x, w, direct_spec);

        const auto parts = split_7x7(w);
        FeatureMap sum(direct.channels(), direct.height(), direct.width());
        std::vector<int64_t> acc(sum.size(), 0);
        for (size_t s = 0; s < 4; ++s) {
            const auto [r0, c0] = kSplitOrigins[s];
            oracle::ConvSpec sp;
            sp.k = 5;
            sp.stride = stride;
            sp.pad_top = 3 - r0;
            sp.pad_left = 3 - c0;
            sp.pad_bottom = 3 + r0 - 2;
            sp.pad_right = 3 + c0 - 2;
            sp.group = 4;
            const FeatureMap y = *oracle::conv_fixed(x, parts[s], sp);
            REQUIRE(y.height() == direct.height());
            REQUIRE(y.width() == direct.width());
            for (int o = 0; o < y.channels(); ++o)
                for (int r = 0; r < y.height(); ++r)
                    for (int c = 0; c < y.width(); ++c) acc[sum.offset(o, r, c)] += y.at(o, r, c).raw;
        }
        for (int o = 0; o < sum.channels(); ++o)
            for (int r = 0; r < sum.height(); ++r)
                for (int c = 0; c < sum.width(); ++c)
                    sum.at(o, r, c) = Fix16::from_raw(oracle::sat16(acc[sum.offset(o, r, c)] + w.bias[size_t(o)].raw));
        CHECK(oracle::max_abs_diff(sum, direct) <= 2);
    }
}

TEST_CASE("graph-level 7x7 decomposition") {
    NetworkGraph g = parse_network(
        "input 3 20 20\nlayer c\n kind conv\n from input\n out 4\n kernel 7\n stride 2\n pad 3\n activation relu\nend\n");
    const Shape before = g.layer("c").out_shape;
    CHECK(decompose_7x7(g) == 1);
    CHECK(g.layer("c").kind == LayerKind::Merge);
    CHECK(g.layer("c").out_shape == before);
    CHECK(g.layer("c").fused_relu);
    for (const char* n : {"c.s00", "c.s05", "c.s50", "c.s55"}) {
        CHECK(g.layer(n).kh == 5);
        CHECK(g.layer(n).out_shape == before);
    }
    CHECK(g.layer("c.s55").pad == Padding{-2, -2, 6, 6});
}

TEST_CASE("1x1 embedding is bit-exact") {
    std::mt19937 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const int stride = 1 + trial % 2;
        const FeatureMap x = oracle::random_fixed(rng, 6, 7, 9, -4000, 4000);
        const WeightTensor w = oracle::random_fixed_weights(rng, 5, 6, 1, -2000, 2000);
        const auto a = oracle::conv_fixed(x, w, oracle::ConvSpec::uniform(1, stride, 0, 4));
        const WeightTensor e = embed_1x1(w);
        CHECK(e.kh == 3);
        const auto b = oracle::conv_fixed(x, e, oracle::ConvSpec::uniform(3, stride, 1, 4));
        REQUIRE(a);
        REQUIRE(b);
        CHECK(*a == *b);
    }
    NetworkGraph g = parse_network("input 4 8 8\nlayer c\n kind conv\n from input\n out 2\n kernel 1\n stride 2\nend\n");
    const Shape s = g.layer("c").out_shape;
    CHECK(embed_1x1(g) == 1);
    CHECK(g.layer("c").embedded_1x1);
    CHECK(g.layer("c").out_shape == s);
}

TEST_CASE("low-rank rank formula") {
    CHECK(svd_rank(4096, 25088, 3.0) == 1173);
    CHECK(svd_rank(4096, 4096, 2.0) == 1024);
    CHECK(svd_rank(10, 10, 1.0) == 5);
    CHECK_THROWS_AS(svd_rank(0, 10, 3.0), ValidationError);
}

TEST_CASE("SVD reconstructs exactly representable matrices") {
    FloatWeights ones(4, 6, 1, 1);
    for (int o = 0; o < 4; ++o)
        for (int i = 0; i < 6; ++i) ones.at(o, i, 0, 0) = static_cast<float>((o + 1) * (i - 2));
    const auto f = svd_factorize(ones, 1);
    const Eigen::MatrixXd r1 = as_matrix(f.u) * as_matrix(f.v);
    CHECK((r1 - as_matrix(ones)).cwiseAbs().maxCoeff() < 1e-4);

    FloatWeights id(5, 5, 1, 1);
    for (int i = 0; i < 5; ++i) id.at(i, i, 0, 0) = 1.0f;
    const auto fi = svd_factorize(id, 5);
    CHECK((as_matrix(fi.u) * as_matrix(fi.v) - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("truncated SVD matches a Jacobi reference") {
    std::mt19937 rng(6);
    const FloatWeights w = oracle::random_float_weights(rng, 30, 50, 1, 1, 1.0f);
    const Eigen::MatrixXd m = as_matrix(w);
    const Eigen::JacobiSVD<Eigen::MatrixXd> ref(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const int rank = 8;
    const auto f = svd_factorize(w, rank);
    REQUIRE(f.singular_values.size() == size_t(rank));
    for (int k = 0; k < rank; ++k) CHECK(f.singular_values[size_t(k)] == doctest::Approx(ref.singularValues()(k)).epsilon(1e-4));

    const Eigen::MatrixXd best = ref.matrixU().leftCols(rank) * ref.singularValues().head(rank).asDiagonal() *
                                 ref.matrixV().leftCols(rank).transpose();
    const double err_ref = (m - best).norm();
    const double err = (m - as_matrix(f.u) * as_matrix(f.v)).norm();
    CHECK(err == doctest::Approx(err_ref).epsilon(1e-4));
    for (float b : f.v.bias) CHECK(b == 0.0f);
    for (size_t i = 0; i < w.bias.size(); ++i) CHECK(f.u.bias[i] == w.bias[i]);
}

TEST_CASE("graph-level FC compression") {
    NetworkGraph g = parse_network("input 8 2 2\nlayer f\n kind fc\n from input\n out 16\nend\n");
    CHECK(svd_compress(g, "f", 3.0) == svd_rank(16, 32, 3.0));
    CHECK(g.layer("f.v").out_shape == Shape{svd_rank(16, 32, 3.0), 1, 1});
    CHECK(g.layer("f").inputs == std::vector<std::string>{"f.v"});
    CHECK_THROWS_AS(svd_compress(g, "f", 3.0), ValidationError);
    NetworkGraph h = parse_network("input 8 2 2\nlayer f\n kind fc\n from input\n out 16\nend\n");
    CHECK(svd_compress(h, "f", 3.0, 7) == 7);
}

TEST_CASE("quantize_graph counts saturated parameters") {
    NetworkGraph g = parse_network("input 1 3 3\nlayer c\n kind conv\n from input\n out 1\n kernel 3\nend\n");
    FloatWeights w(1, 1, 3, 3);
    w.data[0] = 20.0f;
    w.data[1] = -17.0f;
    w.data[2] = 0.5f;
    w.bias[0] = 1.0f;
    g.params["c"].real = w;
    CHECK(quantize_graph(g) == 2);
    const WeightTensor& q = *g.params_of("c")->fixed;
    CHECK(q.data[0] == Fix16::max());
    CHECK(q.data[1] == Fix16::min());
    CHECK(q.data[2].raw == 1024);
    CHECK(q.bias[0].raw == 2048);
}

TEST_CASE("placement is idempotent and respects forced placement") {
    for (const char* net : {"vgg16.net", "resnet18.net"}) {
        NetworkGraph g = load_network(std::string(CSPSIM_SOURCE_DIR) + "/networks/" + net);
        fold_batchnorm(g);
        decompose_7x7(g);
        embed_1x1(g);
        place_layers(g);
        const std::string once = write_network(g);
        place_layers(g);
        CHECK(write_network(g) == once);
    }
    NetworkGraph g = parse_network(
        "input 2 8 8\n"
        "layer a\n kind conv\n from input\n out 2\n kernel 3\n pad 1\n placement gpp\nend\n"
        "layer b\n kind conv\n from a\n out 2\n kernel 3\n pad 1\nend\n");
    place_layers(g);
    CHECK(g.layer("a").placement == Placement::GPP);
    CHECK(g.layer("b").placement == Placement::CSP);
    NetworkGraph bad = parse_network(
        "input 2 16 16\nlayer a\n kind conv\n from input\n out 2\n kernel 7\n placement csp\nend\n");
    CHECK_THROWS_AS(place_layers(bad), ValidationError);
}
