// SPDX-License-Identifier: Apache-2.0

#include "cspsim/fixnum.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace cspsim;

TEST_CASE("quantize and dequantize") {
    CHECK(quantize(1.0).raw == 2048);
    CHECK(quantize(-1.0).raw == -2048);
    CHECK(quantize(0.5 / 2048).raw == 0);      // tie to even (0)
    CHECK(quantize(1.5 / 2048).raw == 2);      // tie to even (2)
    CHECK(quantize(100.0) == Fix16::max());
    CHECK(quantize(-100.0) == Fix16::min());
    CHECK(quantize(-16.0) == Fix16::min());
    CHECK(dequantize(Fix16::from_raw(3072)) == doctest::Approx(1.5));
    for (int r = -32768; r <= 32767; r += 97) CHECK(quantize(dequantize(Fix16::from_raw(r))).raw == r);
}

TEST_CASE("mac accumulates at product scale") {
    Acc a;
    a = mac(a, quantize(1.5), quantize(2.0));
    CHECK(a.raw == 3 * (1 << 22));
    CHECK_FALSE(a.overflow);
    CHECK(renorm(a, Fix16{}).raw == 3 * 2048);
}

TEST_CASE("mac overflow is sticky and never wraps") {
    Acc a;
    for (int i = 0; i < 3; ++i) a = mac(a, Fix16::min(), Fix16::min());  // 3 * 2^30
    CHECK(a.overflow);
    CHECK(a.raw == std::numeric_limits<int32_t>::max());
    a = mac(a, Fix16::from_raw(-1), Fix16::from_raw(1));
    CHECK(a.overflow);
}

TEST_CASE("renorm rounds half to even and saturates") {
#ifndef CSPSIM_TRUNCATE_RENORM
    CHECK(renorm(Acc{1024, false}, Fix16{}).raw == 0);
    CHECK(renorm(Acc{3 * 1024, false}, Fix16{}).raw == 2);
    CHECK(renorm(Acc{-1024, false}, Fix16{}).raw == 0);
    CHECK(renorm(Acc{-3 * 1024, false}, Fix16{}).raw == -2);
    CHECK(renorm(Acc{1025, false}, Fix16{}).raw == 1);
#endif
    CHECK(renorm(Acc{std::numeric_limits<int32_t>::max(), false}, Fix16::max()) == Fix16::max());
    CHECK(renorm(Acc{std::numeric_limits<int32_t>::min(), false}, Fix16::min()) == Fix16::min());
    CHECK(renorm(Acc{0, false}, quantize(3.25)) == quantize(3.25));
}

TEST_CASE("renorm matches the integer oracle on random inputs") {
    std::mt19937 rng(11);
    std::uniform_int_distribution<int32_t> acc(std::numeric_limits<int32_t>::min(), std::numeric_limits<int32_t>::max());
    std::uniform_int_distribution<int> bias(-32768, 32767);
    for (int i = 0; i < 20000; ++i) {
        const int32_t a = acc(rng);
        const int b = bias(rng);
        const int64_t expect = oracle::sat16(oracle::div2048_even(int64_t{a} + int64_t{b} * 2048));
#ifndef CSPSIM_TRUNCATE_RENORM
        REQUIRE(renorm(Acc{a, false}, Fix16::from_raw(b)).raw == expect);
#else
        (void)expect;
#endif
    }
}

TEST_CASE("add_sat and relu") {
    CHECK(add_sat(Fix16::max(), quantize(1.0)) == Fix16::max());
    CHECK(add_sat(Fix16::min(), quantize(-1.0)) == Fix16::min());
    CHECK(add_sat(quantize(1.0), quantize(2.0)) == quantize(3.0));
    CHECK(relu(quantize(-0.5)).raw == 0);
    CHECK(relu(quantize(0.5)) == quantize(0.5));
}

TEST_CASE("single product renorm equals rounded real product") {
    for (int ra = -32768; ra <= 32767; ra += 257)
        for (int rb = -32768; rb <= 32767; rb += 263) {
            const Fix16 a = Fix16::from_raw(ra), b = Fix16::from_raw(rb);
            const double exact = std::nearbyint(double(ra) * double(rb) / 2048.0);
            const int expect = static_cast<int>(std::clamp(exact, -32768.0, 32767.0));
#ifndef CSPSIM_TRUNCATE_RENORM
            REQUIRE(renorm(mac(Acc{}, a, b), Fix16{}).raw == expect);
#else
            (void)expect;
#endif
        }
}

TEST_CASE("quantisation error is at most half an LSB") {
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> d(-15.99, 15.99);
    for (int i = 0; i < 10000; ++i) {
        const double x = d(rng);
        REQUIRE(std::abs(dequantize(quantize(x)) - x) <= std::ldexp(1.0, -12));
    }
}

TEST_CASE("boundary values") {
    CHECK(quantize(20.0).raw == 32767);
    CHECK(dequantize(Fix16::from_raw(1)) == 0.00048828125);
    CHECK(mac(Acc{}, quantize(1.0), quantize(1.0)).raw == 4194304);
    CHECK(mac(Acc{4194304, false}, quantize(-1.0), quantize(1.0)).raw == 0);
    CHECK(renorm(Acc{4194304, false}, Fix16{}).raw == 2048);
    CHECK(add_sat(Fix16::max(), Fix16::max()) == Fix16::max());
    CHECK(add_sat(quantize(2.5), quantize(-2.5)).raw == 0);
}
