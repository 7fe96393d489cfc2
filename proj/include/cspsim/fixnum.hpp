// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>

namespace cspsim {

/// Q5.11 sample: 1 sign bit, 4 integer bits, 11 fractional bits.
struct Fix16 {
    static constexpr int kFracBits = 11;
    static constexpr int32_t kOne = 1 << kFracBits;
    static constexpr int32_t kMax = std::numeric_limits<int16_t>::max();
    static constexpr int32_t kMin = std::numeric_limits<int16_t>::min();

    int16_t raw = 0;

    static constexpr Fix16 from_raw(int32_t r) { return Fix16{static_cast<int16_t>(r)}; }
    static constexpr Fix16 max() { return from_raw(kMax); }
    static constexpr Fix16 min() { return from_raw(kMin); }

    friend constexpr bool operator==(Fix16, Fix16) = default;
    friend constexpr auto operator<=>(Fix16 a, Fix16 b) { return a.raw <=> b.raw; }
};

/// Product-scale accumulator (2^-22 per LSB). The overflow flag is sticky:
/// once a mac leaves the 32-bit range the value is pinned and flagged.
struct Acc {
    int32_t raw = 0;
    bool overflow = false;

    friend constexpr bool operator==(Acc, Acc) = default;
};

namespace detail {

constexpr int32_t saturate16(int64_t v) {
    if (v > Fix16::kMax) return Fix16::kMax;
    if (v < Fix16::kMin) return Fix16::kMin;
    return static_cast<int32_t>(v);
}

// Arithmetic right shift with round-half-to-even (or truncation toward
// -inf when built with CSPSIM_TRUNCATE_RENORM).
constexpr int64_t shift_round(int64_t v, int shift) {
#ifdef CSPSIM_TRUNCATE_RENORM
    return v >> shift;
#else
    const int64_t floor = v >> shift;
    const int64_t rem = v - (floor << shift);
    const int64_t half = int64_t{1} << (shift - 1);
    if (rem > half || (rem == half && (floor & 1) != 0)) return floor + 1;
    return floor;
#endif
}

}  // namespace detail

/// Round-to-nearest-even of x * 2048, saturated to int16.
inline Fix16 quantize(double x) {
    const double scaled = std::nearbyint(x * Fix16::kOne);
    if (scaled >= Fix16::kMax) return Fix16::max();
    if (scaled <= Fix16::kMin) return Fix16::min();
    return Fix16::from_raw(static_cast<int32_t>(scaled));
}

constexpr double dequantize(Fix16 v) { return static_cast<double>(v.raw) / Fix16::kOne; }

constexpr Acc mac(Acc acc, Fix16 a, Fix16 b) {
    const int64_t sum = int64_t{acc.raw} + int64_t{a.raw} * int64_t{b.raw};
    if (sum > std::numeric_limits<int32_t>::max()) return {std::numeric_limits<int32_t>::max(), true};
    if (sum < std::numeric_limits<int32_t>::min()) return {std::numeric_limits<int32_t>::min(), true};
    return {static_cast<int32_t>(sum), acc.overflow};
}

/// Adder-shifter: add the bias (or previous 16-bit partial) at product
/// scale, shift back to Q5.11 and saturate.
constexpr Fix16 renorm(Acc acc, Fix16 bias) {
    const int64_t wide = int64_t{acc.raw} + (int64_t{bias.raw} << Fix16::kFracBits);
    return Fix16::from_raw(detail::saturate16(detail::shift_round(wide, Fix16::kFracBits)));
}

constexpr Fix16 add_sat(Fix16 a, Fix16 b) {
    return Fix16::from_raw(detail::saturate16(int32_t{a.raw} + int32_t{b.raw}));
}

constexpr Fix16 relu(Fix16 v) { return v.raw < 0 ? Fix16{} : v; }

}  // namespace cspsim
