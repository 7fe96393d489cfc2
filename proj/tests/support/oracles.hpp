// SPDX-License-Identifier: Apache-2.0
//
// Reference implementations used by the tests. They are written directly
// from the numeric contract with plain integer arithmetic and do not call
// into the library's kernels.

#pragma once

#include "cspsim/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>

namespace oracle {

using cspsim::Fix16;
using cspsim::FeatureMap;
using cspsim::FloatMap;
using cspsim::FloatWeights;
using cspsim::WeightTensor;

inline int16_t sat16(int64_t v) {
    if (v > 32767) return 32767;
    if (v < -32768) return -32768;
    return static_cast<int16_t>(v);
}

// v / 2^11, ties to even, by exact integer reasoning.
inline int64_t div2048_even(int64_t v) {
    const int64_t q = v >= 0 ? v / 2048 : -((-v + 2047) / 2048);  // floor
    const int64_t r = v - q * 2048;                                  // 0..2047
    if (r > 1024) return q + 1;
    if (r < 1024) return q;
    return (q % 2 == 0) ? q : q + 1;
}

struct ConvSpec {
    int k = 3;
    int stride = 1;
    int pad_top = 0, pad_left = 0, pad_bottom = 0, pad_right = 0;
    int group = 12;  // input features per renormalisation
    bool relu = false;
    int pool = 0;    // 0, 2 or 4 (max)

    static ConvSpec uniform(int k, int stride, int pad, int group) {
        ConvSpec s;
        s.k = k;
        s.stride = stride;
        s.pad_top = s.pad_left = s.pad_bottom = s.pad_right = pad;
        s.group = group;
        return s;
    }
};

inline int out_extent(int in, int k, int stride, int before, int after) { return (in + before + after - k) / stride + 1; }

/// Naive fixed-point convolution. Returns nullopt if any group sum leaves
/// the signed 32-bit range.
inline std::optional<FeatureMap> conv_fixed(const FeatureMap& x, const WeightTensor& w, const ConvSpec& s) {
    const int oh = out_extent(x.height(), s.k, s.stride, s.pad_top, s.pad_bottom);
    const int ow = out_extent(x.width(), s.k, s.stride, s.pad_left, s.pad_right);
    FeatureMap y(w.n_out, oh, ow);
    for (int o = 0; o < w.n_out; ++o)
        for (int r = 0; r < oh; ++r)
            for (int c = 0; c < ow; ++c) {
                int64_t partial = w.bias[static_cast<size_t>(o)].raw;
                for (int g0 = 0; g0 < w.n_in; g0 += s.group) {
                    int64_t sum = 0;
                    for (int i = g0; i < std::min(g0 + s.group, w.n_in); ++i)
                        for (int u = 0; u < s.k; ++u)
                            for (int v = 0; v < s.k; ++v) {
                                const int yy = r * s.stride - s.pad_top + u;
                                const int xx = c * s.stride - s.pad_left + v;
                                if (yy < 0 || xx < 0 || yy >= x.height() || xx >= x.width()) continue;
                                sum += int64_t{x.at(i, yy, xx).raw} * w.at(o, i, u, v).raw;
                                if (sum > INT32_MAX || sum < INT32_MIN) return std::nullopt;
                            }
                    partial = sat16(div2048_even(sum + partial * 2048));
                }
                y.at(o, r, c) = Fix16::from_raw(static_cast<int32_t>(s.relu && partial < 0 ? 0 : partial));
            }
    for (int p = s.pool; p >= 2; p /= 2) {
        FeatureMap z(y.channels(), y.height() / 2, y.width() / 2);
        for (int o = 0; o < z.channels(); ++o)
            for (int r = 0; r < z.height(); ++r)
                for (int c = 0; c < z.width(); ++c)
                    z.at(o, r, c) = std::max({y.at(o, 2 * r, 2 * c), y.at(o, 2 * r, 2 * c + 1),
                                              y.at(o, 2 * r + 1, 2 * c), y.at(o, 2 * r + 1, 2 * c + 1)});
        y = z;
    }
    return y;
}

/// Naive float convolution in double precision.
inline FloatMap conv_float(const FloatMap& x, const FloatWeights& w, const ConvSpec& s) {
    const int oh = out_extent(x.height(), s.k, s.stride, s.pad_top, s.pad_bottom);
    const int ow = out_extent(x.width(), s.k, s.stride, s.pad_left, s.pad_right);
    FloatMap y(w.n_out, oh, ow);
    for (int o = 0; o < w.n_out; ++o)
        for (int r = 0; r < oh; ++r)
            for (int c = 0; c < ow; ++c) {
                double sum = w.bias[static_cast<size_t>(o)];
                for (int i = 0; i < w.n_in; ++i)
                    for (int u = 0; u < s.k; ++u)
                        for (int v = 0; v < s.k; ++v) {
                            const int yy = r * s.stride - s.pad_top + u;
                            const int xx = c * s.stride - s.pad_left + v;
                            if (yy < 0 || xx < 0 || yy >= x.height() || xx >= x.width()) continue;
                            sum += double{x.at(i, yy, xx)} * w.at(o, i, u, v);
                        }
                y.at(o, r, c) = static_cast<float>(s.relu && sum < 0 ? 0.0 : sum);
            }
    return y;
}

inline FeatureMap random_fixed(std::mt19937& rng, int c, int h, int w, int lo, int hi) {
    std::uniform_int_distribution<int> d(lo, hi);
    FeatureMap m(c, h, w);
    for (auto& v : m.data()) v = Fix16::from_raw(d(rng));
    return m;
}

inline WeightTensor random_fixed_weights(std::mt19937& rng, int o, int i, int k, int lo, int hi) {
    std::uniform_int_distribution<int> d(lo, hi);
    WeightTensor w(o, i, k, k);
    for (auto& v : w.data) v = Fix16::from_raw(d(rng));
    for (auto& v : w.bias) v = Fix16::from_raw(d(rng));
    return w;
}

inline FloatMap random_float(std::mt19937& rng, int c, int h, int w, float amp) {
    std::uniform_real_distribution<float> d(-amp, amp);
    FloatMap m(c, h, w);
    for (auto& v : m.data()) v = d(rng);
    return m;
}

inline FloatWeights random_float_weights(std::mt19937& rng, int o, int i, int kh, int kw, float amp) {
    std::uniform_real_distribution<float> d(-amp, amp);
    FloatWeights w(o, i, kh, kw);
    for (auto& v : w.data) v = d(rng);
    for (auto& v : w.bias) v = d(rng);
    return w;
}

inline int max_abs_diff(const FeatureMap& a, const FeatureMap& b) {
    if (a.channels() != b.channels() || a.height() != b.height() || a.width() != b.width())
        throw std::runtime_error("shape mismatch");
    int d = 0;
    for (int c = 0; c < a.channels(); ++c)
        for (int y = 0; y < a.height(); ++y)
            for (int x = 0; x < a.width(); ++x) d = std::max(d, std::abs(a.at(c, y, x).raw - b.at(c, y, x).raw));
    return d;
}

inline double max_abs_diff(const FloatMap& a, const FloatMap& b) {
    if (a.channels() != b.channels() || a.height() != b.height() || a.width() != b.width())
        throw std::runtime_error("shape mismatch");
    double d = 0;
    for (int c = 0; c < a.channels(); ++c)
        for (int y = 0; y < a.height(); ++y)
            for (int x = 0; x < a.width(); ++x) d = std::max(d, std::abs(double{a.at(c, y, x)} - b.at(c, y, x)));
    return d;
}

inline int64_t count_mismatches(const FeatureMap& a, const FeatureMap& b) {
    if (a.channels() != b.channels() || a.height() != b.height() || a.width() != b.width())
        return static_cast<int64_t>(a.size() + b.size());
    int64_t n = 0;
    for (int c = 0; c < a.channels(); ++c)
        for (int y = 0; y < a.height(); ++y)
            for (int x = 0; x < a.width(); ++x) n += a.at(c, y, x) != b.at(c, y, x);
    return n;
}

}  // namespace oracle
