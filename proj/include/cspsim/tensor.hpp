// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "cspsim/errors.hpp"
#include "cspsim/fixnum.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace cspsim {

/// Channel grouping used by the accelerator's interlaced activation layout.
inline constexpr int kInterlaceGroup = 4;

struct Layout {
    enum class Kind { Planar, Interlaced };
    Kind kind = Kind::Planar;
    int group = 1;

    static constexpr Layout planar() { return {Kind::Planar, 1}; }
    static constexpr Layout interlaced(int g = kInterlaceGroup) { return {Kind::Interlaced, g}; }
    bool is_planar() const { return kind == Kind::Planar; }
    friend bool operator==(const Layout&, const Layout&) = default;
};

inline int round_up(int v, int m) { return (v + m - 1) / m * m; }
inline int ceil_div(int a, int b) { return (a + b - 1) / b; }
inline int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

/// 3D activation tensor (channels x height x width).
///
/// Planar storage is channel-major, row-major. Interlaced(g) storage keeps
/// channel groups of g adjacent per pixel:
///   offset(c,y,x) = ((c / g) * H * W + y * W + x) * g + c % g
/// and zero-pads the stored channel count up to a multiple of g. `channels`
/// always holds the logical channel count.
template <typename T>
class BasicFeatureMap {
public:
    BasicFeatureMap() = default;
    BasicFeatureMap(int channels, int height, int width, Layout layout = Layout::planar())
        : channels_(channels), height_(height), width_(width), layout_(layout) {
        if (channels < 0 || height < 0 || width < 0) throw ValidationError("negative feature map extent");
        if (!layout.is_planar() && layout.group < 1) throw ValidationError("interlace group must be >= 1");
        data_.assign(static_cast<size_t>(stored_channels()) * height * width, T{});
    }

    int channels() const { return channels_; }
    int height() const { return height_; }
    int width() const { return width_; }
    const Layout& layout() const { return layout_; }
    size_t plane_size() const { return static_cast<size_t>(height_) * width_; }
    int stored_channels() const { return layout_.is_planar() ? channels_ : round_up(channels_, layout_.group); }

    size_t offset(int c, int y, int x) const {
        if (layout_.is_planar()) return (static_cast<size_t>(c) * height_ + y) * width_ + x;
        const size_t g = layout_.group;
        return ((c / g) * plane_size() + static_cast<size_t>(y) * width_ + x) * g + c % g;
    }

    T& at(int c, int y, int x) { return data_[offset(c, y, x)]; }
    const T& at(int c, int y, int x) const { return data_[offset(c, y, x)]; }

    /// Zero outside the spatial extent; used for virtual zero padding.
    T get_or_zero(int c, int y, int x) const {
        if (y < 0 || x < 0 || y >= height_ || x >= width_) return T{};
        return at(c, y, x);
    }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    size_t size() const { return data_.size(); }

    friend bool operator==(const BasicFeatureMap&, const BasicFeatureMap&) = default;

private:
    int channels_ = 0;
    int height_ = 0;
    int width_ = 0;
    Layout layout_{};
    std::vector<T> data_;
};

using FeatureMap = BasicFeatureMap<Fix16>;
using FloatMap = BasicFeatureMap<float>;

/// Kernel tensor [n_out][n_in][kh][kw] plus per-output bias.
template <typename T>
struct BasicWeights {
    int n_out = 0;
    int n_in = 0;
    int kh = 0;
    int kw = 0;
    std::vector<T> data;
    std::vector<T> bias;

    BasicWeights() = default;
    BasicWeights(int o, int i, int h, int w)
        : n_out(o), n_in(i), kh(h), kw(w),
          data(static_cast<size_t>(o) * i * h * w, T{}), bias(static_cast<size_t>(o), T{}) {}

    size_t index(int o, int i, int y, int x) const {
        return ((static_cast<size_t>(o) * n_in + i) * kh + y) * kw + x;
    }
    T& at(int o, int i, int y, int x) { return data[index(o, i, y, x)]; }
    const T& at(int o, int i, int y, int x) const { return data[index(o, i, y, x)]; }
    bool consistent() const {
        return data.size() == static_cast<size_t>(n_out) * n_in * kh * kw && bias.size() == static_cast<size_t>(n_out);
    }

    friend bool operator==(const BasicWeights&, const BasicWeights&) = default;
};

using WeightTensor = BasicWeights<Fix16>;
using FloatWeights = BasicWeights<float>;

FeatureMap interlace(const FeatureMap& fm, int group = kInterlaceGroup);
FeatureMap deinterlace(const FeatureMap& fm);
FloatMap to_planar(const FloatMap& fm);

template <typename T>
BasicFeatureMap<T> zero_pad(const BasicFeatureMap<T>& fm, int pad);

/// Same data, planar layout (copy if already planar).
FeatureMap to_planar(const FeatureMap& fm);

FeatureMap quantize(const FloatMap& fm);
FloatMap dequantize(const FeatureMap& fm);
WeightTensor quantize(const FloatWeights& w);
FloatWeights dequantize(const WeightTensor& w);

// ---------------------------------------------------------------------------
// Stripe partitioning for images wider than the line buffers.
// ---------------------------------------------------------------------------

inline constexpr int kMaxStripeWidth = 256;

struct Range {
    int begin = 0;
    int end = 0;
    int size() const { return end - begin; }
    friend bool operator==(const Range&, const Range&) = default;
};

struct Stripe {
    Range channels;
    Range rows;      // input rows loaded (clamped to the image)
    Range cols;      // input columns loaded (clamped to the image)
    Range out_cols;  // output columns this stripe produces
    int halo = 0;
};

struct StripePlan {
    std::vector<Stripe> stripes;
    int max_stripe_width = kMaxStripeWidth;
};

/// Input rows/cols a range of outputs depends on: [o.begin*s - pad, (o.end-1)*s - pad + k).
Range input_span(Range out, int kernel, int stride, int pad_before);

/// Split an h x w convolution input into column stripes no wider than
/// `max_width` input pixels. Stripes overlap by the kernel halo so that each
/// output column is produced by exactly one stripe. `align` forces stripe
/// output widths to a multiple (for fused pooling).
StripePlan partition_stripes(int h, int w, int kernel, int stride, int pad = -1, int channels = 0,
                             int max_width = kMaxStripeWidth, int align = 1);

/// Column stripes for explicit geometry (`out_w` outputs, left padding
/// `pad_before`, which may be negative). Only `cols`, `out_cols` and `halo`
/// are filled in.
std::vector<Stripe> stripe_columns(int in_w, int out_w, int kernel, int stride, int pad_before,
                                   int max_width = kMaxStripeWidth, int align = 1);

// ---------------------------------------------------------------------------
// Binary debug dump: "NGTF", u32 version, u32 dims[4], int16 LE payload.
// dims are (channels, height, width, group) with group 0 for planar.
// ---------------------------------------------------------------------------

inline constexpr uint32_t kTensorFileVersion = 1;

std::vector<uint8_t> encode_tensor(const FeatureMap& fm);
FeatureMap decode_tensor(std::span<const uint8_t> bytes);
void save_tensor(const std::filesystem::path& path, const FeatureMap& fm);
FeatureMap load_tensor(const std::filesystem::path& path);

}  // namespace cspsim
