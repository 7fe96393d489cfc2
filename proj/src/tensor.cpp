// SPDX-License-Identifier: Apache-2.0

#include "cspsim/tensor.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <iterator>

namespace cspsim {

namespace {

template <typename T>
BasicFeatureMap<T> relayout(const BasicFeatureMap<T>& fm, Layout target) {
    BasicFeatureMap<T> out(fm.channels(), fm.height(), fm.width(), target);
    for (int c = 0; c < fm.channels(); ++c)
        for (int y = 0; y < fm.height(); ++y)
            for (int x = 0; x < fm.width(); ++x) out.at(c, y, x) = fm.at(c, y, x);
    return out;
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

uint32_t get_u32(std::span<const uint8_t> in, size_t pos) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(in[pos + i]) << (8 * i);
    return v;
}

}  // namespace

FeatureMap interlace(const FeatureMap& fm, int group) {
    if (!fm.layout().is_planar()) throw ValidationError("interlace expects a planar feature map");
    if (group < 1) throw ValidationError("interlace group must be >= 1");
    return relayout(fm, Layout::interlaced(group));
}

FeatureMap deinterlace(const FeatureMap& fm) {
    if (fm.layout().is_planar()) throw ValidationError("deinterlace expects an interlaced feature map");
    return relayout(fm, Layout::planar());
}

FeatureMap to_planar(const FeatureMap& fm) { return fm.layout().is_planar() ? fm : relayout(fm, Layout::planar()); }
FloatMap to_planar(const FloatMap& fm) { return fm.layout().is_planar() ? fm : relayout(fm, Layout::planar()); }

template <typename T>
BasicFeatureMap<T> zero_pad(const BasicFeatureMap<T>& fm, int pad) {
    if (pad < 0) throw ValidationError("padding must be non-negative");
    BasicFeatureMap<T> out(fm.channels(), fm.height() + 2 * pad, fm.width() + 2 * pad, fm.layout());
    for (int c = 0; c < fm.channels(); ++c)
        for (int y = 0; y < fm.height(); ++y)
            for (int x = 0; x < fm.width(); ++x) out.at(c, y + pad, x + pad) = fm.at(c, y, x);
    return out;
}

template FeatureMap zero_pad(const FeatureMap&, int);
template FloatMap zero_pad(const FloatMap&, int);

FeatureMap quantize(const FloatMap& fm) {
    FeatureMap out(fm.channels(), fm.height(), fm.width(), fm.layout());
    std::transform(fm.data().begin(), fm.data().end(), out.data().begin(), [](float v) { return quantize(v); });
    return out;
}

FloatMap dequantize(const FeatureMap& fm) {
    FloatMap out(fm.channels(), fm.height(), fm.width(), fm.layout());
    std::transform(fm.data().begin(), fm.data().end(), out.data().begin(),
                   [](Fix16 v) { return static_cast<float>(dequantize(v)); });
    return out;
}

WeightTensor quantize(const FloatWeights& w) {
    WeightTensor out(w.n_out, w.n_in, w.kh, w.kw);
    std::transform(w.data.begin(), w.data.end(), out.data.begin(), [](float v) { return quantize(v); });
    std::transform(w.bias.begin(), w.bias.end(), out.bias.begin(), [](float v) { return quantize(v); });
    return out;
}

FloatWeights dequantize(const WeightTensor& w) {
    FloatWeights out(w.n_out, w.n_in, w.kh, w.kw);
    auto conv = [](Fix16 v) { return static_cast<float>(dequantize(v)); };
    std::transform(w.data.begin(), w.data.end(), out.data.begin(), conv);
    std::transform(w.bias.begin(), w.bias.end(), out.bias.begin(), conv);
    return out;
}

Range input_span(Range out, int kernel, int stride, int pad_before) {
    if (out.size() <= 0) return {0, 0};
    return {out.begin * stride - pad_before, (out.end - 1) * stride - pad_before + kernel};
}

std::vector<Stripe> stripe_columns(int in_w, int out_w, int kernel, int stride, int pad_before, int max_width,
                                   int align) {
    if (in_w <= 0 || out_w <= 0) throw ValidationError("stripe_columns: empty extent");
    if (kernel < 1 || stride < 1) throw ValidationError("stripe_columns: bad kernel/stride");
    align = std::max(align, 1);
    auto loaded = [&](Range out) {
        const Range in = input_span(out, kernel, stride, pad_before);
        return Range{std::clamp(in.begin, 0, in_w), std::clamp(in.end, 0, in_w)};
    };
    if (loaded({0, std::min(align, out_w)}).size() > max_width)
        throw UnschedulableError("stripe_columns: a single aligned output group exceeds the stripe width");

    std::vector<Stripe> out;
    int o = 0;
    while (o < out_w) {
        int n = out_w - o;
        while (n > 0 && loaded({o, o + n}).size() > max_width) --n;
        if (o + n < out_w) n = std::max(align, n / align * align);
        Stripe s;
        s.cols = loaded({o, o + n});
        s.out_cols = {o, o + n};
        s.halo = kernel / 2;
        out.push_back(s);
        o += n;
    }
    return out;
}

StripePlan partition_stripes(int h, int w, int kernel, int stride, int pad, int channels, int max_width,
                             int align) {
    if (h <= 0 || w <= 0) throw ValidationError("partition_stripes: empty image");
    if (kernel < 1 || stride < 1) throw ValidationError("partition_stripes: bad kernel/stride");
    if (pad < 0) pad = kernel / 2;
    const int out_w = (w + 2 * pad - kernel) / stride + 1;
    if (out_w <= 0) throw ValidationError("partition_stripes: kernel larger than padded image");

    StripePlan plan;
    plan.max_stripe_width = max_width;
    plan.stripes = stripe_columns(w, out_w, kernel, stride, pad, max_width, align);
    for (auto& s : plan.stripes) {
        s.channels = {0, channels};
        s.rows = {0, h};
    }
    return plan;
}

std::vector<uint8_t> encode_tensor(const FeatureMap& fm) {
    std::vector<uint8_t> out;
    out.reserve(24 + fm.size() * 2);
    for (char ch : std::string_view("NGTF")) out.push_back(static_cast<uint8_t>(ch));
    put_u32(out, kTensorFileVersion);
    put_u32(out, static_cast<uint32_t>(fm.channels()));
    put_u32(out, static_cast<uint32_t>(fm.height()));
    put_u32(out, static_cast<uint32_t>(fm.width()));
    put_u32(out, fm.layout().is_planar() ? 0u : static_cast<uint32_t>(fm.layout().group));
    for (Fix16 v : fm.data()) {
        const auto u = static_cast<uint16_t>(v.raw);
        out.push_back(static_cast<uint8_t>(u & 0xff));
        out.push_back(static_cast<uint8_t>(u >> 8));
    }
    return out;
}

FeatureMap decode_tensor(std::span<const uint8_t> bytes) {
    if (bytes.size() < 24) throw FormatError("tensor file: truncated header");
    if (std::memcmp(bytes.data(), "NGTF", 4) != 0) throw FormatError("tensor file: bad magic");
    if (get_u32(bytes, 4) != kTensorFileVersion) throw FormatError("tensor file: unsupported version");
    const uint32_t c = get_u32(bytes, 8), h = get_u32(bytes, 12), w = get_u32(bytes, 16), g = get_u32(bytes, 20);
    if (c > (1u << 24) || h > (1u << 16) || w > (1u << 16) || g > 64)
        throw FormatError("tensor file: implausible dimensions");
    FeatureMap fm(static_cast<int>(c), static_cast<int>(h), static_cast<int>(w),
                  g == 0 ? Layout::planar() : Layout::interlaced(static_cast<int>(g)));
    if (bytes.size() != 24 + fm.size() * 2) throw FormatError("tensor file: payload size mismatch");
    auto data = fm.data();
    for (size_t i = 0; i < data.size(); ++i) {
        const uint16_t u = static_cast<uint16_t>(bytes[24 + 2 * i] | (bytes[25 + 2 * i] << 8));
        data[i] = Fix16{static_cast<int16_t>(u)};
    }
    return fm;
}

void save_tensor(const std::filesystem::path& path, const FeatureMap& fm) {
    const auto bytes = encode_tensor(fm);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

FeatureMap load_tensor(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open " + path.string());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_tensor(bytes);
}

}  // namespace cspsim
