// SPDX-License-Identifier: Apache-2.0

#include "cspsim/ce_model.hpp"

#include <algorithm>

namespace cspsim {

namespace {

bool supported_kernel(int k) { return k == 1 || k == 3 || k == 5; }
bool supported_stride(int s) { return s == 1 || s == 2 || s == 4; }

FeatureMap slice(const FeatureMap& fm, Range ch, Range cols) {
    FeatureMap out(ch.size(), fm.height(), cols.size());
    for (int c = 0; c < ch.size(); ++c)
        for (int y = 0; y < fm.height(); ++y)
            for (int x = 0; x < cols.size(); ++x) out.at(c, y, x) = fm.at(ch.begin + c, y, cols.begin + x);
    return out;
}

WeightTensor slice(const WeightTensor& w, Range outs, Range ins) {
    WeightTensor out(outs.size(), ins.size(), w.kh, w.kw);
    for (int o = 0; o < outs.size(); ++o) {
        for (int i = 0; i < ins.size(); ++i)
            for (int y = 0; y < w.kh; ++y)
                for (int x = 0; x < w.kw; ++x) out.at(o, i, y, x) = w.at(outs.begin + o, ins.begin + i, y, x);
        out.bias[o] = w.bias[outs.begin + o];
    }
    return out;
}

FeatureMap pool2(const FeatureMap& t, PoolMode mode) {
    FeatureMap out(t.channels(), t.height() / 2, t.width() / 2, t.layout());
    for (int c = 0; c < t.channels(); ++c)
        for (int y = 0; y < out.height(); ++y)
            for (int x = 0; x < out.width(); ++x) {
                const Fix16 a = t.at(c, 2 * y, 2 * x), b = t.at(c, 2 * y, 2 * x + 1);
                const Fix16 d = t.at(c, 2 * y + 1, 2 * x), e = t.at(c, 2 * y + 1, 2 * x + 1);
                Fix16 r;
                switch (mode) {
                    case PoolMode::Max: r = std::max({a, b, d, e}); break;
                    case PoolMode::Avg: {
                        const int64_t sum = int64_t{a.raw} + b.raw + d.raw + e.raw;
                        r = Fix16::from_raw(static_cast<int32_t>(detail::shift_round(sum, 2)));
                        break;
                    }
                    case PoolMode::Downsample: r = a; break;
                }
                out.at(c, y, x) = r;
            }
    return out;
}

}  // namespace

LineBufferMode line_buffer_mode(int kernel) { return kernel == 5 ? LineBufferMode::Single5x5 : LineBufferMode::Tri3x3; }

int streams_per_pass(const CeConfig& cfg, int kernel, bool embedded_1x1) {
    if (kernel == 3 && !embedded_1x1) return cfg.streams_3x3();
    return cfg.streams_5x5();
}

int accumulation_group(const CeConfig& cfg, int kh, int kw, bool embedded_1x1, int n_in) {
    if (kh == kw && supported_kernel(kh)) return streams_per_pass(cfg, kh, embedded_1x1);
    return std::max(n_in, 1);
}

void validate(const CeConfig& cfg, const ConvJob& job) {
    if (job.kh != job.kw || !supported_kernel(job.kh))
        throw ValidationError("CE: unsupported kernel " + std::to_string(job.kh) + "x" + std::to_string(job.kw));
    if (!supported_stride(job.stride)) throw ValidationError("CE: unsupported stride " + std::to_string(job.stride));
    if (job.tile_w > cfg.lb_max_width)
        throw ValidationError("CE: tile width " + std::to_string(job.tile_w) + " exceeds the line buffers; stripe it");
    if (job.in_features < 1 || job.in_features > streams_per_pass(cfg, job.kh, job.embedded_1x1))
        throw ValidationError("CE: too many input features for one pass");
    if (job.out_features < 1 || job.out_features > cfg.outputs_per_pass())
        throw ValidationError("CE: too many output features for one pass");
    if (job.pool && job.pool->window != 2 && job.pool->window != 4)
        throw ValidationError("CE: pooling window must be 2 or 4");
    if (job.tile_h < 1 || job.tile_w < 1 || job.out_h() < 1 || job.out_w() < 1)
        throw ValidationError("CE: empty tile");
}

FeatureMap run_conv_pass(const CeConfig& cfg, const ConvJob& job, const FeatureMap& x, const WeightTensor& w,
                         std::span<const Fix16> bias, const FeatureMap* y_prev) {
    validate(cfg, job);
    if (x.channels() != job.in_features || x.height() != job.tile_h || x.width() != job.tile_w)
        throw ValidationError("CE: input tile does not match the job");
    if (w.n_out != job.out_features || w.n_in != job.in_features || w.kh != job.kh || w.kw != job.kw)
        throw ValidationError("CE: weights do not match the job");
    const int oh = job.out_h(), ow = job.out_w();
    if (job.accumulate_partial) {
        if (!y_prev || y_prev->channels() != job.out_features || y_prev->height() != oh || y_prev->width() != ow)
            throw ValidationError("CE: partial input does not match the job");
    } else if (bias.size() != static_cast<size_t>(job.out_features)) {
        throw ValidationError("CE: bias count does not match the job");
    }

    FeatureMap out(job.out_features, oh, ow);
    for (int o = 0; o < job.out_features; ++o)
        for (int y = 0; y < oh; ++y)
            for (int xo = 0; xo < ow; ++xo) {
                Acc acc;
                const int y0 = y * job.stride - job.pad.top, x0 = xo * job.stride - job.pad.left;
                for (int i = 0; i < job.in_features; ++i)
                    for (int u = 0; u < job.kh; ++u)
                        for (int v = 0; v < job.kw; ++v)
                            acc = mac(acc, x.get_or_zero(i, y0 + u, x0 + v), w.at(o, i, u, v));
                if (acc.overflow) throw AccumulatorOverflow("CE: accumulator overflow in a convolution pass");
                const Fix16 seed = job.accumulate_partial ? y_prev->at(o, y, xo) : bias[static_cast<size_t>(o)];
                out.at(o, y, xo) = renorm(acc, seed);
            }
    if (job.relu) out = apply_relu(out);
    if (job.pool) out = apply_pool(out, job.pool->mode, job.pool->window);
    return out;
}

FeatureMap apply_relu(const FeatureMap& tile) {
    FeatureMap out = tile;
    for (Fix16& v : out.data()) v = relu(v);
    return out;
}

FeatureMap apply_pool(const FeatureMap& tile, PoolMode mode, int window) {
    if (window == 2) return pool2(tile, mode);
    if (window == 4) return pool2(pool2(tile, mode), mode);
    throw ValidationError("CE: pooling window must be 2 or 4");
}

int64_t pass_cycles(const CeConfig& cfg, const ConvJob& job) {
    const int preload = std::max(job.kh, 3) - 1;
    return cfg.pass_overhead_cycles +
           int64_t{preload + job.tile_h} * ceil_div(job.tile_w, cfg.pixels_per_cycle);
}

std::vector<PassDesc> layer_passes(const CeConfig& cfg, const LayerDesc& conv) {
    const int n_o = conv.out_channels, n_i = conv.in_shape.c;
    const int streams = streams_per_pass(cfg, conv.kh, conv.embedded_1x1);
    const int per = cfg.outputs_per_pass();
    std::vector<PassDesc> out;
    for (int o = 0; o < n_o; o += per)
        for (int i = 0; i < n_i; i += streams)
            out.push_back({{o, std::min(o + per, n_o)}, {i, std::min(i + streams, n_i)}, i == 0, i + streams >= n_i});
    return out;
}

int64_t conv_ops(const LayerDesc& conv) {
    const int oh = window_out(conv.in_shape.h, conv.kh, conv.stride, conv.pad.top, conv.pad.bottom);
    const int ow = window_out(conv.in_shape.w, conv.kw, conv.stride, conv.pad.left, conv.pad.right);
    const int64_t taps = conv.embedded_1x1 ? 1 : int64_t{conv.kh} * conv.kw;
    return 2 * int64_t{conv.in_shape.c} * conv.out_channels * oh * ow * taps;
}

int64_t layer_ce_cycles(const CeConfig& cfg, const LayerDesc& conv, int tile_h, int tile_w) {
    ConvJob job;
    job.kh = conv.kh;
    job.kw = conv.kw;
    job.tile_h = tile_h > 0 ? tile_h : conv.in_shape.h;
    job.tile_w = tile_w > 0 ? tile_w : conv.in_shape.w;
    return static_cast<int64_t>(layer_passes(cfg, conv).size()) * pass_cycles(cfg, job);
}

FeatureMap run_layer(const CeConfig& cfg, const LayerDesc& conv, const WeightTensor& w, const FeatureMap& input) {
    if (!conv.is_conv()) throw ValidationError("run_layer expects a convolution");
    if (w.n_out != conv.out_channels || w.n_in != input.channels() || w.kh != conv.kh || w.kw != conv.kw)
        throw ValidationError("run_layer: weights do not match layer '" + conv.name + "'");
    const int h = input.height(), wd = input.width();
    const int oh = window_out(h, conv.kh, conv.stride, conv.pad.top, conv.pad.bottom);
    const int ow = window_out(wd, conv.kw, conv.stride, conv.pad.left, conv.pad.right);
    const int win = conv.fused_pool ? conv.fused_pool->window : 1;
    if (oh < 1 || ow < 1 || oh / win < 1 || ow / win < 1) throw ValidationError("run_layer: empty output");

    FeatureMap out(conv.out_channels, oh / win, ow / win, Layout::interlaced());
    const auto stripes = stripe_columns(wd, ow, conv.kw, conv.stride, conv.pad.left, cfg.lb_max_width, win);
    const int streams = streams_per_pass(cfg, conv.kh, conv.embedded_1x1);
    const int per = cfg.outputs_per_pass();

    for (const Stripe& s : stripes) {
        const int n_out = s.out_cols.size();
        ConvJob base;
        base.kh = conv.kh;
        base.kw = conv.kw;
        base.stride = conv.stride;
        base.tile_h = h;
        base.tile_w = s.cols.size();
        base.pad.top = conv.pad.top;
        base.pad.bottom = conv.pad.bottom;
        base.pad.left = conv.pad.left + s.cols.begin - s.out_cols.begin * conv.stride;
        base.pad.right = (n_out - 1) * conv.stride + conv.kw - base.tile_w - base.pad.left;
        base.embedded_1x1 = conv.embedded_1x1;

        std::vector<FeatureMap> groups;
        for (int i = 0; i < input.channels(); i += streams)
            groups.push_back(slice(input, {i, std::min(i + streams, input.channels())}, s.cols));

        for (int o = 0; o < conv.out_channels; o += per) {
            const Range outs{o, std::min(o + per, conv.out_channels)};
            FeatureMap partial;
            for (size_t g = 0; g < groups.size(); ++g) {
                const Range ins{static_cast<int>(g) * streams, static_cast<int>(g) * streams + groups[g].channels()};
                ConvJob job = base;
                job.in_features = ins.size();
                job.out_features = outs.size();
                job.accumulate_partial = g > 0;
                const bool last = g + 1 == groups.size();
                job.relu = last && conv.fused_relu;
                if (last) job.pool = conv.fused_pool;
                const WeightTensor ws = slice(w, outs, ins);
                partial = run_conv_pass(cfg, job, groups[g], ws, ws.bias, g > 0 ? &partial : nullptr);
            }
            const int col0 = s.out_cols.begin / win;
            for (int c = 0; c < partial.channels(); ++c)
                for (int y = 0; y < partial.height(); ++y)
                    for (int x = 0; x < partial.width(); ++x) out.at(outs.begin + c, y, col0 + x) = partial.at(c, y, x);
        }
    }
    return out;
}

}  // namespace cspsim
