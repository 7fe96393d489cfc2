// SPDX-License-Identifier: Apache-2.0

#include "cspsim/host_model.hpp"

#include "cspsim/ce_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cspsim {

namespace {

template <typename T>
void require_same_shape(std::span<const BasicFeatureMap<T>> parts, const char* what) {
    if (parts.empty()) throw ValidationError(std::string(what) + ": no operands");
    for (const auto& p : parts)
        if (p.channels() != parts[0].channels() || p.height() != parts[0].height() || p.width() != parts[0].width())
            throw ValidationError(std::string(what) + ": operand shapes differ");
}

// Integer division rounded half to even.
int64_t div_round_even(int64_t num, int64_t den) {
    int64_t q = num / den, r = num % den;
    if (r < 0) {
        q -= 1;
        r += den;
    }
    if (2 * r > den || (2 * r == den && (q & 1) != 0)) ++q;
    return q;
}

template <typename T>
BasicFeatureMap<T> pool_impl(const BasicFeatureMap<T>& x, int kh, int kw, int stride, Padding pad, PoolMode mode) {
    if (kh < 1 || kw < 1 || stride < 1) throw ValidationError("pool: invalid window or stride");
    const int oh = window_out(x.height(), kh, stride, pad.top, pad.bottom);
    const int ow = window_out(x.width(), kw, stride, pad.left, pad.right);
    if (oh < 1 || ow < 1) throw ValidationError("pool: window larger than the padded input");
    BasicFeatureMap<T> out(x.channels(), oh, ow);
    for (int c = 0; c < x.channels(); ++c)
        for (int y = 0; y < oh; ++y)
            for (int xo = 0; xo < ow; ++xo) {
                const int y0 = y * stride - pad.top, x0 = xo * stride - pad.left;
                if (mode == PoolMode::Downsample) {
                    out.at(c, y, xo) = x.get_or_zero(c, y0, x0);
                    continue;
                }
                if constexpr (std::is_same_v<T, Fix16>) {
                    int64_t sum = 0;
                    int32_t best = std::numeric_limits<int32_t>::min();
                    for (int u = 0; u < kh; ++u)
                        for (int v = 0; v < kw; ++v) {
                            const int yy = y0 + u, xx = x0 + v;
                            if (yy < 0 || xx < 0 || yy >= x.height() || xx >= x.width()) continue;
                            const int32_t r = x.at(c, yy, xx).raw;
                            sum += r;
                            best = std::max(best, r);
                        }
                    const int64_t r = mode == PoolMode::Max ? best : div_round_even(sum, int64_t{kh} * kw);
                    out.at(c, y, xo) = Fix16::from_raw(detail::saturate16(r));
                } else {
                    double sum = 0;
                    float best = -std::numeric_limits<float>::infinity();
                    for (int u = 0; u < kh; ++u)
                        for (int v = 0; v < kw; ++v) {
                            const int yy = y0 + u, xx = x0 + v;
                            if (yy < 0 || xx < 0 || yy >= x.height() || xx >= x.width()) continue;
                            sum += x.at(c, yy, xx);
                            best = std::max(best, x.at(c, yy, xx));
                        }
                    out.at(c, y, xo) = mode == PoolMode::Max ? best : static_cast<float>(sum / (kh * kw));
                }
            }
    return out;
}

FloatMap to_float(const FeatureMap& x) { return dequantize(to_planar(x)); }
FeatureMap to_fixed(const FloatMap& x) { return quantize(x); }

}  // namespace

FeatureMap conv2d(const CeConfig& cfg, const LayerDesc& conv, const WeightTensor& w, const FeatureMap& x) {
    if (w.n_in != x.channels() || w.n_out != conv.out_channels || w.kh != conv.kh || w.kw != conv.kw || !w.consistent())
        throw ValidationError("conv2d: weights do not match layer '" + conv.name + "'");
    const int oh = window_out(x.height(), conv.kh, conv.stride, conv.pad.top, conv.pad.bottom);
    const int ow = window_out(x.width(), conv.kw, conv.stride, conv.pad.left, conv.pad.right);
    if (oh < 1 || ow < 1) throw ValidationError("conv2d: empty output for '" + conv.name + "'");
    const int group = accumulation_group(cfg, conv.kh, conv.kw, conv.embedded_1x1, w.n_in);

    FeatureMap out(conv.out_channels, oh, ow);
    for (int o = 0; o < conv.out_channels; ++o)
        for (int y = 0; y < oh; ++y)
            for (int xo = 0; xo < ow; ++xo) {
                const int y0 = y * conv.stride - conv.pad.top, x0 = xo * conv.stride - conv.pad.left;
                Fix16 partial = w.bias[static_cast<size_t>(o)];
                for (int g0 = 0; g0 < w.n_in; g0 += group) {
                    Acc acc;
                    for (int i = g0; i < std::min(g0 + group, w.n_in); ++i)
                        for (int u = 0; u < conv.kh; ++u)
                            for (int v = 0; v < conv.kw; ++v)
                                acc = mac(acc, x.get_or_zero(i, y0 + u, x0 + v), w.at(o, i, u, v));
                    if (acc.overflow)
                        throw AccumulatorOverflow("conv2d: accumulator overflow in '" + conv.name + "'");
                    partial = renorm(acc, partial);
                }
                out.at(o, y, xo) = partial;
            }
    if (conv.fused_relu) out = apply_relu(out);
    if (conv.fused_pool) {
        const FusedPool& p = *conv.fused_pool;
        out = p.window == 2 || p.window == 4 ? apply_pool(out, p.mode, p.window)
                                             : pool_generic(out, p.window, p.window, p.window, {}, p.mode);
    }
    return out;
}

FloatMap conv2d(const LayerDesc& conv, const FloatWeights& w, const FloatMap& x) {
    if (w.n_in != x.channels() || w.n_out != conv.out_channels || w.kh != conv.kh || w.kw != conv.kw || !w.consistent())
        throw ValidationError("conv2d: weights do not match layer '" + conv.name + "'");
    const int oh = window_out(x.height(), conv.kh, conv.stride, conv.pad.top, conv.pad.bottom);
    const int ow = window_out(x.width(), conv.kw, conv.stride, conv.pad.left, conv.pad.right);
    if (oh < 1 || ow < 1) throw ValidationError("conv2d: empty output for '" + conv.name + "'");
    FloatMap out(conv.out_channels, oh, ow);
    for (int o = 0; o < conv.out_channels; ++o)
        for (int y = 0; y < oh; ++y)
            for (int xo = 0; xo < ow; ++xo) {
                const int y0 = y * conv.stride - conv.pad.top, x0 = xo * conv.stride - conv.pad.left;
                double acc = w.bias[static_cast<size_t>(o)];
                for (int i = 0; i < w.n_in; ++i)
                    for (int u = 0; u < conv.kh; ++u)
                        for (int v = 0; v < conv.kw; ++v)
                            acc += double{x.get_or_zero(i, y0 + u, x0 + v)} * w.at(o, i, u, v);
                out.at(o, y, xo) = static_cast<float>(acc);
            }
    if (conv.fused_relu) out = relu(out);
    if (conv.fused_pool) {
        const FusedPool& p = *conv.fused_pool;
        out = pool_generic(out, p.window, p.window, p.window, {}, p.mode);
    }
    return out;
}

std::vector<Fix16> fc_forward(std::span<const Fix16> x, const WeightTensor& w) {
    const size_t n_in = static_cast<size_t>(w.n_in) * w.kh * w.kw;
    if (x.size() != n_in || !w.consistent()) throw ValidationError("fc_forward: dimension mismatch");
    std::vector<Fix16> y(static_cast<size_t>(w.n_out));
    for (int o = 0; o < w.n_out; ++o) {
        Acc acc;
        const Fix16* row = w.data.data() + static_cast<size_t>(o) * n_in;
        for (size_t i = 0; i < n_in; ++i) acc = mac(acc, x[i], row[i]);
        if (acc.overflow) throw AccumulatorOverflow("fc_forward: accumulator overflow at output " + std::to_string(o));
        y[static_cast<size_t>(o)] = renorm(acc, w.bias[static_cast<size_t>(o)]);
    }
    return y;
}

std::vector<float> fc_forward(std::span<const float> x, const FloatWeights& w) {
    const size_t n_in = static_cast<size_t>(w.n_in) * w.kh * w.kw;
    if (x.size() != n_in || !w.consistent()) throw ValidationError("fc_forward: dimension mismatch");
    std::vector<float> y(static_cast<size_t>(w.n_out));
    for (int o = 0; o < w.n_out; ++o) {
        double acc = w.bias[static_cast<size_t>(o)];
        const float* row = w.data.data() + static_cast<size_t>(o) * n_in;
        for (size_t i = 0; i < n_in; ++i) acc += double{x[i]} * row[i];
        y[static_cast<size_t>(o)] = static_cast<float>(acc);
    }
    return y;
}

FeatureMap add_merge(std::span<const FeatureMap> parts) {
    require_same_shape(parts, "add");
    // Interlaced as soon as one operand is, like the graph's layout rule.
    Layout layout = Layout::planar();
    for (const auto& p : parts)
        if (!p.layout().is_planar()) layout = p.layout();
    FeatureMap out(parts[0].channels(), parts[0].height(), parts[0].width(), layout);
    for (int c = 0; c < out.channels(); ++c)
        for (int y = 0; y < out.height(); ++y)
            for (int x = 0; x < out.width(); ++x) out.at(c, y, x) = parts[0].at(c, y, x);
    for (size_t k = 1; k < parts.size(); ++k)
        for (int c = 0; c < out.channels(); ++c)
            for (int y = 0; y < out.height(); ++y)
                for (int x = 0; x < out.width(); ++x) out.at(c, y, x) = add_sat(out.at(c, y, x), parts[k].at(c, y, x));
    return out;
}

FloatMap add_merge(std::span<const FloatMap> parts) {
    require_same_shape(parts, "add");
    FloatMap out = parts[0];
    for (size_t k = 1; k < parts.size(); ++k)
        for (int c = 0; c < out.channels(); ++c)
            for (int y = 0; y < out.height(); ++y)
                for (int x = 0; x < out.width(); ++x) out.at(c, y, x) += parts[k].at(c, y, x);
    return out;
}

FeatureMap relu(const FeatureMap& x) { return apply_relu(x); }

FloatMap relu(const FloatMap& x) {
    FloatMap out = x;
    for (float& v : out.data()) v = std::max(v, 0.0f);
    return out;
}

FeatureMap merge4(std::span<const FeatureMap> parts, std::span<const Fix16> bias) {
    require_same_shape(parts, "merge");
    if (bias.size() != static_cast<size_t>(parts[0].channels())) throw ValidationError("merge: bias count mismatch");
    FeatureMap out(parts[0].channels(), parts[0].height(), parts[0].width());
    for (int c = 0; c < out.channels(); ++c)
        for (int y = 0; y < out.height(); ++y)
            for (int x = 0; x < out.width(); ++x) {
                int32_t sum = bias[static_cast<size_t>(c)].raw;
                for (const auto& p : parts) sum += p.at(c, y, x).raw;
                out.at(c, y, x) = Fix16::from_raw(detail::saturate16(sum));
            }
    return out;
}

FloatMap merge4(std::span<const FloatMap> parts, std::span<const float> bias) {
    require_same_shape(parts, "merge");
    if (bias.size() != static_cast<size_t>(parts[0].channels())) throw ValidationError("merge: bias count mismatch");
    FloatMap out(parts[0].channels(), parts[0].height(), parts[0].width());
    for (int c = 0; c < out.channels(); ++c)
        for (int y = 0; y < out.height(); ++y)
            for (int x = 0; x < out.width(); ++x) {
                double sum = bias[static_cast<size_t>(c)];
                for (const auto& p : parts) sum += p.at(c, y, x);
                out.at(c, y, x) = static_cast<float>(sum);
            }
    return out;
}

FloatMap lrn(const FloatMap& x, const LrnParams& p) {
    if (p.size < 1 || p.k <= 0) throw ValidationError("lrn: invalid parameters");
    FloatMap out(x.channels(), x.height(), x.width());
    const int half = p.size / 2;
    for (int c = 0; c < x.channels(); ++c)
        for (int y = 0; y < x.height(); ++y)
            for (int xx = 0; xx < x.width(); ++xx) {
                double sq = 0;
                for (int j = std::max(0, c - half); j <= std::min(x.channels() - 1, c + half); ++j)
                    sq += double{x.at(j, y, xx)} * x.at(j, y, xx);
                const double scale = std::pow(p.k + p.alpha / p.size * sq, p.beta);
                out.at(c, y, xx) = static_cast<float>(x.at(c, y, xx) / scale);
            }
    return out;
}

FeatureMap lrn(const FeatureMap& x, const LrnParams& p) { return to_fixed(lrn(to_float(x), p)); }

FeatureMap pool_generic(const FeatureMap& x, int kh, int kw, int stride, Padding pad, PoolMode mode) {
    return pool_impl(x, kh, kw, stride, pad, mode);
}

FloatMap pool_generic(const FloatMap& x, int kh, int kw, int stride, Padding pad, PoolMode mode) {
    return pool_impl(x, kh, kw, stride, pad, mode);
}

FloatMap batchnorm(const FloatMap& x, const BnParams& bn) {
    if (bn.channels() != static_cast<size_t>(x.channels()) || bn.beta.size() != bn.channels() ||
        bn.mean.size() != bn.channels() || bn.variance.size() != bn.channels())
        throw ValidationError("batchnorm: parameter count mismatch");
    FloatMap out(x.channels(), x.height(), x.width());
    for (int c = 0; c < x.channels(); ++c) {
        const size_t k = static_cast<size_t>(c);
        const double scale = bn.gamma[k] / std::sqrt(bn.variance[k] + bn.epsilon);
        for (int y = 0; y < x.height(); ++y)
            for (int xx = 0; xx < x.width(); ++xx)
                out.at(c, y, xx) = static_cast<float>((x.at(c, y, xx) - bn.mean[k]) * scale + bn.beta[k]);
    }
    return out;
}

FeatureMap batchnorm(const FeatureMap& x, const BnParams& bn) { return to_fixed(batchnorm(to_float(x), bn)); }

std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> out(logits.size());
    if (logits.empty()) return out;
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0;
    for (size_t i = 0; i < logits.size(); ++i) sum += out[i] = std::exp(logits[i] - m);
    for (double& v : out) v /= sum;
    return out;
}

FeatureMap marshal(const FeatureMap& fm, MarshalDirection dir) {
    return dir == MarshalDirection::ToCSP ? interlace(fm) : deinterlace(fm);
}

double marshal_time(const RooflineParams& p, int64_t elements, int element_bytes, MarshalDirection dir) {
    const double bytes = static_cast<double>(elements) * element_bytes;
    return p.marshal_setup_sec + bytes / p.marshal_rate(dir == MarshalDirection::ToCSP);
}

HostCost host_cost(const RooflineParams& p, const LayerDesc& l, int source_bytes) {
    const int act = p.activation_bytes;
    const int src = source_bytes > 0 ? source_bytes : act;
    const int64_t in = l.in_shape.elements(), out = l.out_shape.elements();
    const int64_t fan_in = static_cast<int64_t>(l.inputs.size());
    HostCost c;
    bool stream = true;
    switch (l.kind) {
        case LayerKind::Marshal:
            c.ops = 0;
            c.bytes = in * src + out * act;
            c.seconds = marshal_time(p, in, src, l.marshal_direction);
            return c;
        case LayerKind::FullyConnected:
            c.ops = 2 * in * out;
            c.bytes = (in * out + out) * act + (in + out) * act;
            stream = false;
            break;
        case LayerKind::Conv:
            c.ops = conv_ops(l);
            c.bytes = (int64_t{l.out_channels} * l.in_shape.c * l.kh * l.kw + l.out_channels) * act + (in + out) * act;
            stream = false;
            break;
        case LayerKind::MaxPool:
        case LayerKind::AvgPool:
            c.ops = out * l.kh * l.kw;
            c.bytes = (in + out) * act;
            break;
        case LayerKind::Add:
        case LayerKind::Merge:
            c.ops = out * (fan_in - 1 + (l.kind == LayerKind::Merge ? 1 : 0) + (l.fused_relu ? 1 : 0));
            c.bytes = (fan_in + 1) * out * act;
            break;
        case LayerKind::ReLU:
        case LayerKind::Identity:
            c.ops = out;
            c.bytes = (in + out) * act;
            break;
        case LayerKind::LRN:
            c.ops = out * (2 * int64_t{l.lrn.size} + 4);
            c.bytes = (in + out) * act;
            break;
        case LayerKind::BatchNorm:
            c.ops = 2 * out;
            c.bytes = (in + out) * act;
            break;
        case LayerKind::Softmax:
            c.ops = 3 * out;
            c.bytes = (in + out) * 4;
            break;
    }
    if (c.bytes == 0) return c;
    c.density = static_cast<double>(c.ops) / static_cast<double>(c.bytes);
    if (l.kind == LayerKind::FullyConnected) c.density = std::min(c.density, p.fc_effective_density);
    const double rate = std::min(p.peak_ops_per_sec, c.density * p.mem_bytes_per_sec);
    // Element-wise kernels are bound by whichever roof they hit first and
    // then derated; zero-op kernels are pure streaming.
    const double roof = std::max(static_cast<double>(c.ops) / p.peak_ops_per_sec,
                                 static_cast<double>(c.bytes) / p.mem_bytes_per_sec);
    c.seconds = stream ? roof / p.stream_kernel_efficiency : (c.ops > 0 ? static_cast<double>(c.ops) / rate : 0.0);
    return c;
}

double host_time(const PlatformConfig& cfg, const NetworkGraph& g, const LayerDesc& l) {
    const bool float_source =
        l.kind == LayerKind::Marshal && g.input_is_float && !l.inputs.empty() && l.inputs.front() == kInputName;
    return host_cost(cfg.host, l, float_source ? 4 : 0).seconds;
}

}  // namespace cspsim
