// SPDX-License-Identifier: Apache-2.0

#include "cspsim/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace cspsim {

namespace {

void rewire(NetworkGraph& g, const std::string& from, const std::string& to) {
    for (auto& l : g.layers)
        for (auto& in : l.inputs)
            if (in == from) in = to;
}

void erase_layer(NetworkGraph& g, const std::string& name) {
    std::erase_if(g.layers, [&](const LayerDesc& l) { return l.name == name; });
    g.params.erase(name);
}

template <typename T>
std::array<BasicWeights<T>, 4> split_impl(const BasicWeights<T>& w) {
    if (w.kh != 7 || w.kw != 7) throw ValidationError("split_7x7 expects a 7x7 kernel");
    std::array<BasicWeights<T>, 4> out;
    for (size_t s = 0; s < 4; ++s) {
        const auto [r0, c0] = kSplitOrigins[s];
        BasicWeights<T> sub(w.n_out, w.n_in, 5, 5);
        for (int o = 0; o < w.n_out; ++o)
            for (int i = 0; i < w.n_in; ++i)
                for (int y = 0; y < 5 && r0 + y < 7; ++y)
                    for (int x = 0; x < 5 && c0 + x < 7; ++x) sub.at(o, i, y, x) = w.at(o, i, r0 + y, c0 + x);
        out[s] = std::move(sub);
    }
    return out;
}

template <typename T>
BasicWeights<T> embed_impl(const BasicWeights<T>& w) {
    if (w.kh != 1 || w.kw != 1) throw ValidationError("embed_1x1 expects a 1x1 kernel");
    BasicWeights<T> out(w.n_out, w.n_in, 3, 3);
    for (int o = 0; o < w.n_out; ++o)
        for (int i = 0; i < w.n_in; ++i) out.at(o, i, 1, 1) = w.at(o, i, 0, 0);
    out.bias = w.bias;
    return out;
}

bool is_pointwise(LayerKind k) { return k == LayerKind::Add || k == LayerKind::ReLU || k == LayerKind::Identity; }

std::string marshal_name(const std::string& producer, MarshalDirection d) {
    return "marshal_" + producer + (d == MarshalDirection::ToCSP ? "_to_csp" : "_from_csp");
}

}  // namespace

FloatWeights fold_batchnorm(const FloatWeights& w, const BnParams& bn) {
    if (bn.channels() != static_cast<size_t>(w.n_out) || bn.beta.size() != bn.channels() ||
        bn.mean.size() != bn.channels() || bn.variance.size() != bn.channels())
        throw ValidationError("fold_batchnorm: channel count mismatch");
    FloatWeights out = w;
    const size_t per_out = static_cast<size_t>(w.n_in) * w.kh * w.kw;
    for (int o = 0; o < w.n_out; ++o) {
        const double denom = bn.variance[o] + bn.epsilon;
        if (!(denom > 0)) throw ValidationError("fold_batchnorm: variance + epsilon must be positive");
        const double scale = bn.gamma[o] / std::sqrt(denom);
        for (size_t k = 0; k < per_out; ++k) {
            float& v = out.data[o * per_out + k];
            v = static_cast<float>(v * scale);
        }
        out.bias[o] = static_cast<float>((double{w.bias[o]} - bn.mean[o]) * scale + bn.beta[o]);
    }
    return out;
}

int fold_batchnorm(NetworkGraph& g) {
    int folded = 0;
    for (bool again = true; again;) {
        again = false;
        for (const auto& bn_layer : g.layers) {
            if (bn_layer.kind != LayerKind::BatchNorm || bn_layer.inputs.size() != 1) continue;
            const std::string src = bn_layer.inputs[0];
            if (src == kInputName) continue;
            LayerDesc& conv = g.layer(src);
            if (!conv.is_conv() || conv.fused_relu || conv.fused_pool || g.consumers(src).size() != 1) continue;

            LayerParams* bp = g.params_of(bn_layer.name);
            LayerParams* cp = g.params_of(src);
            if ((bp == nullptr) != (cp == nullptr))
                throw ValidationError("fold_batchnorm: '" + bn_layer.name + "' and '" + src +
                                      "' must both have parameters or neither");
            if (bp) {
                if (!bp->bn) throw ValidationError("fold_batchnorm: '" + bn_layer.name + "' lacks statistics");
                const bool had_fixed = cp->fixed.has_value();
                FloatWeights real = cp->real ? *cp->real : dequantize(*cp->fixed);
                cp->real = fold_batchnorm(real, *bp->bn);
                if (had_fixed) cp->fixed = quantize(*cp->real);
            }
            conv.has_bias = true;
            conv.history.push_back("foldbn:" + bn_layer.name);
            if (conv.block.empty()) conv.block = bn_layer.block;
            const std::string bn_name = bn_layer.name;
            rewire(g, bn_name, src);
            erase_layer(g, bn_name);
            ++folded;
            again = true;
            break;
        }
    }
    if (folded) g.finalize();
    return folded;
}

std::array<FloatWeights, 4> split_7x7(const FloatWeights& w) { return split_impl(w); }
std::array<WeightTensor, 4> split_7x7(const WeightTensor& w) { return split_impl(w); }

int decompose_7x7(NetworkGraph& g) {
    std::vector<std::string> targets;
    for (const auto& l : g.layers)
        if (l.is_conv() && l.kh == 7 && l.kw == 7) targets.push_back(l.name);

    for (const auto& name : targets) {
        const LayerDesc conv = g.layer(name);
        if (conv.fused_pool) throw ValidationError("decompose_7x7: '" + name + "' has a fused pool");
        std::optional<LayerParams> params;
        if (const LayerParams* p = g.params_of(name)) params = *p;

        std::vector<LayerDesc> subs;
        for (size_t s = 0; s < 4; ++s) {
            const auto [r0, c0] = kSplitOrigins[s];
            LayerDesc sub;
            sub.name = name + ".s" + std::to_string(r0) + std::to_string(c0);
            sub.kind = LayerKind::Conv;
            sub.inputs = conv.inputs;
            sub.kh = sub.kw = 5;
            sub.stride = conv.stride;
            sub.pad = {conv.pad.top - r0, conv.pad.left - c0, conv.pad.bottom + r0 - 2, conv.pad.right + c0 - 2};
            sub.out_channels = conv.out_channels;
            sub.has_bias = false;
            sub.block = conv.block;
            sub.forced_placement = conv.forced_placement;
            sub.history = conv.history;
            sub.history.push_back("split7x7:" + name);
            subs.push_back(sub);
        }

        LayerDesc merge;
        merge.name = name;
        merge.kind = LayerKind::Merge;
        for (const auto& s : subs) merge.inputs.push_back(s.name);
        merge.out_channels = conv.out_channels;
        merge.has_bias = conv.has_bias;
        merge.fused_relu = conv.fused_relu;
        merge.block = conv.block;
        merge.history = conv.history;
        merge.history.push_back("split7x7");

        const auto pos = std::find_if(g.layers.begin(), g.layers.end(), [&](const LayerDesc& l) { return l.name == name; });
        *pos = merge;
        g.layers.insert(pos, subs.begin(), subs.end());
        g.params.erase(name);

        if (params) {
            std::optional<std::array<FloatWeights, 4>> real;
            std::optional<std::array<WeightTensor, 4>> fixed;
            if (params->real) real = split_7x7(*params->real);
            if (params->fixed) fixed = split_7x7(*params->fixed);
            for (size_t s = 0; s < 4; ++s) {
                LayerParams sp;
                if (real) sp.real = (*real)[s];
                if (fixed) sp.fixed = (*fixed)[s];
                g.params[subs[s].name] = std::move(sp);
            }
            LayerParams mp;
            if (params->real) mp.merge_bias_real = params->real->bias;
            if (params->fixed) mp.merge_bias_fixed = params->fixed->bias;
            g.params[name] = std::move(mp);
        }
    }
    if (!targets.empty()) g.finalize();
    return static_cast<int>(targets.size());
}

FloatWeights embed_1x1(const FloatWeights& w) { return embed_impl(w); }
WeightTensor embed_1x1(const WeightTensor& w) { return embed_impl(w); }

int embed_1x1(NetworkGraph& g) {
    int n = 0;
    for (auto& l : g.layers) {
        if (!l.is_conv() || l.kh != 1 || l.kw != 1) continue;
        l.kh = l.kw = 3;
        l.pad = {l.pad.top + 1, l.pad.left + 1, l.pad.bottom + 1, l.pad.right + 1};
        l.embedded_1x1 = true;
        l.history.push_back("embed1x1");
        if (LayerParams* p = g.params_of(l.name)) {
            if (p->real) p->real = embed_1x1(*p->real);
            if (p->fixed) p->fixed = embed_1x1(*p->fixed);
        }
        ++n;
    }
    if (n) g.finalize();
    return n;
}

int svd_rank(int n_out, int n_in, double factor) {
    if (n_out < 1 || n_in < 1 || !(factor > 0)) throw ValidationError("svd_rank: bad arguments");
    return static_cast<int>(std::floor(double(n_in) * n_out / (factor * (double(n_in) + n_out))));
}

int svd_compress(NetworkGraph& g, const std::string& name, double factor, std::optional<int> rank) {
    LayerDesc fc = g.layer(name);
    if (fc.kind != LayerKind::FullyConnected) throw ValidationError("svd_compress: '" + name + "' is not fully connected");
    if (fc.has_history("svd")) throw ValidationError("svd_compress: '" + name + "' is already compressed");
    const int n_in = static_cast<int>(fc.in_shape.elements());
    const int r = rank ? *rank : svd_rank(fc.out_channels, n_in, factor);
    if (r < 1) throw ValidationError("svd_compress: rank must be at least 1");

    LayerDesc v;
    v.name = name + ".v";
    v.kind = LayerKind::FullyConnected;
    v.inputs = fc.inputs;
    v.out_channels = r;
    v.has_bias = false;
    v.block = fc.block;
    v.forced_placement = fc.forced_placement;
    v.history = fc.history;
    v.history.push_back("svd:" + std::to_string(r));

    LayerDesc u = fc;
    u.inputs = {v.name};
    u.declared_in_channels = 0;
    u.history.push_back("svd:" + std::to_string(r));

    if (LayerParams* p = g.params_of(name)) {
        const bool had_fixed = p->fixed.has_value();
        const FloatWeights w = p->real ? *p->real : dequantize(*p->fixed);
        LowRankFactors f = svd_factorize(w, r);
        LayerParams vp, up;
        vp.real = std::move(f.v);
        up.real = std::move(f.u);
        if (had_fixed) {
            vp.fixed = quantize(*vp.real);
            up.fixed = quantize(*up.real);
        }
        g.params[v.name] = std::move(vp);
        g.params[name] = std::move(up);
    }
    const auto pos = std::find_if(g.layers.begin(), g.layers.end(), [&](const LayerDesc& l) { return l.name == name; });
    *pos = u;
    g.layers.insert(pos, v);
    g.finalize();
    return r;
}

size_t quantize_graph(NetworkGraph& g) {
    size_t saturated = 0;
    auto q = [&](float x) {
        if (!std::isfinite(x)) throw ValidationError("quantize_graph: non-finite parameter");
        const double scaled = std::nearbyint(double{x} * Fix16::kOne);
        if (scaled > Fix16::kMax || scaled < Fix16::kMin) ++saturated;
        return quantize(x);
    };
    for (auto& [name, p] : g.params) {
        if (p.real) {
            WeightTensor w(p.real->n_out, p.real->n_in, p.real->kh, p.real->kw);
            std::transform(p.real->data.begin(), p.real->data.end(), w.data.begin(), q);
            std::transform(p.real->bias.begin(), p.real->bias.end(), w.bias.begin(), q);
            p.fixed = std::move(w);
        }
        if (!p.merge_bias_real.empty()) {
            p.merge_bias_fixed.resize(p.merge_bias_real.size());
            std::transform(p.merge_bias_real.begin(), p.merge_bias_real.end(), p.merge_bias_fixed.begin(), q);
        }
    }
    return saturated;
}

bool csp_supports(const LayerDesc& l) {
    if (!l.is_conv() || l.kh != l.kw) return false;
    if (l.kh != 1 && l.kh != 3 && l.kh != 5) return false;
    return l.stride == 1 || l.stride == 2 || l.stride == 4;
}

void place_layers(NetworkGraph& g) {
    // Start from a marshal-free graph.
    std::vector<std::string> marshals;
    for (const auto& l : g.layers)
        if (l.kind == LayerKind::Marshal) marshals.push_back(l.name);
    for (const auto& m : marshals) {
        rewire(g, m, g.layer(m).inputs.at(0));
        erase_layer(g, m);
    }

    for (auto& l : g.layers) {
        if (l.is_conv()) l.placement = l.forced_placement.value_or(csp_supports(l) ? Placement::CSP : Placement::GPP);
        else l.placement = Placement::GPP;
        if (l.placement == Placement::CSP && !csp_supports(l))
            throw ValidationError("layer '" + l.name + "' is forced onto the accelerator but is not supported there");
    }

    auto sole_consumer = [&](const std::string& name) -> LayerDesc* {
        const auto c = g.consumers(name);
        if (c.size() != 1) return nullptr;
        LayerDesc& l = g.layers[static_cast<size_t>(c[0])];
        return l.inputs.size() == 1 ? &l : nullptr;
    };
    auto absorb = [&](LayerDesc& into, std::string victim) {
        into.history.push_back("fused:" + victim);
        rewire(g, victim, into.name);
        erase_layer(g, victim);
    };
    auto try_relu = [&](const std::string& name) {
        LayerDesc& l = g.layer(name);
        if (l.fused_relu) return;
        LayerDesc* c = sole_consumer(name);
        if (!c || c->kind != LayerKind::ReLU || c->forced_placement == Placement::CSP) return;
        l.fused_relu = true;
        absorb(l, c->name);
    };
    auto try_pool = [&](const std::string& name) {
        LayerDesc& l = g.layer(name);
        if (l.fused_pool) return;
        LayerDesc* c = sole_consumer(name);
        if (!c || (c->kind != LayerKind::MaxPool && c->kind != LayerKind::AvgPool)) return;
        if (c->kh != c->kw || (c->kh != 2 && c->kh != 4) || c->stride != c->kh || c->pad != Padding{}) return;
        if (c->kind == LayerKind::AvgPool && !l.fused_relu && sole_consumer(c->name) &&
            sole_consumer(c->name)->kind == LayerKind::ReLU)
            return;  // relu(avg(x)) cannot be reordered into avg(relu(x))
        l.fused_pool = FusedPool{c->kind == LayerKind::MaxPool ? PoolMode::Max : PoolMode::Avg, c->kh};
        absorb(l, c->name);
    };

    std::vector<std::string> names;
    for (const auto& l : g.layers) names.push_back(l.name);
    for (const auto& name : names) {
        if (!g.contains(name)) continue;
        const LayerDesc& l = g.layer(name);
        if (l.is_conv() && l.placement == Placement::CSP) {
            try_relu(name);
            try_pool(name);
            if (g.layer(name).fused_pool && g.layer(name).fused_pool->mode == PoolMode::Max) try_relu(name);
        } else if (l.kind == LayerKind::Merge || l.kind == LayerKind::Add) {
            try_relu(name);
        }
    }
    g.finalize();

    // Layout propagation: accelerator outputs are interlaced.
    std::map<std::string, bool> interlaced{{std::string(kInputName), false}};
    std::map<std::string, std::vector<LayerDesc>> pending;  // producer -> marshals to emit after it
    std::set<std::string> created;
    auto need = [&](const std::string& producer, bool want_interlaced) {
        if (interlaced.at(producer) == want_interlaced) return producer;
        const MarshalDirection d = want_interlaced ? MarshalDirection::ToCSP : MarshalDirection::FromCSP;
        const std::string m = marshal_name(producer, d);
        if (created.insert(m).second) {
            LayerDesc ml;
            ml.name = m;
            ml.kind = LayerKind::Marshal;
            ml.inputs = {producer};
            ml.marshal_direction = d;
            ml.placement = Placement::GPP;
            pending[producer].push_back(ml);
            interlaced[m] = want_interlaced;
        }
        return m;
    };
    for (auto& l : g.layers) {
        bool want;
        if (l.is_conv() && l.placement == Placement::CSP) want = true;
        else if (is_pointwise(l.kind))
            want = std::any_of(l.inputs.begin(), l.inputs.end(), [&](const std::string& s) { return interlaced.at(s); });
        else want = false;
        for (auto& in : l.inputs) in = need(in, want);
        interlaced[l.name] = want;
    }
    for (int e : g.exits()) {
        const std::string& name = g.layers[static_cast<size_t>(e)].name;
        if (interlaced.at(name)) need(name, false);
    }

    std::vector<LayerDesc> ordered;
    for (auto& m : pending[std::string(kInputName)]) ordered.push_back(m);
    for (auto& l : g.layers) {
        ordered.push_back(l);
        for (auto& m : pending[l.name]) ordered.push_back(m);
    }
    g.layers = std::move(ordered);
    g.finalize();
}

}  // namespace cspsim
