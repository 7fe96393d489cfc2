// SPDX-License-Identifier: Apache-2.0

#include "cspsim/weights_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace cspsim {

namespace {

class Writer {
public:
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void i16(int16_t v) {
        const auto u = static_cast<uint16_t>(v);
        bytes.push_back(static_cast<uint8_t>(u & 0xff));
        bytes.push_back(static_cast<uint8_t>(u >> 8));
    }
    void f32(float v) { u32(std::bit_cast<uint32_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        bytes.insert(bytes.end(), s.begin(), s.end());
    }
    std::vector<uint8_t> bytes;
};

class Reader {
public:
    explicit Reader(std::span<const uint8_t> b) : b_(b) {}
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    int16_t i16() {
        need(2);
        const auto u = static_cast<uint16_t>(b_[pos_] | (b_[pos_ + 1] << 8));
        pos_ += 2;
        return static_cast<int16_t>(u);
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str() {
        const uint32_t n = u32();
        if (n > 4096) throw FormatError("weights: implausible name length");
        need(n);
        std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == b_.size(); }
    void need(size_t n) const {
        if (pos_ + n > b_.size()) throw FormatError("weights: size mismatch (blob truncated)");
    }

private:
    std::span<const uint8_t> b_;
    size_t pos_ = 0;
};

std::array<uint32_t, 4> expected_dims(const LayerDesc& l) {
    switch (l.kind) {
        case LayerKind::Conv:
            return {static_cast<uint32_t>(l.out_channels), static_cast<uint32_t>(l.in_shape.c),
                    static_cast<uint32_t>(l.kh), static_cast<uint32_t>(l.kw)};
        case LayerKind::FullyConnected:
            return {static_cast<uint32_t>(l.out_channels), static_cast<uint32_t>(l.in_shape.elements()), 1, 1};
        case LayerKind::BatchNorm: return {static_cast<uint32_t>(l.in_shape.c), 4, 1, 1};
        case LayerKind::Merge: return {static_cast<uint32_t>(l.in_shape.c), 1, 1, 1};
        default: return {0, 0, 0, 0};
    }
}

bool is_parameterised(const LayerDesc& l) {
    return l.has_weights() || l.kind == LayerKind::BatchNorm || l.kind == LayerKind::Merge;
}

template <typename T, typename Put>
void put_all(const std::vector<T>& v, Put put) {
    for (const T& x : v) put(x);
}

}  // namespace

std::vector<uint8_t> save_weights(const NetworkGraph& g, WeightDtype dtype) {
    Writer w;
    for (char ch : std::string_view("NGWB")) w.bytes.push_back(static_cast<uint8_t>(ch));
    w.u32(kWeightFileVersion);
    std::vector<const LayerDesc*> layers;
    for (const auto& l : g.layers)
        if (is_parameterised(l) && g.params_of(l.name)) layers.push_back(&l);
    w.u32(static_cast<uint32_t>(layers.size()));

    for (const LayerDesc* l : layers) {
        const LayerParams& p = *g.params_of(l->name);
        // Batch-norm statistics are real-valued by nature.
        const bool as_float = l->kind == LayerKind::BatchNorm || dtype == WeightDtype::Float ||
                              (l->kind == LayerKind::Merge ? p.merge_bias_fixed.empty() : !p.fixed);
        w.str(l->name);
        w.u32(static_cast<uint32_t>(as_float ? WeightDtype::Float : WeightDtype::Fixed));
        for (uint32_t d : expected_dims(*l)) w.u32(d);
        auto pf = [&](float v) { w.f32(v); };
        auto pq = [&](Fix16 v) { w.i16(v.raw); };
        if (l->has_weights()) {
            if (as_float) {
                if (!p.real) throw ValidationError("layer '" + l->name + "' has no real-valued weights to save");
                put_all(p.real->data, pf);
                put_all(p.real->bias, pf);
            } else {
                put_all(p.fixed->data, pq);
                put_all(p.fixed->bias, pq);
            }
        } else if (l->kind == LayerKind::BatchNorm) {
            if (!p.bn) throw ValidationError("layer '" + l->name + "' has no batch-norm statistics");
            for (const auto* arr : {&p.bn->gamma, &p.bn->beta, &p.bn->mean, &p.bn->variance})
                for (double v : *arr) w.f32(static_cast<float>(v));
        } else {
            if (as_float) put_all(p.merge_bias_real, pf);
            else put_all(p.merge_bias_fixed, pq);
        }
    }
    return std::move(w.bytes);
}

void load_weights(std::span<const uint8_t> blob, NetworkGraph& g) {
    Reader r(blob);
    r.need(4);
    if (std::memcmp(blob.data(), "NGWB", 4) != 0) throw FormatError("weights: bad magic");
    r.u32();
    if (r.u32() != kWeightFileVersion) throw FormatError("weights: unsupported version");
    const uint32_t count = r.u32();

    std::map<std::string, LayerParams> loaded;
    for (uint32_t rec = 0; rec < count; ++rec) {
        const std::string name = r.str();
        const uint32_t dtype_raw = r.u32();
        if (dtype_raw > 1) throw FormatError("weights: unknown dtype for '" + name + "'");
        const auto dtype = static_cast<WeightDtype>(dtype_raw);
        std::array<uint32_t, 4> dims{};
        for (auto& d : dims) d = r.u32();

        const int idx = g.index_of(name);
        if (idx < 0) throw FormatError("weights: record '" + name + "' matches no layer");
        const LayerDesc& l = g.layers[static_cast<size_t>(idx)];
        if (!is_parameterised(l)) throw FormatError("weights: layer '" + name + "' takes no parameters");
        if (dims != expected_dims(l)) throw FormatError("weights: size mismatch for '" + name + "'");
        if (loaded.contains(name)) throw FormatError("weights: duplicate record '" + name + "'");

        LayerParams p;
        auto read_f = [&](size_t n) {
            std::vector<float> v(n);
            for (auto& x : v) x = r.f32();
            return v;
        };
        auto read_q = [&](size_t n) {
            std::vector<Fix16> v(n);
            for (auto& x : v) x = Fix16{r.i16()};
            return v;
        };
        const size_t c = dims[0];
        if (l.has_weights()) {
            const size_t n = static_cast<size_t>(dims[0]) * dims[1] * dims[2] * dims[3];
            if (dtype == WeightDtype::Float) {
                FloatWeights w(static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2]),
                               static_cast<int>(dims[3]));
                w.data = read_f(n);
                w.bias = read_f(c);
                p.real = std::move(w);
            } else {
                WeightTensor w(static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2]),
                               static_cast<int>(dims[3]));
                w.data = read_q(n);
                w.bias = read_q(c);
                p.fixed = std::move(w);
            }
        } else if (l.kind == LayerKind::BatchNorm) {
            if (dtype != WeightDtype::Float) throw FormatError("weights: batch-norm record must be float");
            BnParams bn;
            bn.epsilon = l.bn_epsilon;
            for (auto* arr : {&bn.gamma, &bn.beta, &bn.mean, &bn.variance}) {
                const auto v = read_f(c);
                arr->assign(v.begin(), v.end());
            }
            p.bn = std::move(bn);
        } else {
            if (dtype == WeightDtype::Float) p.merge_bias_real = read_f(c);
            else p.merge_bias_fixed = read_q(c);
        }
        loaded.emplace(name, std::move(p));
    }
    if (!r.done()) throw FormatError("weights: size mismatch (trailing bytes)");
    for (const auto& l : g.layers)
        if (l.has_weights() && !loaded.contains(l.name))
            throw FormatError("weights: no record for layer '" + l.name + "'");
    g.params = std::move(loaded);
}

std::vector<uint8_t> zero_weights_blob(const NetworkGraph& g, WeightDtype dtype) {
    NetworkGraph copy = g;
    copy.params.clear();
    for (const auto& l : g.layers) {
        if (!is_parameterised(l)) continue;
        const auto d = expected_dims(l);
        LayerParams p;
        if (l.has_weights()) {
            FloatWeights w(static_cast<int>(d[0]), static_cast<int>(d[1]), static_cast<int>(d[2]), static_cast<int>(d[3]));
            p.fixed = quantize(w);
            p.real = std::move(w);
        } else if (l.kind == LayerKind::BatchNorm) {
            BnParams bn;
            bn.gamma.assign(d[0], 0.0);
            bn.beta = bn.mean = bn.variance = bn.gamma;
            p.bn = std::move(bn);
        } else {
            p.merge_bias_real.assign(d[0], 0.0f);
            p.merge_bias_fixed.assign(d[0], Fix16{});
        }
        copy.params.emplace(l.name, std::move(p));
    }
    return save_weights(copy, dtype);
}

void save_weights_file(const std::filesystem::path& path, const NetworkGraph& g, WeightDtype dtype) {
    const auto bytes = save_weights(g, dtype);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void load_weights_file(const std::filesystem::path& path, NetworkGraph& g) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open " + path.string());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    load_weights(bytes, g);
}

}  // namespace cspsim
