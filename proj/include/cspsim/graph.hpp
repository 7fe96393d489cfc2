// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "cspsim/tensor.hpp"

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cspsim {

enum class LayerKind {
    Conv,
    MaxPool,
    AvgPool,
    FullyConnected,
    Add,
    ReLU,
    Identity,
    LRN,
    Marshal,
    Merge,
    BatchNorm,
    Softmax,
};

enum class Placement { GPP, CSP };
enum class PoolMode { Max, Avg, Downsample };
enum class MarshalDirection { ToCSP, FromCSP };

std::string_view to_string(LayerKind k);
std::string_view to_string(Placement p);
std::string_view to_string(PoolMode m);
std::string_view to_string(MarshalDirection d);

struct Shape {
    int c = 0;
    int h = 0;
    int w = 0;
    int64_t elements() const { return int64_t{c} * h * w; }
    friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

/// Per-side padding. Negative values crop the input instead.
struct Padding {
    int top = 0;
    int left = 0;
    int bottom = 0;
    int right = 0;

    static Padding uniform(int p) { return {p, p, p, p}; }
    bool is_uniform() const { return top == left && left == bottom && bottom == right; }
    friend bool operator==(const Padding&, const Padding&) = default;
};

struct FusedPool {
    PoolMode mode = PoolMode::Max;
    int window = 2;
    friend bool operator==(const FusedPool&, const FusedPool&) = default;
};

struct LrnParams {
    int size = 5;
    double alpha = 1e-4;
    double beta = 0.75;
    double k = 1.0;
};

/// One node of the network. Fields that do not apply to a kind are ignored.
struct LayerDesc {
    std::string name;
    LayerKind kind = LayerKind::Identity;
    std::vector<std::string> inputs;

    int kh = 1;
    int kw = 1;
    int stride = 1;
    Padding pad;
    int out_channels = 0;
    int declared_in_channels = 0;  // optional "in" key, validated when non-zero
    bool has_bias = true;

    bool fused_relu = false;
    std::optional<FusedPool> fused_pool;
    Placement placement = Placement::GPP;
    std::optional<Placement> forced_placement;

    MarshalDirection marshal_direction = MarshalDirection::ToCSP;
    LrnParams lrn;
    double bn_epsilon = 1e-5;

    // 3x3 kernel that carries a 1x1 convolution in its centre tap.
    bool embedded_1x1 = false;

    std::string block;                 // report grouping label
    std::vector<std::string> history;  // applied transformations, e.g. "split7x7:conv1"

    // Inferred by NetworkGraph::finalize().
    Shape in_shape;
    Shape out_shape;

    bool is_conv() const { return kind == LayerKind::Conv; }
    bool has_weights() const { return kind == LayerKind::Conv || kind == LayerKind::FullyConnected; }
    bool has_history(std::string_view prefix) const;
};

/// Per-channel inference-time batch normalisation.
struct BnParams {
    std::vector<double> gamma;
    std::vector<double> beta;
    std::vector<double> mean;
    std::vector<double> variance;
    double epsilon = 1e-5;

    size_t channels() const { return gamma.size(); }
};

/// Real-valued and/or quantised parameters of one layer.
struct LayerParams {
    std::optional<FloatWeights> real;
    std::optional<WeightTensor> fixed;
    std::optional<BnParams> bn;
    std::vector<float> merge_bias_real;
    std::vector<Fix16> merge_bias_fixed;
};

inline constexpr std::string_view kInputName = "input";

class NetworkGraph {
public:
    std::string name = "net";
    Shape input_shape;
    bool input_is_float = true;  // host-side element type of the network input
    std::vector<LayerDesc> layers;
    std::map<std::string, LayerParams> params;

    /// Topologically sort (stable), check for cycles and dangling edges, and
    /// infer every layer's input/output shape.
    void finalize();

    int index_of(std::string_view name) const;
    bool contains(std::string_view name) const { return index_of(name) >= 0; }
    LayerDesc& layer(std::string_view name);
    const LayerDesc& layer(std::string_view name) const;
    Shape shape_of(std::string_view tensor) const;
    std::vector<int> consumers(std::string_view name) const;
    /// Layers with no consumers.
    std::vector<int> exits() const;

    LayerParams* params_of(std::string_view name);
    const LayerParams* params_of(std::string_view name) const;
};

// Textual network description; grammar documented in docs/network_format.md.
NetworkGraph parse_network(std::string_view text);
NetworkGraph load_network(const std::string& path);
std::string write_network(const NetworkGraph& g);

/// Output extent of a sliding window along one axis.
inline int window_out(int in, int k, int stride, int pad_before, int pad_after) {
    return (in + pad_before + pad_after - k) / stride + 1;
}

}  // namespace cspsim
