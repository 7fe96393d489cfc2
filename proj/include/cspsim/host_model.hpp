// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "cspsim/graph.hpp"
#include "cspsim/platform.hpp"

#include <span>
#include <vector>

namespace cspsim {

// ---------------------------------------------------------------------------
// Functional kernels. Fixed-point variants follow the same Q5.11 contract as
// the convolution engine so that results do not depend on placement.
// ---------------------------------------------------------------------------

/// Direct convolution with the layer's fused ReLU and pooling. The fixed
/// version accumulates input features in groups of accumulation_group() and
/// renormalises after each group, seeding the first with the bias.
FeatureMap conv2d(const CeConfig& cfg, const LayerDesc& conv, const WeightTensor& w, const FeatureMap& x);
FloatMap conv2d(const LayerDesc& conv, const FloatWeights& w, const FloatMap& x);

/// y = b + W x over the flattened (planar, c-major) input. One renorm per
/// output; throws AccumulatorOverflow if the 32-bit sum overflows.
std::vector<Fix16> fc_forward(std::span<const Fix16> x, const WeightTensor& w);
std::vector<float> fc_forward(std::span<const float> x, const FloatWeights& w);

/// Element-wise saturated sum. Operands may differ in layout; the result is
/// interlaced if any operand is.
FeatureMap add_merge(std::span<const FeatureMap> parts);
FloatMap add_merge(std::span<const FloatMap> parts);

FeatureMap relu(const FeatureMap& x);
FloatMap relu(const FloatMap& x);

/// Sum of the partial maps in 32 bits, plus the per-channel bias, one
/// saturation at the end.
FeatureMap merge4(std::span<const FeatureMap> parts, std::span<const Fix16> bias);
FloatMap merge4(std::span<const FloatMap> parts, std::span<const float> bias);

/// Cross-channel LRN: x / (k + alpha/size * sum_{window} x^2)^beta.
FloatMap lrn(const FloatMap& x, const LrnParams& p);
FeatureMap lrn(const FeatureMap& x, const LrnParams& p);

/// Arbitrary window/stride/padding. Max ignores padded cells; average
/// divides by the full window area and rounds half to even.
FeatureMap pool_generic(const FeatureMap& x, int kh, int kw, int stride, Padding pad, PoolMode mode);
FloatMap pool_generic(const FloatMap& x, int kh, int kw, int stride, Padding pad, PoolMode mode);

FloatMap batchnorm(const FloatMap& x, const BnParams& bn);
FeatureMap batchnorm(const FeatureMap& x, const BnParams& bn);

/// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);

/// Interlace (ToCSP) or deinterlace (FromCSP). Throws ValidationError if the
/// layout does not match the direction.
FeatureMap marshal(const FeatureMap& fm, MarshalDirection dir);

// ---------------------------------------------------------------------------
// Timing
// ---------------------------------------------------------------------------

struct HostCost {
    int64_t ops = 0;
    int64_t bytes = 0;
    double density = 0;  // Op/B used for the roofline (FC: clamped)
    double seconds = 0;
};

/// Marshal copy: elements * element_bytes / rate + setup.
double marshal_time(const RooflineParams& p, int64_t elements, int element_bytes, MarshalDirection dir);

/// Roofline cost of a GPP layer. FC layers use min(naive density, the FC
/// calibration); element-wise kernels reach stream_kernel_efficiency of the
/// roof. `source_bytes` is the element width of the layer's input in host
/// memory (4 for a float network input, else activation_bytes).
HostCost host_cost(const RooflineParams& p, const LayerDesc& l, int source_bytes = 0);

/// host_cost(...).seconds, with the source width taken from the graph.
double host_time(const PlatformConfig& cfg, const NetworkGraph& g, const LayerDesc& l);

}  // namespace cspsim
