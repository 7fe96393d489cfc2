// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "cspsim/graph.hpp"

#include <array>
#include <optional>
#include <utility>

namespace cspsim {

// ---------------------------------------------------------------------------
// Batch-norm folding
// ---------------------------------------------------------------------------

/// W'[o] = W[o]*g[o]/sqrt(var[o]+eps), b'[o] = (b[o]-mean[o])*g[o]/sqrt(var[o]+eps) + beta[o].
FloatWeights fold_batchnorm(const FloatWeights& w, const BnParams& bn);

/// Folds every BatchNorm node whose producer is a Conv with no other
/// consumer. Returns the number of folded nodes. BatchNorm nodes that cannot
/// be folded are left in place and run on the host.
int fold_batchnorm(NetworkGraph& g);

// ---------------------------------------------------------------------------
// 7x7 decomposition
// ---------------------------------------------------------------------------

inline constexpr std::array<std::pair<int, int>, 4> kSplitOrigins{{{0, 0}, {0, 5}, {5, 0}, {5, 5}}};

/// Four 5x5 kernels (zero-padded sub-blocks of the 7x7 kernel at the origins
/// above), all with zero bias.
std::array<FloatWeights, 4> split_7x7(const FloatWeights& w);
std::array<WeightTensor, 4> split_7x7(const WeightTensor& w);

/// Replaces every 7x7 Conv by four 5x5 sub-convs ("<name>.s<r><c>") and a
/// Merge node that keeps the original name and adds the bias once. Returns
/// the number of decomposed layers.
int decompose_7x7(NetworkGraph& g);

// ---------------------------------------------------------------------------
// 1x1 -> 3x3 embedding
// ---------------------------------------------------------------------------

FloatWeights embed_1x1(const FloatWeights& w);
WeightTensor embed_1x1(const WeightTensor& w);

/// Embeds every 1x1 Conv in the centre of a 3x3 kernel with one extra pixel
/// of padding. Returns the number of converted layers.
int embed_1x1(NetworkGraph& g);

// ---------------------------------------------------------------------------
// Low-rank fully connected compression
// ---------------------------------------------------------------------------

/// floor(n_in*n_out / (factor*(n_in+n_out))).
int svd_rank(int n_out, int n_in, double factor);

struct LowRankFactors {
    FloatWeights v;  // rank x n_in, zero bias
    FloatWeights u;  // n_out x rank, original bias
    std::vector<double> singular_values;
};

/// Truncated SVD by power iteration with deflation (tolerance 1e-8, at most
/// 10000 iterations per component). `w` must be an FC weight (kh = kw = 1).
LowRankFactors svd_factorize(const FloatWeights& w, int rank);

/// Replaces FC layer `name` by "<name>.v" (rank outputs, no bias) followed
/// by `name` (original outputs and bias). Uses svd_rank(factor) unless a
/// rank is given. Works on structure alone when the graph has no weights.
/// Returns the rank used.
int svd_compress(NetworkGraph& g, const std::string& name, double factor = 3.0,
                 std::optional<int> rank = std::nullopt);

// ---------------------------------------------------------------------------
// Quantisation and placement
// ---------------------------------------------------------------------------

/// Quantises every real-valued parameter to Q5.11. Returns how many values
/// saturated.
size_t quantize_graph(NetworkGraph& g);

/// True when the accelerator can run this convolution.
bool csp_supports(const LayerDesc& conv);

/// Assigns CSP/GPP placement, fuses ReLU and pooling into their producers
/// where the accelerator or host kernel supports it, and inserts Marshal
/// nodes where activation layouts disagree. Marshal nodes already present
/// are removed first, so the pass is idempotent.
void place_layers(NetworkGraph& g);

}  // namespace cspsim
