// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "cspsim/graph.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace cspsim {

/// Weight container layout (all integers little-endian):
///
///   "NGWB" | u32 version | u32 record count
///   per record:
///     u32 name length | name bytes | u32 dtype (0 = Q5.11 int16, 1 = float32)
///     u32 dims[4] | payload
///
/// Payload by layer kind:
///   conv / fc   dims = (n_out, n_in, kh, kw); n_out*n_in*kh*kw weights then n_out biases
///   batchnorm   dims = (c, 4, 1, 1); gamma, beta, mean, variance (c values each)
///   merge       dims = (c, 1, 1, 1); c biases
inline constexpr uint32_t kWeightFileVersion = 1;

enum class WeightDtype : uint32_t { Fixed = 0, Float = 1 };

/// Serialises every parameterised layer. Layers holding quantised weights are
/// written as Fixed unless `dtype` forces Float (which requires real weights).
std::vector<uint8_t> save_weights(const NetworkGraph& g, WeightDtype dtype = WeightDtype::Fixed);

/// Populates `g.params` from a blob. Every record must name a layer of a
/// matching kind and shape; every conv/fc layer must be covered.
void load_weights(std::span<const uint8_t> blob, NetworkGraph& g);

void save_weights_file(const std::filesystem::path& path, const NetworkGraph& g, WeightDtype dtype);
void load_weights_file(const std::filesystem::path& path, NetworkGraph& g);

/// Blob with a record per parameterised layer, all payload values zero.
std::vector<uint8_t> zero_weights_blob(const NetworkGraph& g, WeightDtype dtype = WeightDtype::Fixed);

}  // namespace cspsim
