#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "posmed/nn/fusion.hpp"
#include "posmed/nn/mask_head.hpp"
#include "posmed/nn/tensor.hpp"

namespace posmed::nn {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Writes <prefix>.bin (little-endian float64, tensors back to back) and
// <prefix>.json ({"dtype": "float64-le", "tensors": [{"name","shape","offset"}]},
// offsets counted in elements).
void save_tensors(const std::filesystem::path& prefix, const NamedTensors& tensors);
NamedTensors load_tensors(const std::filesystem::path& prefix);

NamedTensors collect(const FusionParams& fusion, const MaskHeadParams* head = nullptr);
// Overwrites every tensor of `fusion` (and `head`) from `tensors` by name.
// Throws DataError on a missing name or shape mismatch.
void assign(const NamedTensors& tensors, FusionParams& fusion, MaskHeadParams* head = nullptr);

}  // namespace posmed::nn
