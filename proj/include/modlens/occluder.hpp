#pragma once

#include <string>
#include <vector>

#include "modlens/raster.hpp"
#include "modlens/tensor.hpp"

namespace modlens {

// One modality-occlusion step: which channels to blank and with what value.
struct OcclusionPlan {
  std::string group_name;
  std::vector<int> channel_indices;
  float fill_value = 0.0f;
};

// Returns a copy of image with the plan's channels (as a set; duplicates are
// filled once) set to fill_value across the whole plane. All other channels
// are bit-identical to the input. Throws ConfigError on out-of-range indices.
template <typename T>
Tensor4<T> occlude(const Tensor4<T>& image, const OcclusionPlan& plan);

// One plan per modality group, in scheme order, sharing one fill value.
std::vector<OcclusionPlan> occlusion_sequence(const ModalityScheme& scheme,
                                              float fill_value = 0.0f);

}  // namespace modlens
