#include "modlens/occluder.hpp"

#include <algorithm>

#include "modlens/errors.hpp"

namespace modlens {

template <typename T>
Tensor4<T> occlude(const Tensor4<T>& image, const OcclusionPlan& plan) {
  std::vector<int> channels = plan.channel_indices;
  std::sort(channels.begin(), channels.end());
  channels.erase(std::unique(channels.begin(), channels.end()), channels.end());
  for (const int c : channels)
    if (c < 0 || c >= image.c)
      throw ConfigError("occlusion plan '" + plan.group_name + "' has channel index " +
                        std::to_string(c) + " outside [0, " + std::to_string(image.c) + ")");
  Tensor4<T> out = image;
  for (int b = 0; b < image.n; ++b)
    for (const int c : channels)
      std::fill_n(out.plane(b, c), out.plane_size(), static_cast<T>(plan.fill_value));
  return out;
}

template Tensor4<float> occlude(const Tensor4<float>&, const OcclusionPlan&);
template Tensor4<double> occlude(const Tensor4<double>&, const OcclusionPlan&);

std::vector<OcclusionPlan> occlusion_sequence(const ModalityScheme& scheme, float fill_value) {
  scheme.validate();
  std::vector<OcclusionPlan> plans;
  plans.reserve(scheme.groups.size());
  for (const auto& g : scheme.groups)
    plans.push_back({g.name, g.channel_indices, fill_value});
  return plans;
}

}  // namespace modlens
