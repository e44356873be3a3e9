#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "modlens/rng.hpp"
#include "modlens/tensor.hpp"

namespace modlens {

// One multimodal raster sample: a C-channel float32 stack plus a binary mask.
struct MultimodalSample {
  std::string id;
  Tensor4<float> image;  // [1][C][H][W]
  std::vector<std::uint8_t> mask;  // H*W, values in {0,1}
  std::vector<std::string> channel_names;

  int channels() const { return image.c; }
  int height() const { return image.h; }
  int width() const { return image.w; }
};

// Throws RuntimeFailure if an invariant is violated (shape, mask values,
// non-finite pixels).
void validate_sample(const MultimodalSample& sample);

struct ModalityGroup {
  std::string name;
  std::vector<int> channel_indices;
};

// Named, possibly overlapping channel groups over the stack.
struct ModalityScheme {
  std::vector<ModalityGroup> groups;
  int total_channels = 0;

  int num_modalities() const { return static_cast<int>(groups.size()); }
  const ModalityGroup* find(const std::string& name) const;
  void validate() const;  // throws ConfigError
};

// The 14-band MapInWild-style layout: Sentinel-2 bands in ascending band
// order, then Sentinel-1 VV/VH, WorldCover, NTL. Six groups; the Sentinel-2
// groups are nested.
ModalityScheme default_scheme();

// Band names matching default_scheme()'s channel order.
const std::vector<std::string>& default_channel_names();

struct ChannelStats {
  std::vector<float> mean;
  std::vector<float> std_dev;
};

enum class Split { kTrain, kVal, kTest };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

struct ManifestEntry {
  std::string id;
  Split split = Split::kTrain;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> samples;
  ModalityScheme scheme;
  ChannelStats normalization_stats;

  std::vector<std::string> ids(Split split) const;
};

struct SynthConfig {
  int num_samples = 120;
  int num_val = 20;
  int num_test = 0;
  int height = 64;
  int width = 64;
  std::uint64_t seed = 0;
  // Group name -> signal strength in [0,1]. Channels in several informative
  // groups take the strongest entry. Defaults: strong WorldCover proxy,
  // medium NTL, weak Sentinel-2, Sentinel-1 pure noise.
  std::map<std::string, float> informative_groups = {
      {"WorldCover", 0.9f},
      {"NightTimeLight", 0.7f},
      {"Sentinel-2(AllBands)", 0.3f},
      {"Sentinel-2(RGB)", 0.3f},
      {"Sentinel-2(RGBNIR)", 0.3f},
  };
  std::vector<std::string> noise_groups = {"Sentinel-1"};
  // Per-sample mask area fraction is drawn uniformly from this range.
  float area_min = 0.12f;
  float area_max = 0.55f;
  // Boundary displacement of each group's view of the mask, as a fraction of
  // the field's spread. Keeps even strong channels from being pixel-perfect.
  float distortion = 0.35f;
  // Per-sample reliability: with this probability an informative group family
  // (Sentinel-2 bands / Sentinel-1 / WorldCover / NTL) renders a decoy field
  // unrelated to the mask for that sample, like cloud cover knocking out an
  // optical source while still looking like a scene. Which families dropped
  // out is per-sample information a model can only recover from the data.
  float dropout_prob = 0.0f;

  void validate(const ModalityScheme& scheme) const;  // throws ConfigError
};

// Generates a synthetic dataset under out_dir and writes manifest.json.
// Deterministic in config.seed (same config -> identical bytes).
// Normalization stats are computed over the train split.
DatasetManifest generate_synthetic(const SynthConfig& config,
                                   const std::filesystem::path& out_dir);

// On-disk format: <id>_image.bin (float32 LE, C-major planar),
// <id>_image.json (header), <id>_mask.bin (uint8), manifest.json.
void save_sample(const MultimodalSample& sample, const std::filesystem::path& root);
MultimodalSample load_sample(const DatasetManifest& manifest, const std::string& id);

void save_manifest(const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::filesystem::path& root);

// size x size window at the given offset, same offset for image and mask.
MultimodalSample crop_at(const MultimodalSample& sample, int oy, int ox, int size);

// Offset drawn from rng; equals the identity crop when size == H == W.
MultimodalSample random_crop(const MultimodalSample& sample, int size, std::uint64_t& rng_state);

// Per-channel (x - mean) / std; the mask is untouched.
MultimodalSample normalize(const MultimodalSample& sample, const ChannelStats& stats);

}  // namespace modlens
