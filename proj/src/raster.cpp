#include "modlens/raster.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "modlens/errors.hpp"

namespace modlens {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

void validate_sample(const MultimodalSample& sample) {
  if (sample.image.n != 1)
    throw RuntimeFailure("sample image must be a single [1][C][H][W] stack");
  if (sample.image.c != static_cast<int>(sample.channel_names.size()))
    throw RuntimeFailure("sample '" + sample.id + "': channel count " +
                         std::to_string(sample.image.c) + " != " +
                         std::to_string(sample.channel_names.size()) + " channel names");
  if (sample.mask.size() != sample.image.plane_size())
    throw RuntimeFailure("sample '" + sample.id + "': mask size does not match image H*W");
  for (const std::uint8_t v : sample.mask)
    if (v > 1)
      throw RuntimeFailure("sample '" + sample.id + "': mask value " +
                           std::to_string(int(v)) + " is not binary");
  for (const float v : sample.image.data)
    if (!std::isfinite(v))
      throw RuntimeFailure("sample '" + sample.id + "': non-finite image value");
}

const ModalityGroup* ModalityScheme::find(const std::string& name) const {
  for (const auto& g : groups)
    if (g.name == name) return &g;
  return nullptr;
}

void ModalityScheme::validate() const {
  if (groups.empty()) throw ConfigError("modality scheme has no groups");
  if (total_channels < 1) throw ConfigError("modality scheme has no channels");
  std::set<std::string> names;
  for (const auto& g : groups) {
    if (g.channel_indices.empty())
      throw ConfigError("modality group '" + g.name + "' is empty");
    if (!names.insert(g.name).second)
      throw ConfigError("duplicate modality group name '" + g.name + "'");
    for (const int idx : g.channel_indices)
      if (idx < 0 || idx >= total_channels)
        throw ConfigError("modality group '" + g.name + "' has channel index " +
                          std::to_string(idx) + " outside [0, " +
                          std::to_string(total_channels) + ")");
  }
}

ModalityScheme default_scheme() {
  // Channel order: B2,B3,B4,B5,B6,B7,B8,B8A,B11,B12,VV,VH,WorldCover,NTL.
  ModalityScheme s;
  s.total_channels = 14;
  s.groups = {
      {"Sentinel-1", {10, 11}},
      {"Sentinel-2(RGB)", {2, 1, 0}},
      {"Sentinel-2(RGBNIR)", {2, 1, 0, 6}},
      {"Sentinel-2(AllBands)", {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}},
      {"WorldCover", {12}},
      {"NightTimeLight", {13}},
  };
  return s;
}

const std::vector<std::string>& default_channel_names() {
  static const std::vector<std::string> names = {
      "B2", "B3", "B4", "B5", "B6", "B7", "B8", "B8A", "B11", "B12",
      "VV", "VH", "WorldCover", "NTL"};
  return names;
}

std::string split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

std::vector<std::string> DatasetManifest::ids(Split split) const {
  std::vector<std::string> out;
  for (const auto& e : samples)
    if (e.split == split) out.push_back(e.id);
  return out;
}

void SynthConfig::validate(const ModalityScheme& scheme) const {
  if (num_samples < 1) throw ConfigError("synth: num_samples must be >= 1");
  if (num_val < 0 || num_test < 0 || num_val + num_test >= num_samples)
    throw ConfigError("synth: train split would be empty (num_samples <= num_val + num_test)");
  if (height < 8 || width < 8) throw ConfigError("synth: height and width must be >= 8");
  for (const auto& [name, strength] : informative_groups) {
    if (scheme.find(name) == nullptr)
      throw ConfigError("synth: unknown group name '" + name + "' in informative_groups");
    if (strength < 0.0f || strength > 1.0f)
      throw ConfigError("synth: strength for group '" + name + "' outside [0,1]");
  }
  for (const auto& name : noise_groups) {
    if (scheme.find(name) == nullptr)
      throw ConfigError("synth: unknown group name '" + name + "' in noise_groups");
    if (informative_groups.count(name))
      throw ConfigError("synth: group '" + name + "' listed as both informative and noise");
  }
  if (!(area_min > 0.0f && area_max < 1.0f && area_min <= area_max))
    throw ConfigError("synth: area range must satisfy 0 < area_min <= area_max < 1");
  if (distortion < 0.0f) throw ConfigError("synth: distortion must be >= 0");
  if (dropout_prob < 0.0f || dropout_prob >= 1.0f)
    throw ConfigError("synth: dropout_prob must be in [0, 1)");
}

namespace {

using Field = std::vector<double>;

// Bilinearly interpolated lattice noise with a (g+1)^2 grid of U[-1,1] values.
Field value_noise(int h, int w, int g, std::uint64_t& rng) {
  std::vector<double> lattice((g + 1) * (g + 1));
  for (auto& v : lattice) v = 2.0 * rng_uniform(rng) - 1.0;
  Field out(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    const double fy = static_cast<double>(y) / h * g;
    const int y0 = static_cast<int>(fy);
    const double ty = fy - y0;
    for (int x = 0; x < w; ++x) {
      const double fx = static_cast<double>(x) / w * g;
      const int x0 = static_cast<int>(fx);
      const double tx = fx - x0;
      const double v00 = lattice[y0 * (g + 1) + x0];
      const double v01 = lattice[y0 * (g + 1) + x0 + 1];
      const double v10 = lattice[(y0 + 1) * (g + 1) + x0];
      const double v11 = lattice[(y0 + 1) * (g + 1) + x0 + 1];
      out[static_cast<std::size_t>(y) * w + x] =
          (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11);
    }
  }
  return out;
}

void standardize(Field& f) {
  double sum = 0, sq = 0;
  for (const double v : f) {
    sum += v;
    sq += v * v;
  }
  const double mean = sum / f.size();
  const double var = std::max(sq / f.size() - mean * mean, 1e-12);
  const double inv = 1.0 / std::sqrt(var);
  for (double& v : f) v = (v - mean) * inv;
}

Field low_freq_field(int h, int w, std::uint64_t& rng) {
  Field f = value_noise(h, w, 4, rng);
  const Field f2 = value_noise(h, w, 9, rng);
  const Field f3 = value_noise(h, w, 16, rng);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] += 0.4 * f2[i] + 0.15 * f3[i];
  standardize(f);
  return f;
}

double quantile_of(const Field& f, double q) {
  Field tmp = f;
  std::sort(tmp.begin(), tmp.end());
  const double pos = q * (tmp.size() - 1);
  const std::size_t i = static_cast<std::size_t>(pos);
  const double frac = pos - i;
  if (i + 1 >= tmp.size()) return tmp.back();
  return tmp[i] * (1.0 - frac) + tmp[i + 1] * frac;
}

// A group's imperfect view of the mask field: the field plus its own
// low-frequency error, i.e. displaced boundaries rather than pixel noise.
Field distorted_view(const Field& base, double distortion, int h, int w,
                     std::uint64_t& rng) {
  Field noise = low_freq_field(h, w, rng);
  Field out(base.size());
  for (std::size_t i = 0; i < base.size(); ++i)
    out[i] = base[i] + distortion * noise[i];
  standardize(out);
  return out;
}

struct RenderedSample {
  MultimodalSample sample;
};

// Per-channel signal strength: the strongest informative group containing the
// channel; channels in noise groups (or in no configured group) get 0.
std::vector<float> channel_strengths(const SynthConfig& config,
                                     const ModalityScheme& scheme) {
  std::vector<float> strength(scheme.total_channels, 0.0f);
  for (const auto& [name, s] : config.informative_groups) {
    const ModalityGroup* g = scheme.find(name);
    for (const int idx : g->channel_indices)
      strength[idx] = std::max(strength[idx], s);
  }
  for (const auto& name : config.noise_groups) {
    const ModalityGroup* g = scheme.find(name);
    for (const int idx : g->channel_indices) strength[idx] = 0.0f;
  }
  return strength;
}

// Channel families sharing one view of the scene: Sentinel-2 bands,
// Sentinel-1, WorldCover, NTL.
enum Family { kS2 = 0, kS1 = 1, kWC = 2, kNTL = 3, kFamilies = 4 };

Family family_of(int channel) {
  if (channel <= 9) return kS2;
  if (channel == 12) return kWC;
  if (channel == 13) return kNTL;
  return kS1;
}

// Relative weight of a family's private field against the shared scene field
// in both the mask field and that family's view.
constexpr double kPrivateWeight = 1.0;

MultimodalSample render_sample(const SynthConfig& config, const ModalityScheme& scheme,
                               const std::vector<float>& strength, int index) {
  const int h = config.height, w = config.width;
  const std::size_t npix = static_cast<std::size_t>(h) * w;
  std::uint64_t rng = config.seed + 0x9e3779b97f4a7c15ull * (static_cast<std::uint64_t>(index) + 1);
  splitmix64(rng);

  // The scene is one shared field plus a private field per informative
  // family. The mask comes from shared + all privates; family f's view shows
  // shared + its own private only. Views therefore overlap on the shared
  // structure (so they can corroborate one another) while each contributes
  // a part the others lack (so losing one always costs something).
  bool informative[kFamilies] = {false, false, false, false};
  for (int c = 0; c < scheme.total_channels && c < 14; ++c)
    if (strength[c] > 0.0f) informative[family_of(c)] = true;

  const Field shared = low_freq_field(h, w, rng);
  Field priv[kFamilies];
  for (int fam = 0; fam < kFamilies; ++fam)
    if (informative[fam]) priv[fam] = low_freq_field(h, w, rng);

  const double area = config.area_min + (config.area_max - config.area_min) * rng_uniform(rng);

  MultimodalSample s;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "synth_%06d", index);
  s.id = buf;
  s.channel_names = default_channel_names();
  s.channel_names.resize(scheme.total_channels, "ch");
  s.image.resize(1, scheme.total_channels, h, w);
  s.mask.assign(npix, 0);

  Field mask_field = shared;
  for (int fam = 0; fam < kFamilies; ++fam)
    if (informative[fam])
      for (std::size_t i = 0; i < npix; ++i) mask_field[i] += kPrivateWeight * priv[fam][i];
  standardize(mask_field);
  const double tau = quantile_of(mask_field, 1.0 - area);
  for (std::size_t i = 0; i < npix; ++i) s.mask[i] = mask_field[i] > tau ? 1 : 0;

  // Per-sample reliability dropout, one draw per family. A dropped family
  // renders a decoy scene (fresh shared + private fields, same statistics,
  // no relation to the mask) the way cloud cover still looks like terrain;
  // deadness shows only in the disagreement with the other modalities.
  // At least one informative family always survives: a scene with no usable
  // modality at all teaches nothing.
  int owners = 0;
  for (const bool b : informative) owners += b ? 1 : 0;
  bool dropped[kFamilies];
  int live = 0;
  do {
    live = 0;
    for (int fam = 0; fam < kFamilies; ++fam) {
      dropped[fam] = rng_uniform(rng) < config.dropout_prob;
      if (informative[fam] && !dropped[fam]) ++live;
    }
  } while (owners > 0 && live == 0);

  Field view[kFamilies];
  for (int fam = 0; fam < kFamilies; ++fam) {
    if (!informative[fam]) continue;
    Field raw;
    if (dropped[fam]) {
      raw = low_freq_field(h, w, rng);
      const Field decoy_priv = low_freq_field(h, w, rng);
      for (std::size_t i = 0; i < npix; ++i) raw[i] += kPrivateWeight * decoy_priv[i];
    } else {
      raw = shared;
      for (std::size_t i = 0; i < npix; ++i) raw[i] += kPrivateWeight * priv[fam][i];
    }
    standardize(raw);
    view[fam] = distorted_view(raw, config.distortion, h, w, rng);
  }

  const double tau_s2 = informative[kS2] ? quantile_of(view[kS2], 1.0 - area) : 0.0;
  const double tau_s1 = informative[kS1] ? quantile_of(view[kS1], 1.0 - area) : 0.0;
  const double tau_ntl = informative[kNTL] ? quantile_of(view[kNTL], 1.0 - area) : 0.0;
  // Land-cover class cuts; the last cut sits on the mask boundary so the top
  // class traces the family's view of the mask instead of swallowing it.
  double tau_wc[4] = {0, 0, 0, 0};
  if (informative[kWC]) {
    tau_wc[0] = quantile_of(view[kWC], 0.3);
    tau_wc[1] = quantile_of(view[kWC], 0.55);
    tau_wc[2] = quantile_of(view[kWC], 0.8);
    tau_wc[3] = quantile_of(view[kWC], 1.0 - area);
  }

  Field f(npix);
  for (int c = 0; c < scheme.total_channels; ++c) {
    const Family fam = c < 14 ? family_of(c) : kS1;
    const bool has_view = c < 14 && informative[fam];
    if (has_view && fam == kWC) {
      // WorldCover proxy: the view quantized into five land-cover classes.
      for (std::size_t i = 0; i < npix; ++i) {
        const double v = view[kWC][i];
        f[i] = v < tau_wc[0] ? -1.5 : v < tau_wc[1] ? -0.75 : v < tau_wc[2] ? 0.0
               : v < tau_wc[3] ? 0.75 : 1.5;
      }
    } else if (has_view && fam == kNTL) {
      // NTL proxy: bright where its component is absent (human activity).
      for (std::size_t i = 0; i < npix; ++i)
        f[i] = -std::tanh((view[kNTL][i] - tau_ntl) * 2.0);
    } else if (has_view) {
      const double t = fam == kS2 ? tau_s2 : tau_s1;
      for (std::size_t i = 0; i < npix; ++i) f[i] = std::tanh((view[fam][i] - t) * 2.0);
    } else {
      f.assign(npix, 0.0);
    }
    if (has_view) standardize(f);
    const double sc = strength[c];
    float* plane = s.image.plane(0, c);
    for (std::size_t i = 0; i < npix; ++i)
      plane[i] = static_cast<float>(sc * f[i] + (1.0 - sc) * rng_normal(rng));
  }
  return s;
}

json scheme_to_json(const ModalityScheme& scheme) {
  json groups = json::array();
  for (const auto& g : scheme.groups)
    groups.push_back({{"name", g.name}, {"channels", g.channel_indices}});
  return {{"total_channels", scheme.total_channels}, {"groups", groups}};
}

ModalityScheme scheme_from_json(const json& j) {
  ModalityScheme s;
  s.total_channels = j.at("total_channels").get<int>();
  for (const auto& g : j.at("groups")) {
    ModalityGroup mg;
    mg.name = g.at("name").get<std::string>();
    mg.channel_indices = g.at("channels").get<std::vector<int>>();
    s.groups.push_back(std::move(mg));
  }
  s.validate();
  return s;
}

void write_binary(const fs::path& path, const void* data, std::size_t bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw RuntimeFailure("cannot open '" + path.string() + "' for writing");
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!f) throw RuntimeFailure("write failed for '" + path.string() + "'");
}

std::vector<char> read_binary(const fs::path& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw RuntimeFailure("missing file '" + path.string() + "'");
  const std::streamsize size = f.tellg();
  f.seekg(0);
  std::vector<char> buf(static_cast<std::size_t>(size));
  f.read(buf.data(), size);
  if (!f) throw RuntimeFailure("read failed for '" + path.string() + "'");
  return buf;
}

}  // namespace

void save_sample(const MultimodalSample& sample, const fs::path& root) {
  validate_sample(sample);
  fs::create_directories(root);
  write_binary(root / (sample.id + "_image.bin"), sample.image.data.data(),
               sample.image.size() * sizeof(float));
  write_binary(root / (sample.id + "_mask.bin"), sample.mask.data(), sample.mask.size());
  json header = {
      {"channels", sample.image.c},
      {"height", sample.image.h},
      {"width", sample.image.w},
      {"shape", {sample.image.c, sample.image.h, sample.image.w}},
      {"dtype", "float32"},
      {"byte_order", "little_endian"},
      {"channel_names", sample.channel_names},
  };
  std::ofstream f(root / (sample.id + "_image.json"));
  f << header.dump(2) << "\n";
  if (!f) throw RuntimeFailure("write failed for header of '" + sample.id + "'");
}

MultimodalSample load_sample(const DatasetManifest& manifest, const std::string& id) {
  const fs::path root = manifest.root;
  const fs::path header_path = root / (id + "_image.json");
  if (!fs::exists(header_path))
    throw RuntimeFailure("missing file '" + header_path.string() + "'");
  json header;
  {
    std::ifstream f(header_path);
    try {
      f >> header;
    } catch (const json::exception& e) {
      throw RuntimeFailure("bad header '" + header_path.string() + "': " + e.what());
    }
  }
  MultimodalSample s;
  s.id = id;
  const int c = header.at("channels").get<int>();
  const int h = header.at("height").get<int>();
  const int w = header.at("width").get<int>();
  if (header.contains("dtype") && header.at("dtype").get<std::string>() != "float32")
    throw RuntimeFailure("sample '" + id + "': unsupported dtype");
  if (c != manifest.scheme.total_channels)
    throw RuntimeFailure("sample '" + id + "': header has " + std::to_string(c) +
                         " channels but the manifest scheme expects " +
                         std::to_string(manifest.scheme.total_channels));
  s.channel_names = header.at("channel_names").get<std::vector<std::string>>();

  const auto img = read_binary(root / (id + "_image.bin"));
  const std::size_t expected = static_cast<std::size_t>(c) * h * w * sizeof(float);
  if (img.size() != expected)
    throw RuntimeFailure("sample '" + id + "': image file holds " +
                         std::to_string(img.size() / (static_cast<std::size_t>(h) * w * sizeof(float))) +
                         " planes but header says " + std::to_string(c));
  s.image.resize(1, c, h, w);
  std::memcpy(s.image.data.data(), img.data(), expected);

  const auto msk = read_binary(root / (id + "_mask.bin"));
  if (msk.size() != static_cast<std::size_t>(h) * w)
    throw RuntimeFailure("sample '" + id + "': mask size mismatch");
  s.mask.assign(msk.begin(), msk.end());
  validate_sample(s);
  return s;
}

void save_manifest(const DatasetManifest& manifest) {
  json samples = json::array();
  for (const auto& e : manifest.samples)
    samples.push_back({{"id", e.id}, {"split", split_name(e.split)}});
  json j = {
      {"format_version", 1},
      {"samples", samples},
      {"scheme", scheme_to_json(manifest.scheme)},
      {"normalization_stats",
       {{"mean", manifest.normalization_stats.mean},
        {"std", manifest.normalization_stats.std_dev}}},
  };
  std::ofstream f(manifest.root / "manifest.json");
  f << j.dump(2) << "\n";
  if (!f) throw RuntimeFailure("write failed for manifest.json");
}

DatasetManifest load_manifest(const fs::path& root) {
  const fs::path path = root / "manifest.json";
  if (!fs::exists(path)) throw ConfigError("no manifest.json under '" + root.string() + "'");
  json j;
  {
    std::ifstream f(path);
    try {
      f >> j;
    } catch (const json::exception& e) {
      throw RuntimeFailure(std::string("bad manifest.json: ") + e.what());
    }
  }
  DatasetManifest m;
  m.root = root;
  m.scheme = scheme_from_json(j.at("scheme"));
  for (const auto& e : j.at("samples")) {
    ManifestEntry entry;
    entry.id = e.at("id").get<std::string>();
    entry.split = split_from_name(e.at("split").get<std::string>());
    m.samples.push_back(std::move(entry));
  }
  m.normalization_stats.mean = j.at("normalization_stats").at("mean").get<std::vector<float>>();
  m.normalization_stats.std_dev = j.at("normalization_stats").at("std").get<std::vector<float>>();
  if (m.normalization_stats.mean.size() != static_cast<std::size_t>(m.scheme.total_channels) ||
      m.normalization_stats.std_dev.size() != static_cast<std::size_t>(m.scheme.total_channels))
    throw RuntimeFailure("manifest stats do not cover all channels");
  for (const float sd : m.normalization_stats.std_dev)
    if (!(sd > 0.0f)) throw RuntimeFailure("manifest has a non-positive channel std");
  return m;
}

DatasetManifest generate_synthetic(const SynthConfig& config, const fs::path& out_dir) {
  const ModalityScheme scheme = default_scheme();
  config.validate(scheme);
  const std::vector<float> strength = channel_strengths(config, scheme);

  std::vector<MultimodalSample> rendered(config.num_samples);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < config.num_samples; ++i)
    rendered[i] = render_sample(config, scheme, strength, i);

  DatasetManifest m;
  m.root = out_dir;
  m.scheme = scheme;
  const int num_train = config.num_samples - config.num_val - config.num_test;
  fs::create_directories(out_dir);

  std::vector<double> sum(scheme.total_channels, 0.0), sq(scheme.total_channels, 0.0);
  std::size_t train_pixels = 0;
  for (int i = 0; i < config.num_samples; ++i) {
    const MultimodalSample& s = rendered[i];
    ManifestEntry e;
    e.id = s.id;
    e.split = i < num_train ? Split::kTrain
              : i < num_train + config.num_val ? Split::kVal
                                               : Split::kTest;
    m.samples.push_back(e);
    save_sample(s, out_dir);
    if (e.split == Split::kTrain) {
      train_pixels += s.image.plane_size();
      for (int c = 0; c < scheme.total_channels; ++c) {
        const float* p = s.image.plane(0, c);
        for (std::size_t k = 0; k < s.image.plane_size(); ++k) {
          sum[c] += p[k];
          sq[c] += static_cast<double>(p[k]) * p[k];
        }
      }
    }
  }

  m.normalization_stats.mean.resize(scheme.total_channels);
  m.normalization_stats.std_dev.resize(scheme.total_channels);
  for (int c = 0; c < scheme.total_channels; ++c) {
    const double mean = sum[c] / static_cast<double>(train_pixels);
    const double var = std::max(sq[c] / static_cast<double>(train_pixels) - mean * mean, 0.0);
    m.normalization_stats.mean[c] = static_cast<float>(mean);
    m.normalization_stats.std_dev[c] = static_cast<float>(std::sqrt(var));
    if (!(m.normalization_stats.std_dev[c] > 0.0f))
      throw RuntimeFailure("synthetic channel " + std::to_string(c) + " has zero spread");
  }
  save_manifest(m);
  return m;
}

MultimodalSample crop_at(const MultimodalSample& sample, int oy, int ox, int size) {
  const int h = sample.height(), w = sample.width();
  if (size < 1 || size > h || size > w)
    throw ConfigError("crop size " + std::to_string(size) + " exceeds sample extent " +
                      std::to_string(h) + "x" + std::to_string(w));
  if (oy < 0 || ox < 0 || oy + size > h || ox + size > w)
    throw ConfigError("crop offset out of range");
  MultimodalSample out;
  out.id = sample.id;
  out.channel_names = sample.channel_names;
  out.image.resize(1, sample.channels(), size, size);
  out.mask.resize(static_cast<std::size_t>(size) * size);
  for (int c = 0; c < sample.channels(); ++c) {
    const float* src = sample.image.plane(0, c);
    float* dst = out.image.plane(0, c);
    for (int y = 0; y < size; ++y)
      std::memcpy(dst + static_cast<std::size_t>(y) * size,
                  src + (static_cast<std::size_t>(oy + y)) * w + ox,
                  static_cast<std::size_t>(size) * sizeof(float));
  }
  for (int y = 0; y < size; ++y)
    std::memcpy(out.mask.data() + static_cast<std::size_t>(y) * size,
                sample.mask.data() + (static_cast<std::size_t>(oy + y)) * w + ox, size);
  return out;
}

MultimodalSample random_crop(const MultimodalSample& sample, int size, std::uint64_t& rng_state) {
  const int h = sample.height(), w = sample.width();
  if (size > h || size > w)
    throw ConfigError("crop size " + std::to_string(size) + " exceeds sample extent");
  const int oy = h == size ? 0 : static_cast<int>(splitmix64(rng_state) % (h - size + 1));
  const int ox = w == size ? 0 : static_cast<int>(splitmix64(rng_state) % (w - size + 1));
  return crop_at(sample, oy, ox, size);
}

MultimodalSample normalize(const MultimodalSample& sample, const ChannelStats& stats) {
  if (stats.mean.size() != static_cast<std::size_t>(sample.channels()) ||
      stats.std_dev.size() != static_cast<std::size_t>(sample.channels()))
    throw ConfigError("normalization stats do not cover all channels");
  for (const float sd : stats.std_dev)
    if (!(sd > 0.0f)) throw ConfigError("normalization std must be > 0");
  MultimodalSample out = sample;
  for (int c = 0; c < sample.channels(); ++c) {
    float* p = out.image.plane(0, c);
    const float mean = stats.mean[c];
    const float inv = 1.0f / stats.std_dev[c];
    for (std::size_t i = 0; i < out.image.plane_size(); ++i) p[i] = (p[i] - mean) * inv;
  }
  return out;
}

}  // namespace modlens
