#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "modlens/raster.hpp"
#include "modlens/segnet.hpp"

namespace modlens {

struct InfluenceRow {
  std::string sample_id;
  std::string modality;
  float raw_score = 0.0f;
  float influence = 0.0f;  // 1 - raw_score
};

using InfluenceTable = std::vector<InfluenceRow>;

struct DensityCurve {
  std::string modality_name;
  std::vector<double> grid;
  std::vector<double> density;
  double bandwidth = 0.0;
};

// Fewer than two samples or zero spread; callers fall back to kFallbackBandwidth.
struct DegenerateSamples : std::runtime_error {
  explicit DegenerateSamples(const std::string& msg) : std::runtime_error(msg) {}
};

inline constexpr double kFallbackBandwidth = 0.01;

// h = 0.9 * min(sigma, IQR/1.34) * n^(-1/5); sigma with n-1 denominator,
// quartiles by linear interpolation. Throws DegenerateSamples.
double silverman_bandwidth(const std::vector<double>& samples);

// Interpolated quantile at p in [0,1] (position p*(n-1) in the sorted order).
double quantile(std::vector<double> samples, double p);

// Gaussian-kernel density over a sorted grid.
DensityCurve kde(const std::vector<double>& samples, double bandwidth,
                 const std::vector<double>& grid);

// 512 evenly spaced points over [-0.1, 1.1].
std::vector<double> kde_grid();

// Runs compute_influence_vector per sample of the split (evaluation mode,
// exactly N head passes each); N rows per sample.
InfluenceTable collect_scores(const UNet<float>& model, const CheckpointMeta& meta,
                              const DatasetManifest& manifest, Split split);

// Writes influence_scores.csv, kde.csv (raw-score densities) and summary.csv
// under out_dir, ordered by modality then sample id; byte-deterministic.
void export_violin_data(const InfluenceTable& table, const std::filesystem::path& out_dir);

}  // namespace modlens
