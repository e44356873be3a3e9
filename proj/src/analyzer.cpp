#include "modlens/analyzer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "modlens/errors.hpp"
#include "modlens/influence.hpp"
#include "modlens/trainer.hpp"

namespace modlens {

double quantile(std::vector<double> samples, double p) {
  std::sort(samples.begin(), samples.end());
  const double pos = p * static_cast<double>(samples.size() - 1);
  const std::size_t i = static_cast<std::size_t>(pos);
  if (i + 1 >= samples.size()) return samples.back();
  const double frac = pos - static_cast<double>(i);
  return samples[i] * (1.0 - frac) + samples[i + 1] * frac;
}

double silverman_bandwidth(const std::vector<double>& samples) {
  const std::size_t n = samples.size();
  if (n < 2) throw DegenerateSamples("silverman: need at least 2 samples");
  double mean = 0.0;
  for (const double x : samples) mean += x;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (const double x : samples) ss += (x - mean) * (x - mean);
  const double sigma = std::sqrt(ss / static_cast<double>(n - 1));
  const double iqr = quantile(samples, 0.75) - quantile(samples, 0.25);
  const double spread = std::min(sigma, iqr / 1.34);
  if (!(spread > 0.0)) throw DegenerateSamples("silverman: zero spread");
  return 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
}

DensityCurve kde(const std::vector<double>& samples, double bandwidth,
                 const std::vector<double>& grid) {
  if (samples.empty()) throw RuntimeFailure("kde: no samples");
  if (!(bandwidth > 0.0)) throw RuntimeFailure("kde: bandwidth must be > 0");
  if (!std::is_sorted(grid.begin(), grid.end())) throw RuntimeFailure("kde: grid must be sorted");
  DensityCurve c;
  c.grid = grid;
  c.bandwidth = bandwidth;
  c.density.resize(grid.size());
  const double norm =
      1.0 / (static_cast<double>(samples.size()) * bandwidth * std::sqrt(2.0 * 3.14159265358979323846));
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double sum = 0.0;
    for (const double s : samples) {
      const double t = (grid[g] - s) / bandwidth;
      sum += std::exp(-0.5 * t * t);
    }
    c.density[g] = norm * sum;
  }
  return c;
}

std::vector<double> kde_grid() {
  std::vector<double> g(512);
  for (std::size_t i = 0; i < g.size(); ++i)
    g[i] = -0.1 + 1.2 * static_cast<double>(i) / static_cast<double>(g.size() - 1);
  return g;
}

InfluenceTable collect_scores(const UNet<float>& model, const CheckpointMeta& meta,
                              const DatasetManifest& manifest, Split split) {
  if (model.config().num_modalities == 0 || !model.config().influence_head)
    throw ConfigError("analyze: checkpoint has no influence head (plain model)");
  if (model.config().in_channels != manifest.scheme.total_channels)
    throw ConfigError("analyze: checkpoint expects " +
                      std::to_string(model.config().in_channels) + " channels, dataset has " +
                      std::to_string(manifest.scheme.total_channels));
  if (model.config().num_modalities != manifest.scheme.num_modalities())
    throw ConfigError("analyze: checkpoint modality count does not match the dataset scheme");
  const auto samples = load_split(manifest, split);
  if (samples.empty())
    throw ConfigError("analyze: split '" + split_name(split) + "' is empty");

  const int div = 1 << model.config().depth;
  InfluenceTable table;
  table.reserve(samples.size() * manifest.scheme.groups.size());
  for (const auto& s : samples) {
    const int size = std::min(s.height() - s.height() % div, s.width() - s.width() % div);
    if (size < div)
      throw ConfigError("analyze: sample '" + s.id + "' too small for depth " +
                        std::to_string(model.config().depth));
    const MultimodalSample c =
        crop_at(s, (s.height() - size) / 2, (s.width() - size) / 2, size);
    const InfluenceVector v =
        compute_influence_vector(model, c.image, manifest.scheme, meta.occlusion_value);
    for (int i = 0; i < v.num_modalities(); ++i)
      table.push_back({s.id, v.scheme_names[i], v.raw(0, i), 1.0f - v.raw(0, i)});
  }
  return table;
}

namespace {

std::string fmt9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

void export_violin_data(const InfluenceTable& table, const std::filesystem::path& out_dir) {
  if (table.empty()) throw ConfigError("export: empty influence table");
  std::filesystem::create_directories(out_dir);

  // Modality order = first appearance; rows within a modality by sample id.
  std::vector<std::string> modalities;
  std::map<std::string, std::vector<const InfluenceRow*>> groups;
  for (const auto& row : table) {
    auto [it, fresh] = groups.try_emplace(row.modality);
    if (fresh) modalities.push_back(row.modality);
    it->second.push_back(&row);
  }
  for (auto& [name, rows] : groups)
    std::sort(rows.begin(), rows.end(), [](const InfluenceRow* a, const InfluenceRow* b) {
      return a->sample_id < b->sample_id;
    });

  {
    std::ofstream f(out_dir / "influence_scores.csv");
    if (!f) throw RuntimeFailure("cannot write influence_scores.csv");
    f << "sample_id,modality,raw_score,influence\n";
    for (const auto& m : modalities)
      for (const InfluenceRow* r : groups[m])
        f << r->sample_id << ',' << r->modality << ',' << fmt9(r->raw_score) << ','
          << fmt9(r->influence) << '\n';
    if (!f) throw RuntimeFailure("write failed for influence_scores.csv");
  }

  const std::vector<double> grid = kde_grid();
  {
    std::ofstream f(out_dir / "kde.csv");
    if (!f) throw RuntimeFailure("cannot write kde.csv");
    f << "modality,bandwidth,x,density\n";
    for (const auto& m : modalities) {
      std::vector<double> raw;
      raw.reserve(groups[m].size());
      for (const InfluenceRow* r : groups[m]) raw.push_back(static_cast<double>(r->raw_score));
      double h = kFallbackBandwidth;
      try {
        h = silverman_bandwidth(raw);
      } catch (const DegenerateSamples&) {
      }
      const DensityCurve c = kde(raw, h, grid);
      for (std::size_t g = 0; g < grid.size(); ++g)
        f << m << ',' << fmt9(h) << ',' << fmt9(c.grid[g]) << ',' << fmt9(c.density[g]) << '\n';
    }
    if (!f) throw RuntimeFailure("write failed for kde.csv");
  }

  {
    std::ofstream f(out_dir / "summary.csv");
    if (!f) throw RuntimeFailure("cannot write summary.csv");
    f << "modality,count,mean_raw,mean_influence,median_influence,iqr_influence\n";
    for (const auto& m : modalities) {
      std::vector<double> raw, inf;
      for (const InfluenceRow* r : groups[m]) {
        raw.push_back(static_cast<double>(r->raw_score));
        inf.push_back(static_cast<double>(r->influence));
      }
      double mean_raw = 0.0, mean_inf = 0.0;
      for (std::size_t i = 0; i < raw.size(); ++i) {
        mean_raw += raw[i];
        mean_inf += inf[i];
      }
      mean_raw /= static_cast<double>(raw.size());
      mean_inf /= static_cast<double>(inf.size());
      const double med = quantile(inf, 0.5);
      const double iqr = quantile(inf, 0.75) - quantile(inf, 0.25);
      f << m << ',' << raw.size() << ',' << fmt9(mean_raw) << ',' << fmt9(mean_inf) << ','
        << fmt9(med) << ',' << fmt9(iqr) << '\n';
    }
    if (!f) throw RuntimeFailure("write failed for summary.csv");
  }
}

}  // namespace modlens
