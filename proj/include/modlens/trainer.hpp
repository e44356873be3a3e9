#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "modlens/losses.hpp"
#include "modlens/raster.hpp"
#include "modlens/segnet.hpp"

namespace modlens {

struct TrainConfig {
  int batch_size = 16;
  int crop = 64;
  // Paper-literal cyclical bounds; aggressive. practical() swaps in tamer
  // ones. initial_lr is kept for config fidelity; the schedule governs the
  // actual step sizes.
  double max_lr = 1.0;
  double min_lr = 1e-8;
  double initial_lr = 1e-3;
  int cycle_steps = 0;  // 0: resolved to 4 epochs' worth of batches
  double adam_eps = 1e-8;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  int patience_epochs = 6;
  double influence_loss_weight = 1.0;
  std::uint64_t seed = 0;
  std::string early_stop_metric = "val_iou";  // val_iou | val_f1 | val_loss
  int max_epochs = 40;
  float occlusion_value = 0.0f;

  void validate() const;  // throws ConfigError
  TrainConfig practical() const;  // max_lr 1e-2, min_lr 1e-6
};

struct MetricsRecord {
  double iou = 0.0, accuracy = 0.0, f1 = 0.0;
  long long tp = 0, fp = 0, fn = 0, tn = 0;

  // IoU = TP/(TP+FP+FN), Acc = (TP+TN)/total, F1 = 2TP/(2TP+FP+FN);
  // both-empty masks give IoU = F1 = 1.
  static MetricsRecord from_confusion(long long tp, long long fp, long long fn,
                                      long long tn);
};

// Pixel-exact confusion over two same-sized binary masks.
MetricsRecord compute_metrics(const std::vector<std::uint8_t>& pred_mask,
                              const std::vector<std::uint8_t>& gt_mask);

struct TimingRecord {
  double epoch_s = 0.0;
  double batch_s = 0.0;
  double optimizer_step_s = 0.0;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_iou = 0.0;
  double val_acc = 0.0;
  double val_f1 = 0.0;
  double lr = 0.0;
};

enum class ModelKind { kPlain, kFramework };

ModelKind model_kind_from_name(const std::string& name);
std::string model_kind_name(ModelKind kind);

// Triangular schedule between min_lr and max_lr with period cycle_steps,
// starting at min_lr; peak at half period.
double cyclical_lr(long long step, const TrainConfig& config);

class Adam {
 public:
  Adam(std::vector<ParamRef<float>> params, const TrainConfig& config);
  void step(double lr);

 private:
  std::vector<ParamRef<float>> params_;
  std::vector<std::vector<double>> m_, v_;
  double eps_, beta1_, beta2_;
  long long t_ = 0;
};

struct TrainOutput {
  std::unique_ptr<UNet<float>> model;  // best-epoch parameters
  CheckpointMeta meta;
  std::vector<EpochStats> history;
  int best_epoch = 0;
};

// Full training run: Adam on the composite loss (plain mode: segmentation
// loss only), per-epoch validation, early stopping on early_stop_metric
// after patience_epochs epochs without improvement, best weights retained.
// net_base supplies base_width/depth; channel and modality counts come from
// the manifest scheme and the mode, the seed from config.seed.
TrainOutput train(ModelKind kind, const NetConfig& net_base, const TrainConfig& config,
                  const DatasetManifest& manifest);

// Micro-averaged metrics over a split: confusion counts aggregated across
// all samples, metrics computed once at the end. Threshold 0.5.
MetricsRecord evaluate(UNet<float>& model, const CheckpointMeta& meta,
                       const DatasetManifest& manifest, Split split);

// Wall-clock training cost: `epochs` measured epochs (>= 2) after one
// excluded warm-up epoch; no validation or early stopping.
TimingRecord benchmark_timing(ModelKind kind, const NetConfig& net_base,
                              const TrainConfig& config, const DatasetManifest& manifest,
                              int epochs);

// Columns: epoch,train_loss,val_loss,val_iou,val_acc,val_f1,lr.
void write_history_csv(const std::filesystem::path& path,
                       const std::vector<EpochStats>& history);

// Loads and normalizes every sample of a split (parallel, worker-capped).
std::vector<MultimodalSample> load_split(const DatasetManifest& manifest, Split split);

}  // namespace modlens
