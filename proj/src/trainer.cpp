#include "modlens/trainer.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "modlens/errors.hpp"
#include "modlens/influence.hpp"
#include "modlens/rng.hpp"
#include "modlens/workers.hpp"

namespace modlens {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (crop < 2) throw ConfigError("train: crop must be >= 2");
  if (!(min_lr > 0.0 && min_lr <= initial_lr && initial_lr <= max_lr))
    throw ConfigError("train: need 0 < min_lr <= initial_lr <= max_lr");
  if (cycle_steps < 0) throw ConfigError("train: cycle_steps must be >= 0");
  if (adam_eps <= 0.0) throw ConfigError("train: adam_eps must be > 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ConfigError("train: adam betas must lie in [0, 1)");
  if (patience_epochs < 1) throw ConfigError("train: patience_epochs must be >= 1");
  if (influence_loss_weight < 0.0) throw ConfigError("train: influence_loss_weight must be >= 0");
  if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
  if (early_stop_metric != "val_iou" && early_stop_metric != "val_f1" &&
      early_stop_metric != "val_loss")
    throw ConfigError("train: early_stop_metric must be val_iou, val_f1 or val_loss, got '" +
                      early_stop_metric + "'");
  if (!std::isfinite(occlusion_value)) throw ConfigError("train: occlusion_value must be finite");
}

TrainConfig TrainConfig::practical() const {
  TrainConfig c = *this;
  c.max_lr = 1e-2;
  c.min_lr = 1e-6;
  return c;
}

MetricsRecord MetricsRecord::from_confusion(long long tp, long long fp, long long fn,
                                            long long tn) {
  if (tp < 0 || fp < 0 || fn < 0 || tn < 0)
    throw RuntimeFailure("metrics: negative confusion count");
  const long long total = tp + fp + fn + tn;
  if (total == 0) throw RuntimeFailure("metrics: empty confusion matrix");
  MetricsRecord r;
  r.tp = tp;
  r.fp = fp;
  r.fn = fn;
  r.tn = tn;
  const long long uni = tp + fp + fn;
  r.iou = uni == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(uni);
  r.f1 = uni == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(tp + uni);
  r.accuracy = static_cast<double>(tp + tn) / static_cast<double>(total);
  return r;
}

MetricsRecord compute_metrics(const std::vector<std::uint8_t>& pred_mask,
                              const std::vector<std::uint8_t>& gt_mask) {
  if (pred_mask.size() != gt_mask.size())
    throw RuntimeFailure("metrics: mask sizes differ");
  if (pred_mask.empty()) throw RuntimeFailure("metrics: empty masks");
  long long tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < pred_mask.size(); ++i) {
    if (pred_mask[i] > 1 || gt_mask[i] > 1) throw RuntimeFailure("metrics: non-binary mask");
    if (pred_mask[i] && gt_mask[i]) ++tp;
    else if (pred_mask[i]) ++fp;
    else if (gt_mask[i]) ++fn;
    else ++tn;
  }
  return MetricsRecord::from_confusion(tp, fp, fn, tn);
}

ModelKind model_kind_from_name(const std::string& name) {
  if (name == "plain") return ModelKind::kPlain;
  if (name == "framework") return ModelKind::kFramework;
  throw ConfigError("mode must be 'plain' or 'framework', got '" + name + "'");
}

std::string model_kind_name(ModelKind kind) {
  return kind == ModelKind::kPlain ? "plain" : "framework";
}

double cyclical_lr(long long step, const TrainConfig& config) {
  if (config.cycle_steps < 1) throw ConfigError("cyclical lr: cycle_steps must be resolved (> 0)");
  if (step < 0) throw ConfigError("cyclical lr: negative step");
  const double frac =
      static_cast<double>(step % config.cycle_steps) / static_cast<double>(config.cycle_steps);
  return config.min_lr + (config.max_lr - config.min_lr) * (1.0 - std::fabs(2.0 * frac - 1.0));
}

Adam::Adam(std::vector<ParamRef<float>> params, const TrainConfig& config)
    : params_(std::move(params)),
      eps_(config.adam_eps),
      beta1_(config.adam_beta1),
      beta2_(config.adam_beta2) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i].value->size(), 0.0);
    v_[i].assign(params_[i].value->size(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    float* w = params_[i].value->data();
    const float* g = params_[i].grad->data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    const std::size_t n = params_[i].value->size();
    for (std::size_t j = 0; j < n; ++j) {
      const double gj = static_cast<double>(g[j]);
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
      const double mh = m[j] / bc1;
      const double vh = v[j] / bc2;
      w[j] = static_cast<float>(static_cast<double>(w[j]) - lr * mh / (std::sqrt(vh) + eps_));
    }
  }
}

std::vector<MultimodalSample> load_split(const DatasetManifest& manifest, Split split) {
  const std::vector<std::string> ids = manifest.ids(split);
  std::vector<MultimodalSample> out(ids.size());
  const int cap = worker_cap();
  bool failed = false;
  std::string error;
#pragma omp parallel for num_threads(cap) schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(ids.size()); ++i) {
    try {
      out[i] = normalize(load_sample(manifest, ids[i]), manifest.normalization_stats);
    } catch (const std::exception& e) {
#pragma omp critical
      if (!failed) {
        failed = true;
        error = e.what();
      }
    }
  }
  if (failed) throw RuntimeFailure("loading split '" + split_name(split) + "': " + error);
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t s = seed ^ (salt * 0x9e3779b97f4a7c15ull);
  splitmix64(s);
  return s;
}

void fisher_yates(std::vector<int>& v, std::uint64_t& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = splitmix64(rng) % i;
    std::swap(v[i - 1], v[j]);
  }
}

struct Batch {
  Tensor4<float> images;
  std::vector<std::uint8_t> masks;
};

Batch make_batch(const std::vector<MultimodalSample>& samples, const std::vector<int>& order,
                 std::size_t lo, std::size_t hi, int crop, std::uint64_t& rng,
                 bool random_offsets) {
  const int b_count = static_cast<int>(hi - lo);
  Batch b;
  for (int k = 0; k < b_count; ++k) {
    const MultimodalSample& s = samples[order[lo + k]];
    MultimodalSample c =
        random_offsets ? random_crop(s, crop, rng)
                       : crop_at(s, (s.height() - crop) / 2, (s.width() - crop) / 2, crop);
    if (k == 0) {
      b.images.resize(b_count, c.channels(), crop, crop);
      b.masks.resize(static_cast<std::size_t>(b_count) * c.mask.size());
    }
    std::copy_n(c.image.data.data(), c.image.size(),
                b.images.data.data() + static_cast<std::size_t>(k) * c.image.size());
    std::copy_n(c.mask.data(), c.mask.size(),
                b.masks.data() + static_cast<std::size_t>(k) * c.mask.size());
  }
  return b;
}

void accumulate_confusion(const Tensor4<float>& prob, const std::vector<std::uint8_t>& mask,
                          long long& tp, long long& fp, long long& fn, long long& tn) {
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const bool p = prob.data[i] > 0.5f;
    const bool y = mask[i] != 0;
    if (p && y) ++tp;
    else if (p) ++fp;
    else if (y) ++fn;
    else ++tn;
  }
}

double signed_metric(const EpochStats& st, const std::string& name) {
  if (name == "val_iou") return st.val_iou;
  if (name == "val_f1") return st.val_f1;
  return -st.val_loss;
}

struct ValResult {
  double loss = 0.0;
  MetricsRecord metrics;
};

ValResult run_validation(UNet<float>& model, const std::vector<MultimodalSample>& samples,
                         const TrainConfig& cfg, const ModalityScheme& scheme, bool framework) {
  std::vector<int> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::uint64_t rng = 0;
  long long tp = 0, fp = 0, fn = 0, tn = 0;
  double loss_sum = 0.0;
  std::size_t pixels = 0;
  for (std::size_t lo = 0; lo < samples.size(); lo += cfg.batch_size) {
    const std::size_t hi = std::min(samples.size(), lo + cfg.batch_size);
    Batch b = make_batch(samples, order, lo, hi, cfg.crop, rng, false);
    Tensor4<float> prob;
    if (framework) {
      FrameworkPass<float> pass(model, b.images, nullptr, scheme, cfg.occlusion_value);
      prob = pass.probabilities();
    } else {
      prob = model.predict(b.images, nullptr);
    }
    loss_sum += bce_loss(prob, b.masks) * static_cast<double>(b.masks.size());
    pixels += b.masks.size();
    accumulate_confusion(prob, b.masks, tp, fp, fn, tn);
  }
  ValResult v;
  v.loss = loss_sum / static_cast<double>(pixels);
  v.metrics = MetricsRecord::from_confusion(tp, fp, fn, tn);
  return v;
}

struct RunOptions {
  bool validate = true;
  bool early_stop = true;
  int epochs = 0;  // 0: config.max_epochs
  TimingRecord* timing = nullptr;
};

TrainOutput train_impl(ModelKind kind, const NetConfig& net_base, const TrainConfig& cfg,
                       const DatasetManifest& manifest, const RunOptions& opt) {
  cfg.validate();
  manifest.scheme.validate();

  NetConfig nc = net_base;
  nc.in_channels = manifest.scheme.total_channels;
  nc.seed = cfg.seed;
  if (kind == ModelKind::kFramework) {
    nc.num_modalities = manifest.scheme.num_modalities();
    nc.influence_head = true;
  } else {
    nc.num_modalities = 0;
    nc.influence_head = false;
  }
  nc.validate();
  if (cfg.crop % (1 << nc.depth) != 0)
    throw ConfigError("train: crop " + std::to_string(cfg.crop) +
                      " is not divisible by 2^depth = " + std::to_string(1 << nc.depth));

  const auto train_samples = load_split(manifest, Split::kTrain);
  if (train_samples.empty()) throw ConfigError("train: train split is empty");
  std::vector<MultimodalSample> val_samples;
  if (opt.validate) {
    val_samples = load_split(manifest, Split::kVal);
    if (val_samples.empty()) throw ConfigError("train: val split is empty");
  }

  auto model = std::make_unique<UNet<float>>(nc);
  Adam adam(model->params(), cfg);

  const std::size_t bsz = static_cast<std::size_t>(cfg.batch_size);
  const int batches_per_epoch = static_cast<int>((train_samples.size() + bsz - 1) / bsz);
  TrainConfig sched = cfg;
  if (sched.cycle_steps == 0) sched.cycle_steps = 4 * batches_per_epoch;

  const bool framework = kind == ModelKind::kFramework;
  std::vector<EpochStats> history;
  UNet<float> best_model = *model;
  double best = 0.0;
  int best_epoch = 0;
  long long gstep = 0;
  const int max_epochs = opt.epochs > 0 ? opt.epochs : cfg.max_epochs;
  std::vector<double> epoch_s, batch_s, step_s;

  for (int epoch = 1; epoch <= max_epochs; ++epoch) {
    const auto t_epoch = Clock::now();
    std::uint64_t shuffle_rng = mix_seed(cfg.seed, 2 * static_cast<std::uint64_t>(epoch));
    std::uint64_t crop_rng = mix_seed(cfg.seed, 2 * static_cast<std::uint64_t>(epoch) + 1);
    std::vector<int> order(train_samples.size());
    std::iota(order.begin(), order.end(), 0);
    fisher_yates(order, shuffle_rng);

    double loss_sum = 0.0;
    int batch_count = 0;
    double lr = sched.min_lr;
    for (std::size_t lo = 0; lo < order.size(); lo += bsz) {
      const auto t_batch = Clock::now();
      const std::size_t hi = std::min(order.size(), lo + bsz);
      Batch b = make_batch(train_samples, order, lo, hi, cfg.crop, crop_rng, true);
      lr = cyclical_lr(gstep, sched);
      double loss = 0.0;
      model->zero_grads();
      Tensor4<float> dprob;
      if (framework) {
        FrameworkPass<float> pass(*model, b.images, &b.masks, manifest.scheme,
                                  cfg.occlusion_value);
        const double seg = bce_loss(pass.probabilities(), b.masks);
        loss = composite_loss(seg, pass.scores(), pass.targets(), cfg.influence_loss_weight);
        bce_loss_grad(pass.probabilities(), b.masks, dprob);
        pass.backward(dprob, cfg.influence_loss_weight);
      } else {
        ForwardCache<float> fc;
        model->forward(b.images, nullptr, fc);
        loss = bce_loss(fc.dec.prob, b.masks);
        bce_loss_grad(fc.dec.prob, b.masks, dprob);
        model->backward(fc, dprob);
      }
      if (!std::isfinite(loss))
        throw RuntimeFailure("train: loss diverged at epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(batch_count + 1));
      const auto t_step = Clock::now();
      adam.step(lr);
      if (opt.timing && epoch > 1) {
        step_s.push_back(seconds_since(t_step));
        batch_s.push_back(seconds_since(t_batch));
      }
      loss_sum += loss;
      ++batch_count;
      ++gstep;
    }

    EpochStats st;
    st.epoch = epoch;
    st.train_loss = loss_sum / batch_count;
    st.lr = lr;
    if (opt.validate) {
      const ValResult v =
          run_validation(*model, val_samples, cfg, manifest.scheme, framework);
      st.val_loss = v.loss;
      st.val_iou = v.metrics.iou;
      st.val_acc = v.metrics.accuracy;
      st.val_f1 = v.metrics.f1;
    }
    history.push_back(st);
    if (opt.timing && epoch > 1) epoch_s.push_back(seconds_since(t_epoch));

    if (opt.validate) {
      const double m = signed_metric(st, cfg.early_stop_metric);
      if (best_epoch == 0 || m > best) {
        best = m;
        best_epoch = epoch;
        best_model = *model;
      }
      if (opt.early_stop && epoch - best_epoch >= cfg.patience_epochs) break;
    } else {
      best_epoch = epoch;
    }
  }

  if (opt.validate) *model = best_model;
  if (opt.timing) {
    auto mean = [](const std::vector<double>& xs) {
      return xs.empty() ? 0.0 : std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
    };
    opt.timing->epoch_s = mean(epoch_s);
    opt.timing->batch_s = mean(batch_s);
    opt.timing->optimizer_step_s = mean(step_s);
  }

  TrainOutput out;
  out.model = std::move(model);
  out.meta.config = nc;
  out.meta.occlusion_value = cfg.occlusion_value;
  out.history = std::move(history);
  out.best_epoch = best_epoch;
  return out;
}

}  // namespace

TrainOutput train(ModelKind kind, const NetConfig& net_base, const TrainConfig& config,
                  const DatasetManifest& manifest) {
  return train_impl(kind, net_base, config, manifest, RunOptions{});
}

MetricsRecord evaluate(UNet<float>& model, const CheckpointMeta& meta,
                       const DatasetManifest& manifest, Split split) {
  if (model.config().in_channels != manifest.scheme.total_channels)
    throw ConfigError("evaluate: checkpoint expects " +
                      std::to_string(model.config().in_channels) + " channels, dataset has " +
                      std::to_string(manifest.scheme.total_channels));
  const bool framework = model.config().num_modalities > 0;
  if (framework && model.config().num_modalities != manifest.scheme.num_modalities())
    throw ConfigError("evaluate: checkpoint modality count does not match the dataset scheme");
  const auto samples = load_split(manifest, split);
  if (samples.empty()) throw ConfigError("evaluate: split '" + split_name(split) + "' is empty");

  const int div = 1 << model.config().depth;
  long long tp = 0, fp = 0, fn = 0, tn = 0;
  for (const auto& s : samples) {
    const int size = std::min(s.height() - s.height() % div, s.width() - s.width() % div);
    if (size < div)
      throw ConfigError("evaluate: sample '" + s.id + "' too small for depth " +
                        std::to_string(model.config().depth));
    const MultimodalSample c =
        crop_at(s, (s.height() - size) / 2, (s.width() - size) / 2, size);
    Tensor4<float> prob;
    if (framework) {
      FrameworkPass<float> pass(model, c.image, nullptr, manifest.scheme,
                                meta.occlusion_value);
      prob = pass.probabilities();
    } else {
      prob = model.predict(c.image, nullptr);
    }
    accumulate_confusion(prob, c.mask, tp, fp, fn, tn);
  }
  return MetricsRecord::from_confusion(tp, fp, fn, tn);
}

TimingRecord benchmark_timing(ModelKind kind, const NetConfig& net_base,
                              const TrainConfig& config, const DatasetManifest& manifest,
                              int epochs) {
  if (epochs < 2) throw ConfigError("benchmark: need at least 2 measured epochs");
  TimingRecord rec;
  RunOptions opt;
  opt.validate = false;
  opt.early_stop = false;
  opt.epochs = epochs + 1;  // one warm-up epoch, excluded from the means
  opt.timing = &rec;
  train_impl(kind, net_base, config, manifest, opt);
  return rec;
}

void write_history_csv(const std::filesystem::path& path,
                       const std::vector<EpochStats>& history) {
  std::ofstream f(path);
  if (!f) throw RuntimeFailure("cannot open '" + path.string() + "' for writing");
  f << "epoch,train_loss,val_loss,val_iou,val_acc,val_f1,lr\n";
  char buf[256];
  for (const auto& st : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", st.epoch,
                  st.train_loss, st.val_loss, st.val_iou, st.val_acc, st.val_f1, st.lr);
    f << buf;
  }
  if (!f) throw RuntimeFailure("write failed for '" + path.string() + "'");
}

}  // namespace modlens
