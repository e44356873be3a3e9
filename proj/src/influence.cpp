#include "modlens/influence.hpp"

#include <cmath>

#include "modlens/errors.hpp"
#include "modlens/losses.hpp"

namespace modlens {

std::vector<float> InfluenceVector::reported_influence() const {
  std::vector<float> out(raw_scores.size());
  for (std::size_t i = 0; i < raw_scores.size(); ++i) out[i] = 1.0f - raw_scores[i];
  return out;
}

template <typename T>
InfluenceVector compute_influence_vector(const UNet<T>& model, const Tensor4<T>& image,
                                         const ModalityScheme& scheme,
                                         float occlusion_value) {
  if (image.c != scheme.total_channels)
    throw ConfigError("influence: image has " + std::to_string(image.c) +
                      " channels but the scheme covers " +
                      std::to_string(scheme.total_channels));
  const auto plans = occlusion_sequence(scheme, occlusion_value);
  InfluenceVector out;
  out.batch = image.n;
  out.raw_scores.resize(static_cast<std::size_t>(image.n) * plans.size());
  for (std::size_t i = 0; i < plans.size(); ++i) {
    out.scheme_names.push_back(plans[i].group_name);
    const Tensor4<T> occluded = occlude(image, plans[i]);
    EncodeCache<T> enc;
    HeadCache<T> hc;
    model.encode(occluded, enc);
    const std::vector<T> score = model.head(enc, hc);
    for (int b = 0; b < image.n; ++b)
      out.raw_scores[static_cast<std::size_t>(b) * plans.size() + i] =
          static_cast<float>(score[b]);
  }
  return out;
}

double influence_target(double loss_occluded, double loss_full) {
  if (std::isnan(loss_occluded) || std::isnan(loss_full))
    throw RuntimeFailure("influence target: NaN loss");
  if (loss_occluded < 0.0 || loss_full < 0.0)
    throw RuntimeFailure("influence target: negative loss");
  return std::exp(-std::max(0.0, loss_occluded - loss_full));
}

template <typename T>
FrameworkPass<T>::FrameworkPass(UNet<T>& model, const Tensor4<T>& image,
                                const std::vector<std::uint8_t>* mask,
                                const ModalityScheme& scheme, float occlusion_value)
    : model_(&model) {
  if (model.config().num_modalities == 0 || !model.config().influence_head)
    throw ConfigError("framework forward requires a model with an influence head");
  if (model.config().num_modalities != scheme.num_modalities())
    throw ConfigError("framework forward: model expects " +
                      std::to_string(model.config().num_modalities) +
                      " modalities, scheme has " + std::to_string(scheme.num_modalities()));
  if (image.c != scheme.total_channels)
    throw ConfigError("framework forward: image channels do not match the scheme");

  batch_ = image.n;
  n_ = scheme.num_modalities();
  training_ = mask != nullptr;
  const auto plans = occlusion_sequence(scheme, occlusion_value);
  for (const auto& p : plans) names_.push_back(p.group_name);

  // (1) scores from N occluded encoder+head passes (caches kept for backward)
  occ_enc_.resize(n_);
  occ_head_.resize(n_);
  scores_.resize(static_cast<std::size_t>(batch_) * n_);
  for (int i = 0; i < n_; ++i) {
    const Tensor4<T> occluded = occlude(image, plans[i]);
    model.encode(occluded, occ_enc_[i]);
    const std::vector<T> s = model.head(occ_enc_[i], occ_head_[i]);
    for (int b = 0; b < batch_; ++b) scores_[static_cast<std::size_t>(b) * n_ + i] = s[b];
  }

  model.encode(image, full_.enc);

  if (training_) {
    // (2) probe losses under a neutral injection
    const std::vector<T> neutral(static_cast<std::size_t>(batch_) * n_, T(0.5));
    DecodeCache<T> probe;
    model.decode(full_.enc, &neutral, probe);
    loss_full_ = bce_per_sample(probe.prob, *mask);
    loss_occluded_.resize(static_cast<std::size_t>(batch_) * n_);
    targets_.resize(scores_.size());
    for (int i = 0; i < n_; ++i) {
      model.decode(occ_enc_[i], &neutral, probe);
      const std::vector<double> li = bce_per_sample(probe.prob, *mask);
      for (int b = 0; b < batch_; ++b) {
        const std::size_t k = static_cast<std::size_t>(b) * n_ + i;
        loss_occluded_[k] = li[b];
        targets_[k] = static_cast<T>(influence_target(li[b], loss_full_[b]));
      }
    }
  }

  // (3) final pass with the actual scores injected; they enter as constant
  // planes, so the segmentation gradient cannot reach the score passes.
  model.decode(full_.enc, &scores_, full_.dec);
}

template <typename T>
InfluenceVector FrameworkPass<T>::influence() const {
  InfluenceVector out;
  out.scheme_names = names_;
  out.batch = batch_;
  out.raw_scores.assign(scores_.begin(), scores_.end());
  return out;
}

template <typename T>
void FrameworkPass<T>::backward(const Tensor4<T>& dprob, double influence_weight) {
  model_->backward(full_, dprob);
  if (!training_ || influence_weight == 0.0) return;
  const double inv = 2.0 * influence_weight / static_cast<double>(scores_.size());
  std::vector<T> dscore(batch_);
  for (int i = 0; i < n_; ++i) {
    for (int b = 0; b < batch_; ++b) {
      const std::size_t k = static_cast<std::size_t>(b) * n_ + i;
      dscore[b] = static_cast<T>(inv * (static_cast<double>(scores_[k]) -
                                        static_cast<double>(targets_[k])));
    }
    model_->backward_head(occ_enc_[i], occ_head_[i], dscore);
  }
}

template InfluenceVector compute_influence_vector(const UNet<float>&, const Tensor4<float>&,
                                                  const ModalityScheme&, float);
template InfluenceVector compute_influence_vector(const UNet<double>&, const Tensor4<double>&,
                                                  const ModalityScheme&, float);
template class FrameworkPass<float>;
template class FrameworkPass<double>;

}  // namespace modlens
