#pragma once

#include <string>
#include <vector>

#include "modlens/occluder.hpp"
#include "modlens/raster.hpp"
#include "modlens/segnet.hpp"
#include "modlens/tensor.hpp"

namespace modlens {

// Per-modality scores for a batch. raw_scores follow the head's convention:
// the higher the score, the lower the influence of the occluded modality.
struct InfluenceVector {
  std::vector<std::string> scheme_names;  // N, scheme order
  int batch = 0;
  std::vector<float> raw_scores;  // batch * N, b-major

  int num_modalities() const { return static_cast<int>(scheme_names.size()); }
  float raw(int b, int i) const {
    return raw_scores[static_cast<std::size_t>(b) * scheme_names.size() + i];
  }
  // 1 - raw_scores, element-wise; higher = more influential.
  std::vector<float> reported_influence() const;
};

// Occludes each modality in scheme order and runs encoder + influence head
// once per modality: exactly N encoder passes and N head passes.
template <typename T>
InfluenceVector compute_influence_vector(const UNet<T>& model, const Tensor4<T>& image,
                                         const ModalityScheme& scheme,
                                         float occlusion_value = 0.0f);

// t = exp(-max(0, loss_occluded - loss_full)): 1 when occlusion does not
// hurt (uninfluential modality, high raw score), -> 0 for large degradation.
double influence_target(double loss_occluded, double loss_full);

// One full framework forward over a batch:
//   (1) N occluded encoder+head passes produce the raw scores;
//   (2) training mode only (mask given): decoder probe passes under a neutral
//       0.5 injection give loss_occluded_i per modality plus loss_full on the
//       unoccluded input, turned into score targets via influence_target;
//   (3) final decoder pass on the unoccluded input with the actual scores
//       injected (detached) yields the segmentation output.
// Decoder-bearing passes in training mode: N probes + 1 full probe + 1 final.
template <typename T>
class FrameworkPass {
 public:
  FrameworkPass(UNet<T>& model, const Tensor4<T>& image,
                const std::vector<std::uint8_t>* mask, const ModalityScheme& scheme,
                float occlusion_value);

  bool training() const { return training_; }
  const Tensor4<T>& probabilities() const { return full_.dec.prob; }
  const std::vector<T>& scores() const { return scores_; }    // B*N
  const std::vector<T>& targets() const { return targets_; }  // B*N, training only
  const std::vector<double>& occluded_losses() const { return loss_occluded_; }
  const std::vector<double>& full_losses() const { return loss_full_; }
  InfluenceVector influence() const;

  // Backprop of composite loss: dprob through the final pass (injected
  // scores stay detached) plus the score-regression term
  // weight * mean((score - target)^2) through the N occluded passes.
  void backward(const Tensor4<T>& dprob, double influence_weight);

 private:
  UNet<T>* model_;
  std::vector<std::string> names_;
  int batch_ = 0;
  int n_ = 0;
  bool training_ = false;
  std::vector<EncodeCache<T>> occ_enc_;
  std::vector<HeadCache<T>> occ_head_;
  ForwardCache<T> full_;
  std::vector<T> scores_, targets_;
  std::vector<double> loss_occluded_;  // B*N
  std::vector<double> loss_full_;      // B
};

}  // namespace modlens
