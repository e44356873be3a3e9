#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "modlens/tensor.hpp"

namespace modlens {

struct NetConfig {
  int in_channels = 14;
  int base_width = 32;
  int depth = 4;           // encoder stages
  int num_modalities = 0;  // N; 0 = plain mode, no injection slot
  bool influence_head = false;
  std::uint64_t seed = 0;

  bool plain() const { return num_modalities == 0 && !influence_head; }
  void validate() const;  // throws ConfigError
};

inline constexpr double kLeakySlope = 0.01;

// The head logit passes through a soft clamp before the sigmoid: identity
// inside +-kHeadLinearRange, asymptotic to +-kHeadClampLimit outside. Keeps
// the sigmoid away from float saturation so the score gradient never hits
// exact zero; without it the early-training regime (all targets near 1)
// drives the logit past float precision and the head can never recover.
inline constexpr double kHeadLinearRange = 4.0;
inline constexpr double kHeadClampLimit = 8.0;

template <typename T>
struct ConvLayer {
  Tensor4<T> w, gw;  // [out_c][in_c][k][k]
  std::vector<T> b, gb;
};

template <typename T>
struct DenseLayer {  // fan_in -> 1
  std::vector<T> w, gw;
  std::vector<T> b, gb;  // single element each
};

// Named view of one parameter tensor and its gradient buffer.
template <typename T>
struct ParamRef {
  std::string name;
  std::vector<T>* value;
  std::vector<T>* grad;
};

// Network traversals, counted once per call (a batch is one pass).
struct PassCounters {
  long long encoder = 0;
  long long decoder = 0;
  long long head = 0;
  void reset() { encoder = decoder = head = 0; }
};

template <typename T>
struct ConvBlockCache {  // two same-padded 3x3 convs with LeakyReLU
  Tensor4<T> in, a1, h1, a2, h2;
};

template <typename T>
struct EncoderStageCache {
  ConvBlockCache<T> block;  // block.h2 is the skip tensor
  Tensor4<T> pooled;
  std::vector<std::uint8_t> argmax;
};

template <typename T>
struct EncodeCache {
  std::vector<EncoderStageCache<T>> stages;
  ConvBlockCache<T> bottleneck;  // bottleneck.h2: [B][base*2^depth][H/2^d][W/2^d]
};

template <typename T>
struct DecoderStageCache {
  Tensor4<T> up;  // upsampled previous features
  ConvBlockCache<T> block;
};

template <typename T>
struct DecodeCache {
  std::vector<DecoderStageCache<T>> stages;  // index s = depth-1 .. 0 stored reversed
  Tensor4<T> logit, prob;                    // [B][1][H][W]
};

template <typename T>
struct HeadCache {
  std::vector<T> gap;  // B * bottleneck_width, b-major
  std::vector<T> z;    // raw logit, before the soft clamp; length B
  std::vector<T> score;
};

template <typename T>
struct ForwardCache {
  EncodeCache<T> enc;
  DecodeCache<T> dec;
};

// Appends num_modalities constant planes to features, plane i filled with
// influence[b*N + i] (the broadcast "up-sampling" of the score vector).
// Throws on NaN scores or size mismatch.
template <typename T>
Tensor4<T> inject_influence(const Tensor4<T>& features, const std::vector<T>& influence,
                            int num_modalities);

// UNet encoder-decoder with an optional bottleneck influence head and an
// optional injection slot for N constant score planes at the input of the
// final decoder block. Parameters initialize deterministically from
// config.seed (platform-stable RNG).
template <typename T>
class UNet {
 public:
  explicit UNet(const NetConfig& config);

  const NetConfig& config() const { return config_; }
  std::size_t parameter_count() const;
  std::vector<ParamRef<T>> params();
  void zero_grads();

  // Encoder + bottleneck. Input spatial dims must be divisible by 2^depth.
  void encode(const Tensor4<T>& image, EncodeCache<T>& cache) const;

  // Decoder + output head. influence must be null iff the model is plain;
  // otherwise it holds B*N scores, b-major. Probabilities land in cache.prob.
  void decode(const EncodeCache<T>& enc, const std::vector<T>* influence,
              DecodeCache<T>& cache) const;

  // Influence head on the bottleneck features: global average pool, dense
  // layer, soft-clamped logit, sigmoid. Returns one score per batch element,
  // each in [sigmoid(-kHeadClampLimit), sigmoid(kHeadClampLimit)]. Throws if
  // the model has no head.
  std::vector<T> head(const EncodeCache<T>& enc, HeadCache<T>& cache) const;

  // encode + decode; returns cache.dec.prob.
  const Tensor4<T>& forward(const Tensor4<T>& image, const std::vector<T>* influence,
                            ForwardCache<T>& cache) const;

  // Convenience forward without keeping the cache.
  Tensor4<T> predict(const Tensor4<T>& image, const std::vector<T>* influence) const;

  // Backprop of the segmentation path. dprob is dL/d(probabilities).
  // Accumulates parameter gradients; injected score planes receive no
  // gradient (scores enter detached).
  void backward(const ForwardCache<T>& cache, const Tensor4<T>& dprob);

  // Backprop of the head path: dscore is dL/d(score), length B. Accumulates
  // gradients through the dense layer, bottleneck and encoder of `enc`.
  void backward_head(const EncodeCache<T>& enc, const HeadCache<T>& hc,
                     const std::vector<T>& dscore);

  PassCounters& counters() const { return counters_; }

  int bottleneck_width() const { return config_.base_width << config_.depth; }
  int stage_width(int s) const { return config_.base_width << s; }

 private:
  void conv_block_forward(const ConvLayer<T>& c1, const ConvLayer<T>& c2,
                          const Tensor4<T>& in, ConvBlockCache<T>& cache) const;
  void conv_block_backward(ConvLayer<T>& c1, ConvLayer<T>& c2,
                           const ConvBlockCache<T>& cache, const Tensor4<T>& dout,
                           Tensor4<T>& din);

  NetConfig config_;
  std::vector<ConvLayer<T>> enc1_, enc2_;  // per stage: first and second conv
  ConvLayer<T> bott1_, bott2_;
  std::vector<ConvLayer<T>> dec1_, dec2_;  // index s (0 = final block)
  ConvLayer<T> out_;                       // 1x1 projection to 1 logit channel
  DenseLayer<T> head_;
  mutable PassCounters counters_;
};

// Checkpoint: magic + version + JSON header (net config, occlusion value,
// parameter directory) + float32 little-endian blobs.
struct CheckpointMeta {
  NetConfig config;
  float occlusion_value = 0.0f;
};

void save_checkpoint(UNet<float>& model, const CheckpointMeta& meta,
                     const std::filesystem::path& path);

struct LoadedCheckpoint {
  std::unique_ptr<UNet<float>> model;
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace modlens
