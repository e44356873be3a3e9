#include "modlens/segnet.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "modlens/errors.hpp"
#include "modlens/kernels.hpp"
#include "modlens/rng.hpp"

namespace modlens {

using json = nlohmann::ordered_json;

namespace {

template <typename T>
T head_squash(T z) {
  const T a = static_cast<T>(kHeadLinearRange);
  const T r = static_cast<T>(kHeadClampLimit - kHeadLinearRange);
  const T m = std::abs(z);
  if (m <= a) return z;
  const T out = a + r * std::tanh((m - a) / r);
  return z < T(0) ? -out : out;
}

template <typename T>
T head_squash_grad(T z) {
  const T a = static_cast<T>(kHeadLinearRange);
  const T r = static_cast<T>(kHeadClampLimit - kHeadLinearRange);
  const T m = std::abs(z);
  if (m <= a) return T(1);
  const T t = std::tanh((m - a) / r);
  return T(1) - t * t;
}

}  // namespace

void NetConfig::validate() const {
  if (in_channels < 1) throw ConfigError("net: in_channels must be >= 1");
  if (base_width < 1) throw ConfigError("net: base_width must be >= 1");
  if (depth < 2) throw ConfigError("net: depth must be >= 2");
  if (num_modalities < 0) throw ConfigError("net: num_modalities must be >= 0");
  if (num_modalities > 0 && !influence_head)
    throw ConfigError("net: score injection (num_modalities > 0) requires influence_head");
  if (num_modalities == 0 && influence_head)
    throw ConfigError("net: influence_head requires num_modalities >= 1");
}

namespace {

template <typename T>
void init_conv(ConvLayer<T>& l, int oc, int ic, int k, double scale, std::uint64_t& rng) {
  l.w.resize(oc, ic, k, k);
  l.gw.resize(oc, ic, k, k);
  l.b.assign(oc, T(0));
  l.gb.assign(oc, T(0));
  const double std_dev = std::sqrt(scale / (static_cast<double>(ic) * k * k));
  for (auto& v : l.w.data) v = static_cast<T>(std_dev * rng_normal(rng));
}

template <typename T>
void concat_channels(const Tensor4<T>& a, const Tensor4<T>& b, Tensor4<T>& out) {
  out.resize(a.n, a.c + b.c, a.h, a.w);
  for (int bi = 0; bi < a.n; ++bi) {
    for (int c = 0; c < a.c; ++c)
      std::copy_n(a.plane(bi, c), a.plane_size(), out.plane(bi, c));
    for (int c = 0; c < b.c; ++c)
      std::copy_n(b.plane(bi, c), b.plane_size(), out.plane(bi, a.c + c));
  }
}

}  // namespace

template <typename T>
Tensor4<T> inject_influence(const Tensor4<T>& features, const std::vector<T>& influence,
                            int num_modalities) {
  if (num_modalities < 1) throw ConfigError("inject_influence: need at least one modality");
  if (influence.size() != static_cast<std::size_t>(features.n) * num_modalities)
    throw ConfigError("inject_influence: got " + std::to_string(influence.size()) +
                      " scores, expected " + std::to_string(features.n) + "x" +
                      std::to_string(num_modalities));
  for (const T s : influence)
    if (std::isnan(static_cast<double>(s)))
      throw RuntimeFailure("inject_influence: NaN influence score");
  Tensor4<T> out(features.n, features.c + num_modalities, features.h, features.w);
  for (int b = 0; b < features.n; ++b) {
    for (int c = 0; c < features.c; ++c)
      std::copy_n(features.plane(b, c), features.plane_size(), out.plane(b, c));
    for (int i = 0; i < num_modalities; ++i)
      std::fill_n(out.plane(b, features.c + i), out.plane_size(),
                  influence[static_cast<std::size_t>(b) * num_modalities + i]);
  }
  return out;
}

template <typename T>
UNet<T>::UNet(const NetConfig& config) : config_(config) {
  config_.validate();
  const int depth = config_.depth;
  const int N = config_.num_modalities;
  std::uint64_t rng = config_.seed * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull;

  enc1_.resize(depth);
  enc2_.resize(depth);
  for (int s = 0; s < depth; ++s) {
    const int in_c = s == 0 ? config_.in_channels : stage_width(s - 1);
    init_conv(enc1_[s], stage_width(s), in_c, 3, 2.0, rng);
    init_conv(enc2_[s], stage_width(s), stage_width(s), 3, 2.0, rng);
  }
  init_conv(bott1_, bottleneck_width(), stage_width(depth - 1), 3, 2.0, rng);
  init_conv(bott2_, bottleneck_width(), bottleneck_width(), 3, 2.0, rng);

  dec1_.resize(depth);
  dec2_.resize(depth);
  for (int s = depth - 1; s >= 0; --s) {
    const int up_c = s + 1 == depth ? bottleneck_width() : stage_width(s + 1);
    const int in_c = up_c + stage_width(s) + (s == 0 ? N : 0);
    init_conv(dec1_[s], stage_width(s), in_c, 3, 2.0, rng);
    init_conv(dec2_[s], stage_width(s), stage_width(s), 3, 2.0, rng);
  }
  init_conv(out_, 1, stage_width(0), 1, 1.0, rng);

  if (config_.influence_head) {
    const int wb = bottleneck_width();
    head_.w.resize(wb);
    head_.gw.assign(wb, T(0));
    head_.b.assign(1, T(0));
    head_.gb.assign(1, T(0));
    const double std_dev = std::sqrt(1.0 / wb);
    for (auto& v : head_.w) v = static_cast<T>(std_dev * rng_normal(rng));
  }
}

template <typename T>
std::vector<ParamRef<T>> UNet<T>::params() {
  std::vector<ParamRef<T>> out;
  auto add_conv = [&out](const std::string& name, ConvLayer<T>& l) {
    out.push_back({name + ".w", &l.w.data, &l.gw.data});
    out.push_back({name + ".b", &l.b, &l.gb});
  };
  for (int s = 0; s < config_.depth; ++s) {
    add_conv("enc" + std::to_string(s) + ".conv1", enc1_[s]);
    add_conv("enc" + std::to_string(s) + ".conv2", enc2_[s]);
  }
  add_conv("bottleneck.conv1", bott1_);
  add_conv("bottleneck.conv2", bott2_);
  for (int s = config_.depth - 1; s >= 0; --s) {
    add_conv("dec" + std::to_string(s) + ".conv1", dec1_[s]);
    add_conv("dec" + std::to_string(s) + ".conv2", dec2_[s]);
  }
  add_conv("out.conv", out_);
  if (config_.influence_head) {
    out.push_back({"head.dense.w", &head_.w, &head_.gw});
    out.push_back({"head.dense.b", &head_.b, &head_.gb});
  }
  return out;
}

template <typename T>
std::size_t UNet<T>::parameter_count() const {
  std::size_t n = 0;
  auto count_conv = [&n](const ConvLayer<T>& l) { n += l.w.size() + l.b.size(); };
  for (int s = 0; s < config_.depth; ++s) {
    count_conv(enc1_[s]);
    count_conv(enc2_[s]);
  }
  count_conv(bott1_);
  count_conv(bott2_);
  for (int s = 0; s < config_.depth; ++s) {
    count_conv(dec1_[s]);
    count_conv(dec2_[s]);
  }
  count_conv(out_);
  if (config_.influence_head) n += head_.w.size() + head_.b.size();
  return n;
}

template <typename T>
void UNet<T>::zero_grads() {
  for (auto& p : params()) std::fill(p.grad->begin(), p.grad->end(), T(0));
}

template <typename T>
void UNet<T>::conv_block_forward(const ConvLayer<T>& c1, const ConvLayer<T>& c2,
                                 const Tensor4<T>& in, ConvBlockCache<T>& cache) const {
  cache.in = in;
  kernels::conv2d_forward(cache.in, c1.w, c1.b, cache.a1);
  kernels::leaky_relu_forward(cache.a1, static_cast<T>(kLeakySlope), cache.h1);
  kernels::conv2d_forward(cache.h1, c2.w, c2.b, cache.a2);
  kernels::leaky_relu_forward(cache.a2, static_cast<T>(kLeakySlope), cache.h2);
}

template <typename T>
void UNet<T>::conv_block_backward(ConvLayer<T>& c1, ConvLayer<T>& c2,
                                  const ConvBlockCache<T>& cache, const Tensor4<T>& dout,
                                  Tensor4<T>& din) {
  Tensor4<T> da2, dh1, da1;
  kernels::leaky_relu_backward(cache.a2, dout, static_cast<T>(kLeakySlope), da2);
  kernels::conv2d_backward_params(cache.h1, da2, c2.gw, c2.gb);
  kernels::conv2d_backward_input(da2, c2.w, dh1);
  kernels::leaky_relu_backward(cache.a1, dh1, static_cast<T>(kLeakySlope), da1);
  kernels::conv2d_backward_params(cache.in, da1, c1.gw, c1.gb);
  kernels::conv2d_backward_input(da1, c1.w, din);
}

template <typename T>
void UNet<T>::encode(const Tensor4<T>& image, EncodeCache<T>& cache) const {
  if (image.c != config_.in_channels)
    throw ConfigError("net: input has " + std::to_string(image.c) + " channels, expected " +
                      std::to_string(config_.in_channels));
  const int div = 1 << config_.depth;
  if (image.h % div != 0 || image.w % div != 0)
    throw ConfigError("net: spatial dims " + std::to_string(image.h) + "x" +
                      std::to_string(image.w) + " not divisible by 2^depth = " +
                      std::to_string(div));
  ++counters_.encoder;
  cache.stages.resize(config_.depth);
  const Tensor4<T>* x = &image;
  for (int s = 0; s < config_.depth; ++s) {
    auto& st = cache.stages[s];
    conv_block_forward(enc1_[s], enc2_[s], *x, st.block);
    kernels::maxpool2_forward(st.block.h2, st.pooled, st.argmax);
    x = &st.pooled;
  }
  conv_block_forward(bott1_, bott2_, *x, cache.bottleneck);
}

template <typename T>
void UNet<T>::decode(const EncodeCache<T>& enc, const std::vector<T>* influence,
                     DecodeCache<T>& cache) const {
  const int depth = config_.depth;
  const int N = config_.num_modalities;
  const int B = enc.bottleneck.h2.n;
  if (N == 0 && influence != nullptr)
    throw ConfigError("net: plain model takes no influence vector");
  if (N > 0) {
    if (influence == nullptr) throw ConfigError("net: influence vector required");
    if (influence->size() != static_cast<std::size_t>(B) * N)
      throw ConfigError("net: influence vector has " + std::to_string(influence->size()) +
                        " entries, expected " + std::to_string(B) + "x" + std::to_string(N));
  }
  ++counters_.decoder;
  cache.stages.resize(depth);
  const Tensor4<T>* prev = &enc.bottleneck.h2;
  for (int s = depth - 1; s >= 0; --s) {
    auto& st = cache.stages[s];
    kernels::upsample2_forward(*prev, st.up);
    Tensor4<T> cin;
    concat_channels(st.up, enc.stages[s].block.h2, cin);
    if (s == 0 && N > 0) cin = inject_influence(cin, *influence, N);
    conv_block_forward(dec1_[s], dec2_[s], cin, st.block);
    prev = &st.block.h2;
  }
  kernels::conv2d_forward(cache.stages[0].block.h2, out_.w, out_.b, cache.logit);
  kernels::sigmoid_forward(cache.logit, cache.prob);
}

template <typename T>
std::vector<T> UNet<T>::head(const EncodeCache<T>& enc, HeadCache<T>& cache) const {
  if (!config_.influence_head) throw ConfigError("net: model has no influence head");
  ++counters_.head;
  const int B = enc.bottleneck.h2.n;
  const int wb = bottleneck_width();
  kernels::global_avg_pool(enc.bottleneck.h2, cache.gap);
  cache.z.assign(B, T(0));
  cache.score.assign(B, T(0));
  for (int b = 0; b < B; ++b) {
    T z = head_.b[0];
    for (int c = 0; c < wb; ++c) z += head_.w[c] * cache.gap[static_cast<std::size_t>(b) * wb + c];
    cache.z[b] = z;
    const T zc = head_squash(z);
    cache.score[b] = T(1) / (T(1) + std::exp(-zc));
  }
  return cache.score;
}

template <typename T>
const Tensor4<T>& UNet<T>::forward(const Tensor4<T>& image, const std::vector<T>* influence,
                                   ForwardCache<T>& cache) const {
  encode(image, cache.enc);
  decode(cache.enc, influence, cache.dec);
  return cache.dec.prob;
}

template <typename T>
Tensor4<T> UNet<T>::predict(const Tensor4<T>& image, const std::vector<T>* influence) const {
  ForwardCache<T> cache;
  forward(image, influence, cache);
  return std::move(cache.dec.prob);
}

template <typename T>
void UNet<T>::backward(const ForwardCache<T>& cache, const Tensor4<T>& dprob) {
  const int depth = config_.depth;
  Tensor4<T> dlogit;
  kernels::sigmoid_backward(cache.dec.prob, dprob, dlogit);
  kernels::conv2d_backward_params(cache.dec.stages[0].block.h2, dlogit, out_.gw, out_.gb);
  Tensor4<T> dout;
  kernels::conv2d_backward_input(dlogit, out_.w, dout);

  // Decoder, shallow to deep; injected planes take no gradient.
  std::vector<Tensor4<T>> dskip(depth);
  for (int s = 0; s < depth; ++s) {
    Tensor4<T> dcin;
    conv_block_backward(dec1_[s], dec2_[s], cache.dec.stages[s].block, dout, dcin);
    const int up_c = s + 1 == depth ? bottleneck_width() : stage_width(s + 1);
    const int skip_c = stage_width(s);
    Tensor4<T> dup(dcin.n, up_c, dcin.h, dcin.w);
    dskip[s].resize(dcin.n, skip_c, dcin.h, dcin.w);
    for (int b = 0; b < dcin.n; ++b) {
      for (int c = 0; c < up_c; ++c)
        std::copy_n(dcin.plane(b, c), dcin.plane_size(), dup.plane(b, c));
      for (int c = 0; c < skip_c; ++c)
        std::copy_n(dcin.plane(b, up_c + c), dcin.plane_size(), dskip[s].plane(b, c));
    }
    kernels::upsample2_backward(dup, dout);
  }

  Tensor4<T> dpool;
  conv_block_backward(bott1_, bott2_, cache.enc.bottleneck, dout, dpool);
  for (int s = depth - 1; s >= 0; --s) {
    Tensor4<T> dh2;
    kernels::maxpool2_backward(dpool, cache.enc.stages[s].argmax, dh2);
    for (std::size_t i = 0; i < dh2.size(); ++i) dh2.data[i] += dskip[s].data[i];
    conv_block_backward(enc1_[s], enc2_[s], cache.enc.stages[s].block, dh2, dpool);
  }
}

template <typename T>
void UNet<T>::backward_head(const EncodeCache<T>& enc, const HeadCache<T>& hc,
                            const std::vector<T>& dscore) {
  if (!config_.influence_head) throw ConfigError("net: model has no influence head");
  const int B = enc.bottleneck.h2.n;
  const int wb = bottleneck_width();
  std::vector<T> dgap(hc.gap.size(), T(0));
  for (int b = 0; b < B; ++b) {
    const T s = hc.score[b];
    const T dz = dscore[b] * s * (T(1) - s) * head_squash_grad(hc.z[b]);
    head_.gb[0] += dz;
    for (int c = 0; c < wb; ++c) {
      const std::size_t i = static_cast<std::size_t>(b) * wb + c;
      head_.gw[c] += dz * hc.gap[i];
      dgap[i] = dz * head_.w[c];
    }
  }
  Tensor4<T> dfeat(enc.bottleneck.h2.n, enc.bottleneck.h2.c, enc.bottleneck.h2.h,
                   enc.bottleneck.h2.w);
  kernels::global_avg_pool_backward(dgap, dfeat);
  Tensor4<T> dpool;
  conv_block_backward(bott1_, bott2_, enc.bottleneck, dfeat, dpool);
  for (int s = config_.depth - 1; s >= 0; --s) {
    Tensor4<T> dh2;
    kernels::maxpool2_backward(dpool, enc.stages[s].argmax, dh2);
    conv_block_backward(enc1_[s], enc2_[s], enc.stages[s].block, dh2, dpool);
  }
}

template class UNet<float>;
template class UNet<double>;
template Tensor4<float> inject_influence(const Tensor4<float>&, const std::vector<float>&, int);
template Tensor4<double> inject_influence(const Tensor4<double>&, const std::vector<double>&, int);

namespace {

constexpr char kMagic[8] = {'M', 'O', 'D', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

json config_to_json(const NetConfig& c) {
  return {{"in_channels", c.in_channels},   {"base_width", c.base_width},
          {"depth", c.depth},               {"num_modalities", c.num_modalities},
          {"influence_head", c.influence_head}, {"seed", c.seed}};
}

NetConfig config_from_json(const json& j) {
  NetConfig c;
  c.in_channels = j.at("in_channels").get<int>();
  c.base_width = j.at("base_width").get<int>();
  c.depth = j.at("depth").get<int>();
  c.num_modalities = j.at("num_modalities").get<int>();
  c.influence_head = j.at("influence_head").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

void save_checkpoint(UNet<float>& model, const CheckpointMeta& meta,
                     const std::filesystem::path& path) {
  auto params = model.params();
  json dir = json::array();
  for (const auto& p : params) dir.push_back({{"name", p.name}, {"size", p.value->size()}});
  json header = {{"config", config_to_json(meta.config)},
                 {"occlusion_value", meta.occlusion_value},
                 {"dtype", "float32"},
                 {"params", dir}};
  const std::string hs = header.dump();
  const std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());

  std::ofstream f(path, std::ios::binary);
  if (!f) throw RuntimeFailure("cannot open '" + path.string() + "' for writing");
  f.write(kMagic, sizeof(kMagic));
  f.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
  f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  f.write(hs.data(), hlen);
  for (const auto& p : params)
    f.write(reinterpret_cast<const char*>(p.value->data()),
            static_cast<std::streamsize>(p.value->size() * sizeof(float)));
  if (!f) throw RuntimeFailure("write failed for '" + path.string() + "'");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw RuntimeFailure("cannot open checkpoint '" + path.string() + "'");
  char magic[8];
  std::uint32_t version = 0, hlen = 0;
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw RuntimeFailure("'" + path.string() + "' is not a checkpoint file");
  f.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!f || version != kVersion)
    throw RuntimeFailure("checkpoint version " + std::to_string(version) + " unsupported");
  f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  f.read(hs.data(), hlen);
  if (!f) throw RuntimeFailure("truncated checkpoint header");
  json header;
  try {
    header = json::parse(hs);
  } catch (const json::exception& e) {
    throw RuntimeFailure(std::string("bad checkpoint header: ") + e.what());
  }

  LoadedCheckpoint out;
  out.meta.config = config_from_json(header.at("config"));
  out.meta.occlusion_value = header.at("occlusion_value").get<float>();
  out.model = std::make_unique<UNet<float>>(out.meta.config);
  auto params = out.model->params();
  const auto& dir = header.at("params");
  if (dir.size() != params.size())
    throw RuntimeFailure("checkpoint lists " + std::to_string(dir.size()) +
                         " tensors, model has " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string name = dir[i].at("name").get<std::string>();
    const std::size_t size = dir[i].at("size").get<std::size_t>();
    if (name != params[i].name || size != params[i].value->size())
      throw RuntimeFailure("checkpoint tensor '" + name + "' does not match model tensor '" +
                           params[i].name + "'");
    f.read(reinterpret_cast<char*>(params[i].value->data()),
           static_cast<std::streamsize>(size * sizeof(float)));
    if (!f) throw RuntimeFailure("truncated checkpoint blob for '" + name + "'");
  }
  return out;
}

}  // namespace modlens
