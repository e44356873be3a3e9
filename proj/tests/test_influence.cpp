#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "modlens/errors.hpp"
#include "modlens/influence.hpp"
#include "modlens/raster.hpp"
#include "modlens/segnet.hpp"

using namespace modlens;

namespace {

ModalityScheme small_scheme(int groups) {
  ModalityScheme s;
  s.total_channels = 4;
  for (int g = 0; g < groups; ++g)
    s.groups.push_back({"g" + std::to_string(g), {g % 4, (g + 1) % 4}});
  return s;
}

NetConfig net_cfg(int in_c, int n, std::uint64_t seed = 3) {
  NetConfig c;
  c.in_channels = in_c;
  c.base_width = 4;
  c.depth = 2;
  c.num_modalities = n;
  c.influence_head = n > 0;
  c.seed = seed;
  return c;
}

template <typename T>
Tensor4<T> random_input(std::uint32_t seed, int b, int c, int hw = 16) {
  Tensor4<T> t(b, c, hw, hw);
  std::mt19937 rng(seed);
  std::uniform_real_distribution<T> d(T(-1), T(1));
  for (auto& v : t.data) v = d(rng);
  return t;
}

std::vector<std::uint8_t> random_mask(std::uint32_t seed, int hw, int b = 1) {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(b) * hw * hw);
  std::mt19937 rng(seed);
  for (auto& v : m) v = rng() % 2;
  return m;
}

// Pin the head to a constant output c by zeroing its weights and setting the
// bias to logit(c).
void pin_head(UNet<float>& model, float c) {
  const float bias = std::log(c / (1.0f - c));
  for (auto& p : model.params()) {
    if (p.name.find("head") == std::string::npos) continue;
    if (p.value->size() == 1)
      (*p.value)[0] = bias;
    else
      std::fill(p.value->begin(), p.value->end(), 0.0f);
  }
}

}  // namespace

TEST_SUITE("influence") {

TEST_CASE("influence_target matches its closed form") {
  CHECK(influence_target(0.5, 0.5) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(influence_target(0.5 + std::log(2.0), 0.5) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(influence_target(0.2, 0.5) == 1.0);  // improvement clamps to zero degradation

  // Monotone non-increasing in the degradation, bounded in (0, 1].
  double prev = 2.0;
  for (double delta = -1.0; delta <= 8.0; delta += 0.25) {
    const double t = influence_target(1.0 + std::max(0.0, delta), 1.0);
    CHECK(t <= prev);
    CHECK(t > 0.0);
    CHECK(t <= 1.0);
    prev = t;
  }

  CHECK_THROWS_AS(influence_target(std::nan(""), 0.5), RuntimeFailure);
  CHECK_THROWS_AS(influence_target(0.5, std::nan("")), RuntimeFailure);
  CHECK_THROWS_AS(influence_target(-0.1, 0.5), RuntimeFailure);
}

TEST_CASE("reported influence is one minus the raw score") {
  InfluenceVector v;
  v.scheme_names = {"a", "b", "c"};
  v.batch = 2;
  v.raw_scores = {0.0f, 0.25f, 1.0f, 0.5f, 0.9f, 0.1f};
  const std::vector<float> rep = v.reported_influence();
  REQUIRE(rep.size() == 6);
  CHECK(rep[0] == 1.0f);
  CHECK(rep[1] == 0.75f);
  CHECK(rep[2] == 0.0f);
  CHECK(rep[3] == 0.5f);
  CHECK(rep[4] == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(rep[5] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(v.raw(1, 0) == 0.5f);
  CHECK(v.raw(1, 2) == 0.1f);
}

TEST_CASE("compute_influence_vector runs one occluded pass per modality") {
  const ModalityScheme scheme = default_scheme();
  UNet<float> model(net_cfg(14, 6));
  const Tensor4<float> x = random_input<float>(5, 1, 14);

  model.counters().reset();
  const InfluenceVector v = compute_influence_vector(model, x, scheme);
  REQUIRE(v.num_modalities() == 6);
  REQUIRE(v.raw_scores.size() == 6);
  CHECK(v.scheme_names[0] == scheme.groups[0].name);
  for (const float s : v.raw_scores) {
    CHECK(s >= 0.0f);
    CHECK(s <= 1.0f);
  }
  CHECK(model.counters().encoder == 6);
  CHECK(model.counters().head == 6);
  CHECK(model.counters().decoder == 0);
}

TEST_CASE("a constant head yields a constant influence vector") {
  const ModalityScheme scheme = default_scheme();
  UNet<float> model(net_cfg(14, 6));
  pin_head(model, 0.42f);
  const Tensor4<float> x = random_input<float>(7, 1, 14);
  const InfluenceVector v = compute_influence_vector(model, x, scheme);
  for (const float s : v.raw_scores) CHECK(s == doctest::Approx(0.42).epsilon(1e-6));
}

TEST_CASE("permuting the scheme permutes the scores identically") {
  const ModalityScheme scheme = default_scheme();
  ModalityScheme reversed = scheme;
  std::reverse(reversed.groups.begin(), reversed.groups.end());

  UNet<float> model(net_cfg(14, 6));
  const Tensor4<float> x = random_input<float>(9, 1, 14);
  const InfluenceVector a = compute_influence_vector(model, x, scheme);
  const InfluenceVector b = compute_influence_vector(model, x, reversed);
  for (int i = 0; i < 6; ++i) {
    CHECK(b.scheme_names[i] == a.scheme_names[5 - i]);
    CHECK(b.raw_scores[i] == a.raw_scores[5 - i]);
  }
}

TEST_CASE("framework pass counts match the N-pass scheme") {
  for (const int n : {1, 2, 6}) {
    const ModalityScheme scheme = n == 6 ? default_scheme() : small_scheme(n);
    const int c = scheme.total_channels;
    UNet<float> model(net_cfg(c, n));
    const Tensor4<float> x = random_input<float>(11 + n, 1, c);
    const std::vector<std::uint8_t> mask = random_mask(13, 16);

    model.counters().reset();
    FrameworkPass<float> pass(model, x, &mask, scheme, 0.0f);
    CHECK(pass.training());
    // N occluded probes + 1 full encode; probes + neutral full probe + final.
    CHECK(model.counters().encoder == n + 1);
    CHECK(model.counters().head == n);
    CHECK(model.counters().decoder == n + 2);

    model.counters().reset();
    FrameworkPass<float> infer(model, x, nullptr, scheme, 0.0f);
    CHECK(!infer.training());
    CHECK(model.counters().encoder == n + 1);
    CHECK(model.counters().head == n);
    CHECK(model.counters().decoder == 1);
    CHECK(infer.targets().empty());
    CHECK(infer.occluded_losses().empty());
    CHECK(infer.probabilities().size() == 16 * 16);
  }
}

TEST_CASE("targets are the influence_target of the probe losses") {
  const ModalityScheme scheme = default_scheme();
  UNet<float> model(net_cfg(14, 6));
  const Tensor4<float> x = random_input<float>(15, 2, 14);
  const std::vector<std::uint8_t> mask = random_mask(17, 16, 2);
  FrameworkPass<float> pass(model, x, &mask, scheme, 0.0f);

  REQUIRE(pass.targets().size() == 12);
  REQUIRE(pass.occluded_losses().size() == 12);
  REQUIRE(pass.full_losses().size() == 2);
  for (int b = 0; b < 2; ++b) {
    for (int i = 0; i < 6; ++i) {
      const std::size_t k = static_cast<std::size_t>(b) * 6 + i;
      const double want = influence_target(pass.occluded_losses()[k], pass.full_losses()[b]);
      CHECK(pass.targets()[k] == doctest::Approx(want).epsilon(1e-6));
      CHECK(pass.targets()[k] > 0.0f);
      CHECK(pass.targets()[k] <= 1.0f);
    }
  }

  // The influence() accessor mirrors scores() in scheme order.
  const InfluenceVector v = pass.influence();
  CHECK(v.batch == 2);
  for (std::size_t i = 0; i < v.raw_scores.size(); ++i)
    CHECK(v.raw_scores[i] == pass.scores()[i]);
}

TEST_CASE("plain models are rejected") {
  const ModalityScheme scheme = default_scheme();
  UNet<float> plain(net_cfg(14, 0));
  const Tensor4<float> x = random_input<float>(19, 1, 14);
  CHECK_THROWS_AS(compute_influence_vector(plain, x, scheme), ConfigError);
  CHECK_THROWS_AS(FrameworkPass<float>(plain, x, nullptr, scheme, 0.0f), ConfigError);

  UNet<float> fw(net_cfg(14, 6));
  const Tensor4<float> bad = random_input<float>(21, 1, 13);
  CHECK_THROWS_AS(FrameworkPass<float>(fw, bad, nullptr, scheme, 0.0f), ConfigError);
}

TEST_CASE("segmentation gradients treat the injected scores as constants") {
  const ModalityScheme scheme = default_scheme();
  UNet<float> model(net_cfg(14, 6, 23));
  const Tensor4<float> x = random_input<float>(23, 1, 14);
  const std::vector<std::uint8_t> mask = random_mask(25, 16);

  Tensor4<float> dprob(1, 1, 16, 16);
  std::mt19937 rng(27);
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  for (auto& v : dprob.data) v = d(rng);

  // Gradients through the framework pass with zero influence weight...
  FrameworkPass<float> pass(model, x, &mask, scheme, 0.0f);
  model.zero_grads();
  pass.backward(dprob, 0.0);
  std::vector<std::vector<float>> g1;
  for (auto& p : model.params()) g1.push_back(*p.grad);

  // ...equal the gradients of a forward that injects the same values as
  // plain constants. If the scores were attached, the head and the occluded
  // encoder passes would contribute extra terms.
  std::vector<float> frozen(pass.scores());
  ForwardCache<float> cache;
  model.forward(x, &frozen, cache);
  model.zero_grads();
  model.backward(cache, dprob);
  auto params = model.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g2 = *params[i].grad;
    REQUIRE(g2.size() == g1[i].size());
    for (std::size_t j = 0; j < g2.size(); ++j)
      CHECK(g1[i][j] == doctest::Approx(g2[j]).epsilon(1e-6));
  }

  // A positive influence weight adds score-regression gradients through the
  // occluded passes: some encoder parameter must now see a different grad.
  FrameworkPass<float> pass2(model, x, &mask, scheme, 0.0f);
  model.zero_grads();
  pass2.backward(dprob, 3.0);
  bool head_grad_changed = false, encoder_grad_changed = false;
  params = model.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g2 = *params[i].grad;
    for (std::size_t j = 0; j < g2.size(); ++j) {
      if (g2[j] == g1[i][j]) continue;
      if (params[i].name.find("head") != std::string::npos) head_grad_changed = true;
      if (params[i].name.find("enc") != std::string::npos) encoder_grad_changed = true;
    }
  }
  CHECK(head_grad_changed);
  CHECK(encoder_grad_changed);
}

TEST_CASE("batch scores match per-sample scores") {
  const ModalityScheme scheme = default_scheme();
  UNet<float> model(net_cfg(14, 6));
  const Tensor4<float> x = random_input<float>(29, 2, 14);

  Tensor4<float> x0(1, 14, 16, 16), x1(1, 14, 16, 16);
  std::copy(x.data.begin(), x.data.begin() + x0.size(), x0.data.begin());
  std::copy(x.data.begin() + x0.size(), x.data.end(), x1.data.begin());

  FrameworkPass<float> batch(model, x, nullptr, scheme, 0.0f);
  FrameworkPass<float> one(model, x0, nullptr, scheme, 0.0f);
  FrameworkPass<float> two(model, x1, nullptr, scheme, 0.0f);
  for (int i = 0; i < 6; ++i) {
    CHECK(batch.scores()[i] == doctest::Approx(one.scores()[i]).epsilon(1e-6));
    CHECK(batch.scores()[6 + i] == doctest::Approx(two.scores()[i]).epsilon(1e-6));
  }
}

}  // TEST_SUITE
