#include <algorithm>
#include <cstring>
#include <random>
#include <vector>

#include "doctest.h"
#include "modlens/errors.hpp"
#include "modlens/occluder.hpp"
#include "modlens/raster.hpp"

using namespace modlens;

namespace {

Tensor4<float> random_stack(std::uint32_t seed, int c = 14, int h = 8, int w = 8) {
  Tensor4<float> t(1, c, h, w);
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> d(-5.0f, 5.0f);
  for (auto& v : t.data) v = d(rng);
  return t;
}

bool bit_equal(const Tensor4<float>& a, const Tensor4<float>& b) {
  return a.same_shape(b) &&
         std::memcmp(a.data.data(), b.data.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

TEST_SUITE("occluder") {

TEST_CASE("empty plan is the identity") {
  const Tensor4<float> x = random_stack(1);
  OcclusionPlan plan;
  plan.group_name = "none";
  const Tensor4<float> y = occlude(x, plan);
  CHECK(bit_equal(x, y));
}

TEST_CASE("single-group occlusion blanks exactly that group") {
  const Tensor4<float> x = random_stack(2);
  const Tensor4<float> before = x;
  OcclusionPlan plan;
  plan.group_name = "Sentinel-1";
  plan.channel_indices = {10, 11};
  plan.fill_value = 0.0f;
  const Tensor4<float> y = occlude(x, plan);

  CHECK(bit_equal(x, before));  // input untouched
  for (const int c : {10, 11}) {
    const float* p = y.plane(0, c);
    for (std::size_t i = 0; i < y.plane_size(); ++i) CHECK(p[i] == 0.0f);
  }
  for (int c = 0; c < 14; ++c) {
    if (c == 10 || c == 11) continue;
    CHECK(std::memcmp(y.plane(0, c), x.plane(0, c),
                      x.plane_size() * sizeof(float)) == 0);
  }
}

TEST_CASE("duplicate indices occlude the union once") {
  const Tensor4<float> x = random_stack(3);
  // RGB ∪ RGBNIR as one plan: {2,1,0} + {2,1,0,6} → set {0,1,2,6}.
  OcclusionPlan plan;
  plan.group_name = "Sentinel-2(RGB)+Sentinel-2(RGBNIR)";
  plan.channel_indices = {2, 1, 0, 2, 1, 0, 6};
  plan.fill_value = -1.5f;
  const Tensor4<float> y = occlude(x, plan);
  for (int c = 0; c < 14; ++c) {
    const bool hit = c == 0 || c == 1 || c == 2 || c == 6;
    const float* p = y.plane(0, c);
    if (hit) {
      for (std::size_t i = 0; i < y.plane_size(); ++i) CHECK(p[i] == -1.5f);
    } else {
      CHECK(std::memcmp(p, x.plane(0, c), x.plane_size() * sizeof(float)) == 0);
    }
  }
}

TEST_CASE("occlusion is idempotent and composes as a union") {
  const Tensor4<float> x = random_stack(4);
  OcclusionPlan p1;
  p1.channel_indices = {0, 3, 7};
  p1.fill_value = 0.25f;
  OcclusionPlan p2;
  p2.channel_indices = {7, 12};
  p2.fill_value = 0.25f;

  const Tensor4<float> once = occlude(x, p1);
  const Tensor4<float> twice = occlude(once, p1);
  CHECK(bit_equal(once, twice));

  OcclusionPlan both;
  both.channel_indices = {0, 3, 7, 12};
  both.fill_value = 0.25f;
  CHECK(bit_equal(occlude(occlude(x, p1), p2), occlude(x, both)));
}

TEST_CASE("out-of-range channel index is rejected") {
  const Tensor4<float> x = random_stack(5);
  OcclusionPlan plan;
  plan.channel_indices = {14};
  CHECK_THROWS_AS(occlude(x, plan), ConfigError);
  plan.channel_indices = {-1};
  CHECK_THROWS_AS(occlude(x, plan), ConfigError);
}

TEST_CASE("occlusion_sequence enumerates groups in scheme order") {
  const ModalityScheme scheme = default_scheme();
  const auto plans = occlusion_sequence(scheme, 0.5f);
  REQUIRE(plans.size() == static_cast<std::size_t>(scheme.num_modalities()));
  for (int i = 0; i < scheme.num_modalities(); ++i) {
    CHECK(plans[i].group_name == scheme.groups[i].name);
    CHECK(plans[i].channel_indices == scheme.groups[i].channel_indices);
    CHECK(plans[i].fill_value == 0.5f);
  }

  // Permuting the scheme permutes the sequence identically.
  ModalityScheme shuffled = scheme;
  std::reverse(shuffled.groups.begin(), shuffled.groups.end());
  const auto rplans = occlusion_sequence(shuffled, 0.5f);
  REQUIRE(rplans.size() == plans.size());
  for (std::size_t i = 0; i < plans.size(); ++i)
    CHECK(rplans[i].group_name == plans[plans.size() - 1 - i].group_name);

  // One-group scheme.
  ModalityScheme tiny;
  tiny.total_channels = 2;
  tiny.groups = {{"only", {0, 1}}};
  const auto one = occlusion_sequence(tiny);
  REQUIRE(one.size() == 1);
  CHECK(one[0].group_name == "only");
  CHECK(one[0].fill_value == 0.0f);
}

TEST_CASE("sequence applied to a stack blanks each group exactly once") {
  const ModalityScheme scheme = default_scheme();
  const Tensor4<float> x = random_stack(6);
  for (const auto& plan : occlusion_sequence(scheme)) {
    const Tensor4<float> y = occlude(x, plan);
    std::vector<bool> hit(14, false);
    for (const int c : plan.channel_indices) hit[c] = true;
    for (int c = 0; c < 14; ++c) {
      const float* p = y.plane(0, c);
      if (hit[c]) {
        for (std::size_t i = 0; i < y.plane_size(); ++i) CHECK(p[i] == 0.0f);
      } else {
        CHECK(std::memcmp(p, x.plane(0, c), x.plane_size() * sizeof(float)) == 0);
      }
    }
  }
}

}  // TEST_SUITE
