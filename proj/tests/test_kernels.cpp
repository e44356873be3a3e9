#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "doctest.h"
#include "modlens/kernels.hpp"
#include "modlens/tensor.hpp"

using namespace modlens;
namespace K = modlens::kernels;

namespace {

template <typename T>
void fill_random(Tensor4<T>& t, std::mt19937& rng) {
  std::uniform_real_distribution<T> d(T(-1), T(1));
  for (auto& v : t.data) v = d(rng);
}

template <typename T>
void fill_random(std::vector<T>& v, std::mt19937& rng) {
  std::uniform_real_distribution<T> d(T(-1), T(1));
  for (auto& x : v) x = d(rng);
}

// Textbook triple-loop convolution, written independently of src/kernels.cpp.
template <typename T>
void conv_naive(const Tensor4<T>& x, const Tensor4<T>& w,
                const std::vector<T>& bias, Tensor4<T>& y) {
  const int k = w.h, r = k / 2;
  y.resize(x.n, w.n, x.h, x.w);
  for (int b = 0; b < x.n; ++b)
    for (int oc = 0; oc < w.n; ++oc)
      for (int oy = 0; oy < x.h; ++oy)
        for (int ox = 0; ox < x.w; ++ox) {
          T acc = bias[oc];
          for (int ic = 0; ic < x.c; ++ic)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy + ky - r, ix = ox + kx - r;
                if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                acc += x.at(b, ic, iy, ix) * w.at(oc, ic, ky, kx);
              }
          y.at(b, oc, oy, ox) = acc;
        }
}

template <typename T>
double max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

template <typename T>
double dot(const std::vector<T>& a, const std::vector<T>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * double(b[i]);
  return s;
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("conv2d_forward matches a hand example") {
  // 1x1x3x3 input, single 3x3 kernel that picks the left neighbour, bias 10.
  Tensor4<float> x(1, 1, 3, 3);
  for (int i = 0; i < 9; ++i) x.data[i] = float(i + 1);
  Tensor4<float> w(1, 1, 3, 3);
  w.at(0, 0, 1, 0) = 1.0f;
  std::vector<float> bias = {10.0f};
  Tensor4<float> y;
  K::conv2d_forward(x, w, bias, y);
  // Left neighbour with zero padding: row [_,1,2],[_,4,5],[_,7,8] plus 10.
  const std::vector<float> want = {10, 11, 12, 10, 14, 15, 10, 17, 18};
  CHECK(max_abs_diff(y.data, want) == 0.0);
}

TEST_CASE("conv2d_forward matches naive reference on random tensors") {
  std::mt19937 rng(7);
  for (const int k : {1, 3, 5}) {
    Tensor4<double> x(2, 3, 9, 7), w(4, 3, k, k), y, want;
    std::vector<double> bias(4);
    fill_random(x, rng);
    fill_random(w, rng);
    fill_random(bias, rng);
    K::conv2d_forward(x, w, bias, y);
    conv_naive(x, w, bias, want);
    CHECK(max_abs_diff(y.data, want.data) < 1e-12);
  }
}

TEST_CASE("conv2d_backward_input is the adjoint of the forward map") {
  // For linear A (bias zero), <A x, v> == <x, A^T v> for random x, v.
  std::mt19937 rng(11);
  Tensor4<double> x(2, 3, 8, 6), w(5, 3, 3, 3), y;
  std::vector<double> bias(5, 0.0);
  fill_random(x, rng);
  fill_random(w, rng);
  K::conv2d_forward(x, w, bias, y);
  Tensor4<double> v(y.n, y.c, y.h, y.w), xt;
  fill_random(v, rng);
  xt.resize(x.n, x.c, x.h, x.w);
  K::conv2d_backward_input(v, w, xt);
  CHECK(dot(y.data, v.data) == doctest::Approx(dot(x.data, xt.data)).epsilon(1e-10));
}

TEST_CASE("conv2d_backward_params matches finite differences") {
  std::mt19937 rng(13);
  Tensor4<double> x(1, 2, 6, 5), w(3, 2, 3, 3), y;
  std::vector<double> bias(3);
  fill_random(x, rng);
  fill_random(w, rng);
  fill_random(bias, rng);
  K::conv2d_forward(x, w, bias, y);
  Tensor4<double> dy(y.n, y.c, y.h, y.w);
  fill_random(dy, rng);

  Tensor4<double> dw(w.n, w.c, w.h, w.w);
  std::vector<double> db(3, 0.0);
  K::conv2d_backward_params(x, dy, dw, db);

  // Loss L = <y, dy>; dL/dw_i by central differences.
  const double eps = 1e-6;
  auto loss_at = [&](const Tensor4<double>& wp, const std::vector<double>& bp) {
    Tensor4<double> yp;
    K::conv2d_forward(x, wp, bp, yp);
    return dot(yp.data, dy.data);
  };
  std::uniform_int_distribution<std::size_t> pick(0, w.data.size() - 1);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t i = pick(rng);
    Tensor4<double> wp = w;
    wp.data[i] += eps;
    Tensor4<double> wm = w;
    wm.data[i] -= eps;
    const double fd = (loss_at(wp, bias) - loss_at(wm, bias)) / (2 * eps);
    CHECK(dw.data[i] == doctest::Approx(fd).epsilon(1e-5));
  }
  for (int oc = 0; oc < 3; ++oc) {
    std::vector<double> bp = bias, bm = bias;
    bp[oc] += eps;
    bm[oc] -= eps;
    const double fd = (loss_at(w, bp) - loss_at(w, bm)) / (2 * eps);
    CHECK(db[oc] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("conv2d_backward_params accumulates instead of overwriting") {
  std::mt19937 rng(17);
  Tensor4<double> x(1, 1, 4, 4), w(1, 1, 3, 3), y;
  std::vector<double> bias(1, 0.0);
  fill_random(x, rng);
  fill_random(w, rng);
  K::conv2d_forward(x, w, bias, y);
  Tensor4<double> dy(1, 1, 4, 4);
  fill_random(dy, rng);

  Tensor4<double> dw1(1, 1, 3, 3);
  std::vector<double> db1(1, 0.0);
  K::conv2d_backward_params(x, dy, dw1, db1);

  Tensor4<double> dw2 = dw1;
  std::vector<double> db2 = db1;
  K::conv2d_backward_params(x, dy, dw2, db2);
  for (std::size_t i = 0; i < dw1.data.size(); ++i)
    CHECK(dw2.data[i] == doctest::Approx(2 * dw1.data[i]).epsilon(1e-12));
  CHECK(db2[0] == doctest::Approx(2 * db1[0]).epsilon(1e-12));
}

TEST_CASE("leaky_relu forward and backward") {
  Tensor4<float> x(1, 1, 1, 4);
  x.data = {-2.0f, -0.5f, 0.0f, 3.0f};
  Tensor4<float> y;
  y.resize(1, 1, 1, 4);
  K::leaky_relu_forward(x, 0.1f, y);
  const std::vector<float> want = {-0.2f, -0.05f, 0.0f, 3.0f};
  CHECK(max_abs_diff(y.data, want) < 1e-7);

  Tensor4<float> dy(1, 1, 1, 4), dx(1, 1, 1, 4);
  dy.data = {1.0f, 1.0f, 1.0f, 1.0f};
  K::leaky_relu_backward(x, dy, 0.1f, dx);
  // x == 0 takes the slope branch.
  const std::vector<float> want_dx = {0.1f, 0.1f, 0.1f, 1.0f};
  CHECK(max_abs_diff(dx.data, want_dx) < 1e-7);
}

TEST_CASE("maxpool2 forward picks maxima and backward routes through argmax") {
  Tensor4<float> x(1, 1, 4, 4);
  x.data = {1, 2, 3, 4,
            5, 6, 7, 8,
            9, 1, 2, 3,
            4, 5, 6, 7};
  Tensor4<float> y;
  std::vector<std::uint8_t> argmax;
  K::maxpool2_forward(x, y, argmax);
  REQUIRE(y.h == 2);
  REQUIRE(y.w == 2);
  const std::vector<float> want = {6, 8, 9, 7};
  CHECK(max_abs_diff(y.data, want) == 0.0);

  Tensor4<float> dy(1, 1, 2, 2), dx;
  dy.data = {10, 20, 30, 40};
  dx.resize(1, 1, 4, 4);
  K::maxpool2_backward(dy, argmax, dx);
  double sum = 0;
  for (const float v : dx.data) sum += v;
  CHECK(sum == doctest::Approx(100.0));
  CHECK(dx.at(0, 0, 1, 1) == 10.0f);
  CHECK(dx.at(0, 0, 1, 3) == 20.0f);
  CHECK(dx.at(0, 0, 2, 0) == 30.0f);
  CHECK(dx.at(0, 0, 3, 3) == 40.0f);
}

TEST_CASE("upsample2 forward/backward form an adjoint pair") {
  std::mt19937 rng(19);
  Tensor4<double> x(2, 3, 5, 4), y;
  fill_random(x, rng);
  K::upsample2_forward(x, y);
  REQUIRE(y.h == 10);
  REQUIRE(y.w == 8);
  CHECK(y.at(0, 0, 0, 0) == x.at(0, 0, 0, 0));
  CHECK(y.at(0, 0, 1, 1) == x.at(0, 0, 0, 0));
  CHECK(y.at(1, 2, 9, 7) == x.at(1, 2, 4, 3));

  Tensor4<double> v(y.n, y.c, y.h, y.w), xt;
  fill_random(v, rng);
  xt.resize(x.n, x.c, x.h, x.w);
  K::upsample2_backward(v, xt);
  CHECK(dot(y.data, v.data) == doctest::Approx(dot(x.data, xt.data)).epsilon(1e-12));
}

TEST_CASE("global_avg_pool and its backward") {
  Tensor4<float> x(2, 2, 2, 2);
  for (int i = 0; i < 16; ++i) x.data[i] = float(i);
  std::vector<float> out;
  K::global_avg_pool(x, out);
  REQUIRE(out.size() == 4);
  CHECK(out[0] == doctest::Approx(1.5));    // mean of 0..3
  CHECK(out[1] == doctest::Approx(5.5));    // mean of 4..7
  CHECK(out[2] == doctest::Approx(9.5));
  CHECK(out[3] == doctest::Approx(13.5));

  Tensor4<float> dx(2, 2, 2, 2);
  K::global_avg_pool_backward({4.0f, 8.0f, 12.0f, 16.0f}, dx);
  CHECK(dx.at(0, 0, 0, 0) == doctest::Approx(1.0));
  CHECK(dx.at(0, 1, 1, 1) == doctest::Approx(2.0));
  CHECK(dx.at(1, 0, 0, 1) == doctest::Approx(3.0));
  CHECK(dx.at(1, 1, 1, 0) == doctest::Approx(4.0));
}

TEST_CASE("sigmoid forward/backward") {
  Tensor4<double> x(1, 1, 1, 3), y;
  x.data = {0.0, 2.0, -2.0};
  y.resize(1, 1, 1, 3);
  K::sigmoid_forward(x, y);
  CHECK(y.data[0] == doctest::Approx(0.5));
  CHECK(y.data[1] == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))));
  CHECK(y.data[2] == doctest::Approx(1.0 / (1.0 + std::exp(2.0))));

  Tensor4<double> dy(1, 1, 1, 3), dx(1, 1, 1, 3);
  dy.data = {1.0, 1.0, 1.0};
  K::sigmoid_backward(y, dy, dx);
  for (int i = 0; i < 3; ++i)
    CHECK(dx.data[i] == doctest::Approx(y.data[i] * (1.0 - y.data[i])));
}

TEST_CASE("parallel kernels match the serial references") {
  std::mt19937 rng(23);
  Tensor4<float> x(3, 6, 16, 12), w(8, 6, 3, 3);
  std::vector<float> bias(8);
  fill_random(x, rng);
  fill_random(w, rng);
  fill_random(bias, rng);

  Tensor4<float> y_p, y_s;
  K::conv2d_forward(x, w, bias, y_p);
  K::serial::conv2d_forward(x, w, bias, y_s);
  CHECK(max_abs_diff(y_p.data, y_s.data) == 0.0);  // bit-exact

  Tensor4<float> dy(y_p.n, y_p.c, y_p.h, y_p.w);
  fill_random(dy, rng);
  Tensor4<float> dx_p(x.n, x.c, x.h, x.w), dx_s(x.n, x.c, x.h, x.w);
  K::conv2d_backward_input(dy, w, dx_p);
  K::serial::conv2d_backward_input(dy, w, dx_s);
  CHECK(max_abs_diff(dx_p.data, dx_s.data) == 0.0);  // bit-exact

  // The simd reduction reorders float sums, so allow a small drift here.
  Tensor4<float> dw_p(w.n, w.c, w.h, w.w), dw_s(w.n, w.c, w.h, w.w);
  std::vector<float> db_p(8, 0.0f), db_s(8, 0.0f);
  K::conv2d_backward_params(x, dy, dw_p, db_p);
  K::serial::conv2d_backward_params(x, dy, dw_s, db_s);
  CHECK(max_abs_diff(dw_p.data, dw_s.data) < 2e-3);
  CHECK(max_abs_diff(db_p, db_s) < 2e-3);

  Tensor4<float> mp_p, mp_s;
  std::vector<std::uint8_t> am_p, am_s;
  K::maxpool2_forward(x, mp_p, am_p);
  K::serial::maxpool2_forward(x, mp_s, am_s);
  CHECK(max_abs_diff(mp_p.data, mp_s.data) == 0.0);
  CHECK(am_p == am_s);

  Tensor4<float> up_p, up_s;
  K::upsample2_forward(x, up_p);
  K::serial::upsample2_forward(x, up_s);
  CHECK(max_abs_diff(up_p.data, up_s.data) == 0.0);
}

TEST_CASE("kernels are deterministic across repeated runs") {
  std::mt19937 rng(29);
  Tensor4<float> x(2, 4, 12, 12), w(4, 4, 3, 3);
  std::vector<float> bias(4);
  fill_random(x, rng);
  fill_random(w, rng);
  fill_random(bias, rng);
  Tensor4<float> y1, y2;
  K::conv2d_forward(x, w, bias, y1);
  K::conv2d_forward(x, w, bias, y2);
  CHECK(y1.data == y2.data);

  Tensor4<float> dy(y1.n, y1.c, y1.h, y1.w);
  fill_random(dy, rng);
  Tensor4<float> dw1(4, 4, 3, 3), dw2(4, 4, 3, 3);
  std::vector<float> db1(4, 0.0f), db2(4, 0.0f);
  K::conv2d_backward_params(x, dy, dw1, db1);
  K::conv2d_backward_params(x, dy, dw2, db2);
  CHECK(dw1.data == dw2.data);
  CHECK(db1 == db2);
}

}  // TEST_SUITE
