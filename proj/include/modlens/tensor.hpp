#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <vector>

namespace modlens {

// Dense NCHW tensor, row-major with W fastest. Also used for conv weights
// as [out_c][in_c][kh][kw].
template <typename T>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_) { resize(n_, c_, h_, w_); }

  void resize(int n_, int c_, int h_, int w_) {
    n = n_;
    c = c_;
    h = h_;
    w = w_;
    data.assign(static_cast<std::size_t>(n_) * c_ * h_ * w_, T(0));
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }
  void zero() { fill(T(0)); }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Tensor4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  std::size_t plane_size() const { return static_cast<std::size_t>(h) * w; }

  T* plane(int b, int ci) {
    return data.data() + (static_cast<std::size_t>(b) * c + ci) * plane_size();
  }
  const T* plane(int b, int ci) const {
    return data.data() + (static_cast<std::size_t>(b) * c + ci) * plane_size();
  }

  T& at(int b, int ci, int y, int x) {
    return data[((static_cast<std::size_t>(b) * c + ci) * h + y) * w + x];
  }
  T at(int b, int ci, int y, int x) const {
    return data[((static_cast<std::size_t>(b) * c + ci) * h + y) * w + x];
  }
};

}  // namespace modlens
