#include "modlens/kernels.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

namespace modlens::kernels {

namespace {

// Valid output-row range for a kernel row offset: ih = oh + kh - pad in [0, h).
inline void row_range(int kh, int pad, int h, int& lo, int& hi) {
  lo = std::max(0, pad - kh);
  hi = std::min(h, h + pad - kh);
}

}  // namespace

template <typename T>
void conv2d_forward(const Tensor4<T>& x, const Tensor4<T>& w,
                    const std::vector<T>& bias, Tensor4<T>& y) {
  const int k = w.h;
  const int pad = (k - 1) / 2;
  assert(w.w == k && x.c == w.c && static_cast<int>(bias.size()) == w.n);
  y.resize(x.n, w.n, x.h, x.w);
  const int H = x.h, W = x.w;

#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < x.n; ++b) {
    for (int oc = 0; oc < w.n; ++oc) {
      T* yp = y.plane(b, oc);
      const std::size_t ps = y.plane_size();
      const T bv = bias[oc];
      for (std::size_t i = 0; i < ps; ++i) yp[i] = bv;
      for (int ic = 0; ic < x.c; ++ic) {
        const T* xp = x.plane(b, ic);
        for (int kh = 0; kh < k; ++kh) {
          int oh0, oh1;
          row_range(kh, pad, H, oh0, oh1);
          for (int kw = 0; kw < k; ++kw) {
            const T wv = w.at(oc, ic, kh, kw);
            const int ow0 = std::max(0, pad - kw);
            const int ow1 = std::min(W, W + pad - kw);
            for (int oh = oh0; oh < oh1; ++oh) {
              const T* xrow = xp + static_cast<std::size_t>(oh + kh - pad) * W + kw - pad;
              T* yrow = yp + static_cast<std::size_t>(oh) * W;
              for (int ow = ow0; ow < ow1; ++ow) yrow[ow] += wv * xrow[ow];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const Tensor4<T>& dy, const Tensor4<T>& w,
                           Tensor4<T>& dx) {
  const int k = w.h;
  const int pad = (k - 1) / 2;
  dx.resize(dy.n, w.c, dy.h, dy.w);
  const int H = dy.h, W = dy.w;

#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < dy.n; ++b) {
    for (int ic = 0; ic < w.c; ++ic) {
      T* dxp = dx.plane(b, ic);
      for (int oc = 0; oc < w.n; ++oc) {
        const T* dyp = dy.plane(b, oc);
        for (int kh = 0; kh < k; ++kh) {
          // oh = ih - kh + pad in [0, H)
          const int ih0 = std::max(0, kh - pad);
          const int ih1 = std::min(H, H + kh - pad);
          for (int kw = 0; kw < k; ++kw) {
            const T wv = w.at(oc, ic, kh, kw);
            const int iw0 = std::max(0, kw - pad);
            const int iw1 = std::min(W, W + kw - pad);
            for (int ih = ih0; ih < ih1; ++ih) {
              const T* dyrow = dyp + static_cast<std::size_t>(ih - kh + pad) * W - kw + pad;
              T* dxrow = dxp + static_cast<std::size_t>(ih) * W;
              for (int iw = iw0; iw < iw1; ++iw) dxrow[iw] += wv * dyrow[iw];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_params(const Tensor4<T>& x, const Tensor4<T>& dy,
                            Tensor4<T>& dw, std::vector<T>& db) {
  const int k = dw.h;
  const int pad = (k - 1) / 2;
  assert(dw.n == dy.c && dw.c == x.c);
  const int H = x.h, W = x.w;

#pragma omp parallel for collapse(2) schedule(static)
  for (int oc = 0; oc < dw.n; ++oc) {
    for (int ic = 0; ic < dw.c; ++ic) {
      for (int kh = 0; kh < k; ++kh) {
        for (int kw = 0; kw < k; ++kw) {
          const int ow0 = std::max(0, pad - kw);
          const int ow1 = std::min(W, W + pad - kw);
          T acc = T(0);
          for (int b = 0; b < x.n; ++b) {
            const T* xp = x.plane(b, ic);
            const T* dyp = dy.plane(b, oc);
            int oh0, oh1;
            row_range(kh, pad, H, oh0, oh1);
            for (int oh = oh0; oh < oh1; ++oh) {
              const T* xrow = xp + static_cast<std::size_t>(oh + kh - pad) * W + kw - pad;
              const T* dyrow = dyp + static_cast<std::size_t>(oh) * W;
              T s = T(0);
#pragma omp simd reduction(+ : s)
              for (int ow = ow0; ow < ow1; ++ow) s += dyrow[ow] * xrow[ow];
              acc += s;
            }
          }
          dw.at(oc, ic, kh, kw) += acc;
        }
      }
    }
  }

#pragma omp parallel for schedule(static)
  for (int oc = 0; oc < dy.c; ++oc) {
    T acc = T(0);
    for (int b = 0; b < dy.n; ++b) {
      const T* dyp = dy.plane(b, oc);
      const std::size_t ps = dy.plane_size();
      T s = T(0);
#pragma omp simd reduction(+ : s)
      for (std::size_t i = 0; i < ps; ++i) s += dyp[i];
      acc += s;
    }
    db[oc] += acc;
  }
}

template <typename T>
void leaky_relu_forward(const Tensor4<T>& x, T slope, Tensor4<T>& y) {
  y.resize(x.n, x.c, x.h, x.w);
  const std::size_t sz = x.size();
  const T* xp = x.data.data();
  T* yp = y.data.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(sz); ++i)
    yp[i] = xp[i] > T(0) ? xp[i] : slope * xp[i];
}

template <typename T>
void leaky_relu_backward(const Tensor4<T>& x, const Tensor4<T>& dy, T slope,
                         Tensor4<T>& dx) {
  dx.resize(x.n, x.c, x.h, x.w);
  const std::size_t sz = x.size();
  const T* xp = x.data.data();
  const T* dyp = dy.data.data();
  T* dxp = dx.data.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(sz); ++i)
    dxp[i] = xp[i] > T(0) ? dyp[i] : slope * dyp[i];
}

template <typename T>
void maxpool2_forward(const Tensor4<T>& x, Tensor4<T>& y,
                      std::vector<std::uint8_t>& argmax) {
  assert(x.h % 2 == 0 && x.w % 2 == 0);
  y.resize(x.n, x.c, x.h / 2, x.w / 2);
  argmax.assign(y.size(), 0);
  const int OH = y.h, OW = y.w, W = x.w;

#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < x.n; ++b) {
    for (int ci = 0; ci < x.c; ++ci) {
      const T* xp = x.plane(b, ci);
      T* yp = y.plane(b, ci);
      std::uint8_t* ap = argmax.data() + (static_cast<std::size_t>(b) * x.c + ci) * y.plane_size();
      for (int oh = 0; oh < OH; ++oh) {
        const T* r0 = xp + static_cast<std::size_t>(2 * oh) * W;
        const T* r1 = r0 + W;
        for (int ow = 0; ow < OW; ++ow) {
          const T v[4] = {r0[2 * ow], r0[2 * ow + 1], r1[2 * ow], r1[2 * ow + 1]};
          int best = 0;
          for (int j = 1; j < 4; ++j)
            if (v[j] > v[best]) best = j;
          yp[static_cast<std::size_t>(oh) * OW + ow] = v[best];
          ap[static_cast<std::size_t>(oh) * OW + ow] = static_cast<std::uint8_t>(best);
        }
      }
    }
  }
}

template <typename T>
void maxpool2_backward(const Tensor4<T>& dy,
                       const std::vector<std::uint8_t>& argmax, Tensor4<T>& dx) {
  dx.resize(dy.n, dy.c, dy.h * 2, dy.w * 2);
  dx.zero();
  const int OH = dy.h, OW = dy.w, W = dx.w;

#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < dy.n; ++b) {
    for (int ci = 0; ci < dy.c; ++ci) {
      const T* dyp = dy.plane(b, ci);
      T* dxp = dx.plane(b, ci);
      const std::uint8_t* ap = argmax.data() + (static_cast<std::size_t>(b) * dy.c + ci) * dy.plane_size();
      for (int oh = 0; oh < OH; ++oh) {
        for (int ow = 0; ow < OW; ++ow) {
          const std::size_t oi = static_cast<std::size_t>(oh) * OW + ow;
          const int a = ap[oi];
          const int ih = 2 * oh + (a >> 1);
          const int iw = 2 * ow + (a & 1);
          dxp[static_cast<std::size_t>(ih) * W + iw] += dyp[oi];
        }
      }
    }
  }
}

template <typename T>
void upsample2_forward(const Tensor4<T>& x, Tensor4<T>& y) {
  y.resize(x.n, x.c, x.h * 2, x.w * 2);
  const int H = x.h, W = x.w, OW = y.w;

#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < x.n; ++b) {
    for (int ci = 0; ci < x.c; ++ci) {
      const T* xp = x.plane(b, ci);
      T* yp = y.plane(b, ci);
      for (int ih = 0; ih < H; ++ih) {
        const T* xrow = xp + static_cast<std::size_t>(ih) * W;
        T* y0 = yp + static_cast<std::size_t>(2 * ih) * OW;
        T* y1 = y0 + OW;
        for (int iw = 0; iw < W; ++iw) {
          const T v = xrow[iw];
          y0[2 * iw] = v;
          y0[2 * iw + 1] = v;
          y1[2 * iw] = v;
          y1[2 * iw + 1] = v;
        }
      }
    }
  }
}

template <typename T>
void upsample2_backward(const Tensor4<T>& dy, Tensor4<T>& dx) {
  assert(dy.h % 2 == 0 && dy.w % 2 == 0);
  dx.resize(dy.n, dy.c, dy.h / 2, dy.w / 2);
  const int H = dx.h, W = dx.w, OW = dy.w;

#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < dy.n; ++b) {
    for (int ci = 0; ci < dy.c; ++ci) {
      const T* dyp = dy.plane(b, ci);
      T* dxp = dx.plane(b, ci);
      for (int ih = 0; ih < H; ++ih) {
        const T* d0 = dyp + static_cast<std::size_t>(2 * ih) * OW;
        const T* d1 = d0 + OW;
        T* dxrow = dxp + static_cast<std::size_t>(ih) * W;
        for (int iw = 0; iw < W; ++iw)
          dxrow[iw] = d0[2 * iw] + d0[2 * iw + 1] + d1[2 * iw] + d1[2 * iw + 1];
      }
    }
  }
}

template <typename T>
void global_avg_pool(const Tensor4<T>& x, std::vector<T>& out) {
  out.assign(static_cast<std::size_t>(x.n) * x.c, T(0));
  const std::size_t ps = x.plane_size();
  const T inv = T(1) / static_cast<T>(ps);

#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < x.n; ++b) {
    for (int ci = 0; ci < x.c; ++ci) {
      const T* xp = x.plane(b, ci);
      T s = T(0);
#pragma omp simd reduction(+ : s)
      for (std::size_t i = 0; i < ps; ++i) s += xp[i];
      out[static_cast<std::size_t>(b) * x.c + ci] = s * inv;
    }
  }
}

template <typename T>
void global_avg_pool_backward(const std::vector<T>& dout, Tensor4<T>& dx) {
  const std::size_t ps = dx.plane_size();
  const T inv = T(1) / static_cast<T>(ps);

#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < dx.n; ++b) {
    for (int ci = 0; ci < dx.c; ++ci) {
      T* dxp = dx.plane(b, ci);
      const T g = dout[static_cast<std::size_t>(b) * dx.c + ci] * inv;
      for (std::size_t i = 0; i < ps; ++i) dxp[i] = g;
    }
  }
}

template <typename T>
void sigmoid_forward(const Tensor4<T>& x, Tensor4<T>& y) {
  y.resize(x.n, x.c, x.h, x.w);
  const std::size_t sz = x.size();
  const T* xp = x.data.data();
  T* yp = y.data.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(sz); ++i)
    yp[i] = T(1) / (T(1) + std::exp(-xp[i]));
}

template <typename T>
void sigmoid_backward(const Tensor4<T>& y, const Tensor4<T>& dy, Tensor4<T>& dx) {
  dx.resize(y.n, y.c, y.h, y.w);
  const std::size_t sz = y.size();
  const T* yp = y.data.data();
  const T* dyp = dy.data.data();
  T* dxp = dx.data.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(sz); ++i)
    dxp[i] = dyp[i] * yp[i] * (T(1) - yp[i]);
}

namespace serial {

template <typename T>
void conv2d_forward(const Tensor4<T>& x, const Tensor4<T>& w,
                    const std::vector<T>& bias, Tensor4<T>& y) {
  const int k = w.h;
  const int pad = (k - 1) / 2;
  y.resize(x.n, w.n, x.h, x.w);
  for (int b = 0; b < x.n; ++b)
    for (int oc = 0; oc < w.n; ++oc)
      for (int oh = 0; oh < x.h; ++oh)
        for (int ow = 0; ow < x.w; ++ow) {
          T acc = bias[oc];
          for (int ic = 0; ic < x.c; ++ic)
            for (int kh = 0; kh < k; ++kh)
              for (int kw = 0; kw < k; ++kw) {
                const int ih = oh + kh - pad;
                const int iw = ow + kw - pad;
                if (ih < 0 || ih >= x.h || iw < 0 || iw >= x.w) continue;
                acc += w.at(oc, ic, kh, kw) * x.at(b, ic, ih, iw);
              }
          y.at(b, oc, oh, ow) = acc;
        }
}

template <typename T>
void conv2d_backward_input(const Tensor4<T>& dy, const Tensor4<T>& w,
                           Tensor4<T>& dx) {
  const int k = w.h;
  const int pad = (k - 1) / 2;
  dx.resize(dy.n, w.c, dy.h, dy.w);
  for (int b = 0; b < dy.n; ++b)
    for (int ic = 0; ic < w.c; ++ic)
      for (int ih = 0; ih < dy.h; ++ih)
        for (int iw = 0; iw < dy.w; ++iw) {
          T acc = T(0);
          for (int oc = 0; oc < w.n; ++oc)
            for (int kh = 0; kh < k; ++kh)
              for (int kw = 0; kw < k; ++kw) {
                const int oh = ih - kh + pad;
                const int ow = iw - kw + pad;
                if (oh < 0 || oh >= dy.h || ow < 0 || ow >= dy.w) continue;
                acc += w.at(oc, ic, kh, kw) * dy.at(b, oc, oh, ow);
              }
          dx.at(b, ic, ih, iw) = acc;
        }
}

template <typename T>
void conv2d_backward_params(const Tensor4<T>& x, const Tensor4<T>& dy,
                            Tensor4<T>& dw, std::vector<T>& db) {
  const int k = dw.h;
  const int pad = (k - 1) / 2;
  for (int oc = 0; oc < dw.n; ++oc)
    for (int ic = 0; ic < dw.c; ++ic)
      for (int kh = 0; kh < k; ++kh)
        for (int kw = 0; kw < k; ++kw) {
          T acc = T(0);
          for (int b = 0; b < x.n; ++b)
            for (int oh = 0; oh < x.h; ++oh)
              for (int ow = 0; ow < x.w; ++ow) {
                const int ih = oh + kh - pad;
                const int iw = ow + kw - pad;
                if (ih < 0 || ih >= x.h || iw < 0 || iw >= x.w) continue;
                acc += dy.at(b, oc, oh, ow) * x.at(b, ic, ih, iw);
              }
          dw.at(oc, ic, kh, kw) += acc;
        }
  for (int oc = 0; oc < dy.c; ++oc) {
    T acc = T(0);
    for (int b = 0; b < dy.n; ++b) {
      const T* dyp = dy.plane(b, oc);
      for (std::size_t i = 0; i < dy.plane_size(); ++i) acc += dyp[i];
    }
    db[oc] += acc;
  }
}

template <typename T>
void maxpool2_forward(const Tensor4<T>& x, Tensor4<T>& y,
                      std::vector<std::uint8_t>& argmax) {
  y.resize(x.n, x.c, x.h / 2, x.w / 2);
  argmax.assign(y.size(), 0);
  for (int b = 0; b < x.n; ++b)
    for (int ci = 0; ci < x.c; ++ci)
      for (int oh = 0; oh < y.h; ++oh)
        for (int ow = 0; ow < y.w; ++ow) {
          T best = x.at(b, ci, 2 * oh, 2 * ow);
          int bj = 0;
          for (int j = 1; j < 4; ++j) {
            const T v = x.at(b, ci, 2 * oh + (j >> 1), 2 * ow + (j & 1));
            if (v > best) {
              best = v;
              bj = j;
            }
          }
          y.at(b, ci, oh, ow) = best;
          argmax[((static_cast<std::size_t>(b) * y.c + ci) * y.h + oh) * y.w + ow] =
              static_cast<std::uint8_t>(bj);
        }
}

template <typename T>
void upsample2_forward(const Tensor4<T>& x, Tensor4<T>& y) {
  y.resize(x.n, x.c, x.h * 2, x.w * 2);
  for (int b = 0; b < x.n; ++b)
    for (int ci = 0; ci < x.c; ++ci)
      for (int oh = 0; oh < y.h; ++oh)
        for (int ow = 0; ow < y.w; ++ow)
          y.at(b, ci, oh, ow) = x.at(b, ci, oh / 2, ow / 2);
}

}  // namespace serial

#define MODLENS_INSTANTIATE(T)                                                   \
  template void conv2d_forward<T>(const Tensor4<T>&, const Tensor4<T>&,          \
                                  const std::vector<T>&, Tensor4<T>&);           \
  template void conv2d_backward_input<T>(const Tensor4<T>&, const Tensor4<T>&,   \
                                         Tensor4<T>&);                           \
  template void conv2d_backward_params<T>(const Tensor4<T>&, const Tensor4<T>&,  \
                                          Tensor4<T>&, std::vector<T>&);         \
  template void leaky_relu_forward<T>(const Tensor4<T>&, T, Tensor4<T>&);        \
  template void leaky_relu_backward<T>(const Tensor4<T>&, const Tensor4<T>&, T,  \
                                       Tensor4<T>&);                             \
  template void maxpool2_forward<T>(const Tensor4<T>&, Tensor4<T>&,              \
                                    std::vector<std::uint8_t>&);                 \
  template void maxpool2_backward<T>(const Tensor4<T>&,                          \
                                     const std::vector<std::uint8_t>&,           \
                                     Tensor4<T>&);                               \
  template void upsample2_forward<T>(const Tensor4<T>&, Tensor4<T>&);            \
  template void upsample2_backward<T>(const Tensor4<T>&, Tensor4<T>&);           \
  template void global_avg_pool<T>(const Tensor4<T>&, std::vector<T>&);          \
  template void global_avg_pool_backward<T>(const std::vector<T>&, Tensor4<T>&); \
  template void sigmoid_forward<T>(const Tensor4<T>&, Tensor4<T>&);              \
  template void sigmoid_backward<T>(const Tensor4<T>&, const Tensor4<T>&,        \
                                    Tensor4<T>&);                                \
  template void serial::conv2d_forward<T>(const Tensor4<T>&, const Tensor4<T>&,  \
                                          const std::vector<T>&, Tensor4<T>&);   \
  template void serial::conv2d_backward_input<T>(const Tensor4<T>&,              \
                                                 const Tensor4<T>&, Tensor4<T>&); \
  template void serial::conv2d_backward_params<T>(                               \
      const Tensor4<T>&, const Tensor4<T>&, Tensor4<T>&, std::vector<T>&);       \
  template void serial::maxpool2_forward<T>(const Tensor4<T>&, Tensor4<T>&,      \
                                            std::vector<std::uint8_t>&);         \
  template void serial::upsample2_forward<T>(const Tensor4<T>&, Tensor4<T>&);

MODLENS_INSTANTIATE(float)
MODLENS_INSTANTIATE(double)

#undef MODLENS_INSTANTIATE

}  // namespace modlens::kernels
