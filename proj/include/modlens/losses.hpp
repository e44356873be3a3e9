#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "modlens/errors.hpp"
#include "modlens/tensor.hpp"

namespace modlens {

// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] inside the loss.
inline constexpr double kProbClamp = 1e-7;

namespace detail {

template <typename T>
inline void check_bce_shapes(const Tensor4<T>& prob, const std::vector<std::uint8_t>& mask) {
  if (prob.c != 1) throw RuntimeFailure("bce: probabilities must have one channel");
  if (prob.size() != mask.size())
    throw RuntimeFailure("bce: " + std::to_string(prob.size()) + " probabilities vs " +
                         std::to_string(mask.size()) + " mask pixels");
}

inline double bce_term(double p, std::uint8_t y) {
  const double pc = std::min(std::max(p, kProbClamp), 1.0 - kProbClamp);
  return y ? -std::log(pc) : -std::log(1.0 - pc);
}

}  // namespace detail

// Mean over all pixels of -[y log p + (1-y) log(1-p)], accumulated in double.
template <typename T>
double bce_loss(const Tensor4<T>& prob, const std::vector<std::uint8_t>& mask) {
  detail::check_bce_shapes(prob, mask);
  double sum = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    sum += detail::bce_term(static_cast<double>(prob.data[i]), mask[i]);
  return sum / static_cast<double>(mask.size());
}

// Per-sample pixel means, length B.
template <typename T>
std::vector<double> bce_per_sample(const Tensor4<T>& prob, const std::vector<std::uint8_t>& mask) {
  detail::check_bce_shapes(prob, mask);
  std::vector<double> out(prob.n, 0.0);
  const std::size_t ps = prob.plane_size();
  for (int b = 0; b < prob.n; ++b) {
    const T* p = prob.plane(b, 0);
    const std::uint8_t* m = mask.data() + static_cast<std::size_t>(b) * ps;
    double sum = 0.0;
    for (std::size_t i = 0; i < ps; ++i) sum += detail::bce_term(static_cast<double>(p[i]), m[i]);
    out[b] = sum / static_cast<double>(ps);
  }
  return out;
}

// d(bce_loss)/d(prob), matching the clamped loss exactly (zero outside the
// clamp interval).
template <typename T>
void bce_loss_grad(const Tensor4<T>& prob, const std::vector<std::uint8_t>& mask,
                   Tensor4<T>& dprob) {
  detail::check_bce_shapes(prob, mask);
  dprob.resize(prob.n, prob.c, prob.h, prob.w);
  const double inv = 1.0 / static_cast<double>(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double p = static_cast<double>(prob.data[i]);
    if (p < kProbClamp || p > 1.0 - kProbClamp) {
      dprob.data[i] = T(0);
      continue;
    }
    const double y = mask[i] ? 1.0 : 0.0;
    dprob.data[i] = static_cast<T>((p - y) / (p * (1.0 - p)) * inv);
  }
}

// seg_loss + weight * mean((pred - target)^2).
template <typename T>
double composite_loss(double seg_loss, const std::vector<T>& pred,
                      const std::vector<T>& target, double weight) {
  if (pred.size() != target.size())
    throw RuntimeFailure("composite loss: " + std::to_string(pred.size()) +
                         " predictions vs " + std::to_string(target.size()) + " targets");
  double mse = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    mse += d * d;
  }
  if (!pred.empty()) mse /= static_cast<double>(pred.size());
  return seg_loss + weight * mse;
}

}  // namespace modlens
