// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "carseg/error.hpp"
#include "carseg/model/decoder.hpp"
#include "carseg/model/modality_encoder.hpp"
#include "carseg/nn/tensor.hpp"

namespace carseg {

/// Batch of integer label maps paired with an NCHW probability tensor.
struct LabelBatch {
  int n = 0, h = 0, w = 0;
  std::vector<std::uint8_t> labels;  // n*h*w, values 0..3

  std::size_t size() const { return labels.size(); }
};

template <typename T>
struct LossResult {
  double value = 0.0;
  nn::TensorT<T> grad;  // w.r.t. the first argument
};

/// Mean absolute difference; the reconstruction and latent-regression loss.
template <typename T>
LossResult<T> l1_loss(const nn::TensorT<T>& pred, const nn::TensorT<T>& target) {
  require(pred.same_shape(target), "l1_loss: shape mismatch");
  LossResult<T> out;
  out.grad = nn::TensorT<T>(pred.shape);
  const double inv = 1.0 / static_cast<double>(pred.numel());
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double d = double(pred.data[i]) - double(target.data[i]);
    acc += std::abs(d);
    out.grad.data[i] = T(d > 0 ? inv : (d < 0 ? -inv : 0.0));
  }
  out.value = acc * inv;
  return out;
}

/// Soft dice over the foreground classes (1..3), eps-smoothed, statistics
/// pooled over the whole batch.
template <typename T>
LossResult<T> dice_loss(const nn::TensorT<T>& probs, const LabelBatch& mask, double eps = 1e-6) {
  require(probs.dim(0) == mask.n && probs.dim(2) == mask.h && probs.dim(3) == mask.w &&
              probs.dim(1) == 4,
          "dice_loss: shape mismatch");
  const std::size_t plane = static_cast<std::size_t>(mask.h) * mask.w;
  LossResult<T> out;
  out.grad = nn::TensorT<T>(probs.shape);
  double mean_dice = 0.0;
  for (int c = 1; c < 4; ++c) {
    double sum_pg = 0.0, sum_p = 0.0, sum_g = 0.0;
    for (int i = 0; i < mask.n; ++i) {
      const T* p = probs.ptr() + (static_cast<std::size_t>(i) * 4 + c) * plane;
      const std::uint8_t* g = mask.labels.data() + static_cast<std::size_t>(i) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        sum_p += p[j];
        if (g[j] == c) {
          sum_pg += p[j];
          sum_g += 1.0;
        }
      }
    }
    const double num = 2.0 * sum_pg + eps;
    const double den = sum_p + sum_g + eps;
    mean_dice += num / den;
    const double inv_den2 = 1.0 / (den * den);
    for (int i = 0; i < mask.n; ++i) {
      T* dp = out.grad.ptr() + (static_cast<std::size_t>(i) * 4 + c) * plane;
      const std::uint8_t* g = mask.labels.data() + static_cast<std::size_t>(i) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        const double two_g = g[j] == c ? 2.0 : 0.0;
        dp[j] = T(-(two_g * den - num) * inv_den2 / 3.0);
      }
    }
  }
  out.value = 1.0 - mean_dice / 3.0;
  return out;
}

/// Focal loss averaged over pixels; p_t is the predicted probability of the
/// true class, floored at 1e-7.
template <typename T>
LossResult<T> focal_loss(const nn::TensorT<T>& probs, const LabelBatch& mask, double gamma = 2.0,
                         double alpha = 0.25) {
  require(probs.dim(0) == mask.n && probs.dim(2) == mask.h && probs.dim(3) == mask.w,
          "focal_loss: shape mismatch");
  require(gamma >= 0.0 && alpha > 0.0 && alpha <= 1.0, "focal_loss: bad gamma/alpha");
  constexpr double kFloor = 1e-7;
  const int ch = probs.dim(1);
  const std::size_t plane = static_cast<std::size_t>(mask.h) * mask.w;
  LossResult<T> out;
  out.grad = nn::TensorT<T>(probs.shape);
  const double inv_n = 1.0 / static_cast<double>(mask.size());
  double acc = 0.0;
  for (int i = 0; i < mask.n; ++i) {
    const std::uint8_t* g = mask.labels.data() + static_cast<std::size_t>(i) * plane;
    for (std::size_t j = 0; j < plane; ++j) {
      const std::size_t idx = (static_cast<std::size_t>(i) * ch + g[j]) * plane + j;
      const double p_raw = probs.data[idx];
      const double p = std::max(p_raw, kFloor);
      const double one_m = 1.0 - p;
      acc += -alpha * std::pow(one_m, gamma) * std::log(p);
      if (p_raw > kFloor) {
        const double dpow = gamma > 0.0 ? gamma * std::pow(one_m, gamma - 1.0) : 0.0;
        out.grad.data[idx] =
            T((alpha * dpow * std::log(p) - alpha * std::pow(one_m, gamma) / p) * inv_n);
      }
    }
  }
  out.value = acc * inv_n;
  return out;
}

struct LossWeights {
  double rec = 1.0, zrec = 1.0, dice = 1.0, focal = 1.0;

  static LossWeights labeled() { return {1.0, 1.0, 1.0, 1.0}; }
  static LossWeights unlabeled() { return {1.0, 1.0, 0.0, 0.0}; }
};

struct LossTerms {
  double rec = 0.0, zrec = 0.0, dice = 0.0, focal = 0.0;
};

/// Weighted objective; rejects non-finite terms by name.
inline double total_loss(const LossTerms& t, const LossWeights& w) {
  const std::pair<const char*, double> named[4] = {
      {"rec", t.rec}, {"zrec", t.zrec}, {"dice", t.dice}, {"focal", t.focal}};
  for (const auto& [name, v] : named)
    require(std::isfinite(v), "training diverged: loss term '", name, "' is non-finite");
  return w.rec * t.rec + w.zrec * t.zrec + w.dice * t.dice + w.focal * t.focal;
}

template <typename T>
struct LatentRegression {
  double value = 0.0;
  nn::TensorT<T> zhat;
  nn::TensorT<T> d_zhat;
};

/// Decode with a sampled modality vector, re-encode, L1 between the two.
/// Callers drive the module backward passes with d_zhat.
template <typename T>
LatentRegression<T> latent_regression_forward(model::Decoder<T>& dec,
                                              model::ModalityEncoder<T>& em,
                                              const nn::TensorT<T>& anatomy,
                                              const nn::TensorT<T>& z_sampled, bool training) {
  LatentRegression<T> out;
  auto generated = dec.forward(anatomy, z_sampled, training);
  out.zhat = em.forward(generated, training);
  auto l1 = l1_loss(out.zhat, z_sampled);
  out.value = l1.value;
  out.d_zhat = std::move(l1.grad);
  return out;
}

}  // namespace carseg
