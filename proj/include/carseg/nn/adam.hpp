// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <unordered_map>
#include <vector>

#include "carseg/nn/layers.hpp"

namespace carseg::nn {

/// Adam with per-parameter step counts, so that parameter groups left out of
/// a step (segmentation losses are switched off on unlabeled batches) stay
/// untouched, including their moment estimates.
template <typename T>
class AdamT {
 public:
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  explicit AdamT(double learning_rate = 1e-3) : lr(learning_rate) {}

  void step(const std::vector<ParamT<T>*>& params) {
    for (ParamT<T>* p : params) {
      Slot& s = slots_[p];
      if (s.m.empty()) {
        s.m = TensorT<T>::zeros(p->value.shape);
        s.v = TensorT<T>::zeros(p->value.shape);
      }
      ++s.t;
      const double bc1 = 1.0 - std::pow(beta1, s.t);
      const double bc2 = 1.0 - std::pow(beta2, s.t);
      for (std::size_t i = 0; i < p->value.data.size(); ++i) {
        const double g = p->grad.data[i];
        const double m = beta1 * s.m.data[i] + (1.0 - beta1) * g;
        const double v = beta2 * s.v.data[i] + (1.0 - beta2) * g * g;
        s.m.data[i] = T(m);
        s.v.data[i] = T(v);
        p->value.data[i] -= T(lr * (m / bc1) / (std::sqrt(v / bc2) + eps));
      }
    }
  }

  static void zero_grad(const std::vector<ParamT<T>*>& params) {
    for (ParamT<T>* p : params) p->grad.fill(T(0));
  }

 private:
  struct Slot {
    TensorT<T> m, v;
    long t = 0;
  };
  std::unordered_map<ParamT<T>*, Slot> slots_;
};

}  // namespace carseg::nn
