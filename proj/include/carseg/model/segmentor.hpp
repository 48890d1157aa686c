// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "carseg/model/blocks.hpp"

namespace carseg::model {

constexpr int kNumClasses = 4;  // BG, LV, MYO, RV

/// Two 3x3 conv+BN+ReLU blocks and a 1x1 classifier over the thresholded
/// anatomy factor, with a channel-wise softmax.
template <typename T>
struct Segmentor {
  ConvBnRelu<T> b1, b2;
  nn::Conv2d<T> cls;
  nn::SoftmaxChannel<T> softmax;

  void init(Rng& rng) {
    b1.init(8, 16, rng);
    b2.init(16, 16, rng);
    cls.init(16, kNumClasses, 1, 1, 0, rng);
  }

  nn::TensorT<T> forward(const nn::TensorT<T>& anatomy, bool training) {
    auto h = b2.forward(b1.forward(anatomy, training), training);
    return softmax.forward(cls.forward(h, training), training);
  }

  nn::TensorT<T> backward(const nn::TensorT<T>& dprobs) {
    return b1.backward(b2.backward(cls.backward(softmax.backward(dprobs))));
  }

  void collect_params(const std::string& prefix, NamedParams<T>& out) {
    b1.collect_params(prefix + ".b1", out);
    b2.collect_params(prefix + ".b2", out);
    out.emplace_back(prefix + ".cls.w", &cls.weight);
    out.emplace_back(prefix + ".cls.b", &cls.bias);
  }
  void collect_buffers(const std::string& prefix, NamedTensors<T>& out) {
    b1.collect_buffers(prefix + ".b1", out);
    b2.collect_buffers(prefix + ".b2", out);
  }
};

}  // namespace carseg::model
