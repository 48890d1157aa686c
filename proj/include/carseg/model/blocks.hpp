// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "carseg/nn/layers.hpp"

namespace carseg::model {

template <typename T>
using NamedParams = std::vector<std::pair<std::string, nn::ParamT<T>*>>;

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, nn::TensorT<T>*>>;

/// conv3x3 (same padding) + batch norm + ReLU.
template <typename T>
struct ConvBnRelu {
  nn::Conv2d<T> conv;
  nn::BatchNorm2d<T> bn;
  nn::ReLU<T> relu;

  void init(int in, int out, Rng& rng) {
    conv.init(in, out, 3, 1, 1, rng);
    bn.init(out);
  }

  nn::TensorT<T> forward(const nn::TensorT<T>& x, bool training) {
    return relu.forward(bn.forward(conv.forward(x, training), training), training);
  }
  nn::TensorT<T> backward(const nn::TensorT<T>& dy) {
    return conv.backward(bn.backward(relu.backward(dy)));
  }

  void collect_params(const std::string& prefix, NamedParams<T>& out) {
    out.emplace_back(prefix + ".conv.w", &conv.weight);
    out.emplace_back(prefix + ".conv.b", &conv.bias);
    out.emplace_back(prefix + ".bn.gamma", &bn.gamma);
    out.emplace_back(prefix + ".bn.beta", &bn.beta);
  }
  void collect_buffers(const std::string& prefix, NamedTensors<T>& out) {
    out.emplace_back(prefix + ".bn.running_mean", &bn.running_mean);
    out.emplace_back(prefix + ".bn.running_var", &bn.running_var);
  }
};

}  // namespace carseg::model
