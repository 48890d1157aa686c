// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "carseg/model/anatomy_encoder.hpp"
#include "carseg/model/segmentor.hpp"

namespace carseg::model {

/// Baseline segmentation U-Net: the anatomy-encoder trunk with a direct
/// 4-class 1x1 head and channel-wise softmax.
template <typename T>
struct UNetSegT {
  UNetTrunk<T> trunk;
  nn::Conv2d<T> head;
  nn::SoftmaxChannel<T> softmax;

  void init(std::uint64_t seed) {
    Rng rng(seed, 0x0e7u);
    trunk.init(1, rng);
    head.init(16, kNumClasses, 1, 1, 0, rng);
  }

  nn::TensorT<T> forward(const nn::TensorT<T>& image, bool training) {
    return softmax.forward(head.forward(trunk.forward(image, training), training), training);
  }
  nn::TensorT<T> backward(const nn::TensorT<T>& dprobs) {
    return trunk.backward(head.backward(softmax.backward(dprobs)));
  }

  NamedParams<T> named_params() {
    NamedParams<T> out;
    trunk.collect_params("trunk", out);
    out.emplace_back("head.w", &head.weight);
    out.emplace_back("head.b", &head.bias);
    return out;
  }
  NamedTensors<T> named_buffers() {
    NamedTensors<T> out;
    trunk.collect_buffers("trunk", out);
    return out;
  }
  std::vector<nn::ParamT<T>*> all_params() {
    std::vector<nn::ParamT<T>*> out;
    for (auto& [name, p] : named_params()) out.push_back(p);
    return out;
  }

  static std::string arch_descriptor() {
    return R"({"model":"unet","classes":4,"unet_widths":[16,32,64,128]})";
  }
};

using UNetSeg = UNetSegT<float>;

}  // namespace carseg::model
