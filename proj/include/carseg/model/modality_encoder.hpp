// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "carseg/model/blocks.hpp"

namespace carseg::model {

constexpr int kModalityDim = 8;

/// Two stride-2 4x4 convolutions, global average pooling and an MLP down to
/// the 8-dimensional modality factor. The pooling removes all spatial dims,
/// so the factor size is independent of the input resolution.
template <typename T>
struct ModalityEncoder {
  nn::Conv2d<T> c1, c2;
  nn::ReLU<T> a1, a2, a3;
  nn::GlobalAvgPool<T> gap;
  nn::Linear<T> fc1, fc2;

  void init(Rng& rng) {
    c1.init(1, 16, 4, 2, 1, rng);
    c2.init(16, 32, 4, 2, 1, rng);
    fc1.init(32, 32, rng);
    fc2.init(32, kModalityDim, rng);
  }

  nn::TensorT<T> forward(const nn::TensorT<T>& x, bool training) {
    auto h = a1.forward(c1.forward(x, training), training);
    h = a2.forward(c2.forward(h, training), training);
    auto v = gap.forward(h, training);
    v = a3.forward(fc1.forward(v, training), training);
    return fc2.forward(v, training);
  }

  nn::TensorT<T> backward(const nn::TensorT<T>& dz) {
    auto dv = fc1.backward(a3.backward(fc2.backward(dz)));
    auto dh = c2.backward(a2.backward(gap.backward(dv)));
    return c1.backward(a1.backward(dh));
  }

  void collect_params(const std::string& prefix, NamedParams<T>& out) {
    out.emplace_back(prefix + ".c1.w", &c1.weight);
    out.emplace_back(prefix + ".c1.b", &c1.bias);
    out.emplace_back(prefix + ".c2.w", &c2.weight);
    out.emplace_back(prefix + ".c2.b", &c2.bias);
    out.emplace_back(prefix + ".fc1.w", &fc1.weight);
    out.emplace_back(prefix + ".fc1.b", &fc1.bias);
    out.emplace_back(prefix + ".fc2.w", &fc2.weight);
    out.emplace_back(prefix + ".fc2.b", &fc2.bias);
  }
  void collect_buffers(const std::string&, NamedTensors<T>&) {}
};

}  // namespace carseg::model
