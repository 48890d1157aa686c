// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "carseg/model/anatomy_encoder.hpp"
#include "carseg/model/modality_encoder.hpp"

namespace carseg::model {

/// AdaIN decoder: three 3x3 conv + AdaIN + ReLU stages conditioned on the
/// modality factor, then a 7x7 reconstruction conv with tanh. A shared MLP
/// maps the 8-dim modality factor to (gamma, beta) for each AdaIN layer;
/// gamma is parameterized as 1 + delta so training starts near plain
/// instance normalization.
template <typename T>
struct Decoder {
  static constexpr int kWidth = 16;
  static constexpr int kStages = 3;

  nn::Linear<T> mlp1, mlp2;
  nn::ReLU<T> mlp_act;
  nn::Conv2d<T> conv[kStages];
  nn::AdaIN<T> adain[kStages];
  nn::ReLU<T> act[kStages];
  nn::Conv2d<T> out_conv;
  nn::Tanh<T> tanh;

  void init(Rng& rng) {
    mlp1.init(kModalityDim, 64, rng);
    mlp2.init(64, 2 * kWidth * kStages, rng, 0.1);
    conv[0].init(kAnatomyChannels, kWidth, 3, 1, 1, rng);
    conv[1].init(kWidth, kWidth, 3, 1, 1, rng);
    conv[2].init(kWidth, kWidth, 3, 1, 1, rng);
    out_conv.init(kWidth, 1, 7, 1, 3, rng);
  }

  nn::TensorT<T> forward(const nn::TensorT<T>& anatomy, const nn::TensorT<T>& z, bool training) {
    const int n = z.dim(0);
    auto h = mlp2.forward(mlp_act.forward(mlp1.forward(z, training), training), training);
    nn::TensorT<T> y = anatomy;
    for (int s = 0; s < kStages; ++s) {
      nn::TensorT<T> gamma({n, kWidth}), beta({n, kWidth});
      for (int i = 0; i < n; ++i)
        for (int c = 0; c < kWidth; ++c) {
          gamma.at2(i, c) = T(1) + h.at2(i, 2 * kWidth * s + c);
          beta.at2(i, c) = h.at2(i, 2 * kWidth * s + kWidth + c);
        }
      y = act[s].forward(adain[s].forward(conv[s].forward(y, training), gamma, beta, training),
                         training);
    }
    return tanh.forward(out_conv.forward(y, training), training);
  }

  struct Grads {
    nn::TensorT<T> d_anatomy;
    nn::TensorT<T> d_z;
  };

  Grads backward(const nn::TensorT<T>& d_out) {
    auto dy = out_conv.backward(tanh.backward(d_out));
    const int n = dy.dim(0);
    nn::TensorT<T> dh({n, 2 * kWidth * kStages});
    for (int s = kStages - 1; s >= 0; --s) {
      auto g = adain[s].backward(act[s].backward(dy));
      dy = conv[s].backward(g.dx);
      for (int i = 0; i < n; ++i)
        for (int c = 0; c < kWidth; ++c) {
          dh.at2(i, 2 * kWidth * s + c) = g.dgamma.at2(i, c);
          dh.at2(i, 2 * kWidth * s + kWidth + c) = g.dbeta.at2(i, c);
        }
    }
    Grads out;
    out.d_anatomy = std::move(dy);
    out.d_z = mlp1.backward(mlp_act.backward(mlp2.backward(dh)));
    return out;
  }

  void collect_params(const std::string& prefix, NamedParams<T>& out) {
    out.emplace_back(prefix + ".mlp1.w", &mlp1.weight);
    out.emplace_back(prefix + ".mlp1.b", &mlp1.bias);
    out.emplace_back(prefix + ".mlp2.w", &mlp2.weight);
    out.emplace_back(prefix + ".mlp2.b", &mlp2.bias);
    for (int s = 0; s < kStages; ++s) {
      const std::string p = prefix + ".conv" + std::to_string(s + 1);
      out.emplace_back(p + ".w", &conv[s].weight);
      out.emplace_back(p + ".b", &conv[s].bias);
    }
    out.emplace_back(prefix + ".out.w", &out_conv.weight);
    out.emplace_back(prefix + ".out.b", &out_conv.bias);
  }
  void collect_buffers(const std::string&, NamedTensors<T>&) {}
};

}  // namespace carseg::model
