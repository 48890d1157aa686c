// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "carseg/model/blocks.hpp"

namespace carseg::model {

constexpr int kAnatomyChannels = 8;
constexpr int kUnetWidths[4] = {16, 32, 64, 128};

/// U-Net trunk: 4 downsampling and 4 upsampling stages with skip connections,
/// producing a 16-channel feature map at input resolution. Input dims must be
/// divisible by 16.
template <typename T>
struct UNetTrunk {
  ConvBnRelu<T> d1, d2, d3, d4, bott, r4, r3, r2, r1;
  nn::MaxPool2<T> p1, p2, p3, p4;
  nn::UpsampleNearest2<T> u4, u3, u2, u1;

  void init(int in_ch, Rng& rng) {
    d1.init(in_ch, 16, rng);
    d2.init(16, 32, rng);
    d3.init(32, 64, rng);
    d4.init(64, 128, rng);
    bott.init(128, 128, rng);
    r4.init(256, 64, rng);
    r3.init(128, 32, rng);
    r2.init(64, 16, rng);
    r1.init(32, 16, rng);
  }

  nn::TensorT<T> forward(const nn::TensorT<T>& x, bool training) {
    require(x.dim(2) % 16 == 0 && x.dim(3) % 16 == 0, "input dims ", x.dim(2), "x", x.dim(3),
            " not divisible by 16");
    auto a1 = d1.forward(x, training);
    auto a2 = d2.forward(p1.forward(a1, training), training);
    auto a3 = d3.forward(p2.forward(a2, training), training);
    auto a4 = d4.forward(p3.forward(a3, training), training);
    auto b = bott.forward(p4.forward(a4, training), training);
    auto y4 = r4.forward(nn::concat_channels(u4.forward(b, training), a4), training);
    auto y3 = r3.forward(nn::concat_channels(u3.forward(y4, training), a3), training);
    auto y2 = r2.forward(nn::concat_channels(u2.forward(y3, training), a2), training);
    return r1.forward(nn::concat_channels(u1.forward(y2, training), a1), training);
  }

  nn::TensorT<T> backward(const nn::TensorT<T>& dy) {
    auto [dup1, da1_skip] = nn::split_channels(r1.backward(dy), 16);
    auto [dup2, da2_skip] = nn::split_channels(r2.backward(u1.backward(dup1)), 32);
    auto [dup3, da3_skip] = nn::split_channels(r3.backward(u2.backward(dup2)), 64);
    auto [dup4, da4_skip] = nn::split_channels(r4.backward(u3.backward(dup3)), 128);
    auto da4 = p4.backward(bott.backward(u4.backward(dup4)));
    da4 += da4_skip;
    auto da3 = p3.backward(d4.backward(da4));
    da3 += da3_skip;
    auto da2 = p2.backward(d3.backward(da3));
    da2 += da2_skip;
    auto da1 = p1.backward(d2.backward(da2));
    da1 += da1_skip;
    return d1.backward(da1);
  }

  void collect_params(const std::string& prefix, NamedParams<T>& out) {
    d1.collect_params(prefix + ".d1", out);
    d2.collect_params(prefix + ".d2", out);
    d3.collect_params(prefix + ".d3", out);
    d4.collect_params(prefix + ".d4", out);
    bott.collect_params(prefix + ".bott", out);
    r4.collect_params(prefix + ".r4", out);
    r3.collect_params(prefix + ".r3", out);
    r2.collect_params(prefix + ".r2", out);
    r1.collect_params(prefix + ".r1", out);
  }
  void collect_buffers(const std::string& prefix, NamedTensors<T>& out) {
    d1.collect_buffers(prefix + ".d1", out);
    d2.collect_buffers(prefix + ".d2", out);
    d3.collect_buffers(prefix + ".d3", out);
    d4.collect_buffers(prefix + ".d4", out);
    bott.collect_buffers(prefix + ".bott", out);
    r4.collect_buffers(prefix + ".r4", out);
    r3.collect_buffers(prefix + ".r3", out);
    r2.collect_buffers(prefix + ".r2", out);
    r1.collect_buffers(prefix + ".r1", out);
  }
};

template <typename T>
struct AnatomyOut {
  nn::TensorT<T> pre;  // sigmoid output in [0,1], kept for gradient flow
  nn::TensorT<T> binary;
};

/// Anatomy encoder: U-Net trunk + 8-channel head, squashed to [0,1] and
/// binarized by the straight-through rounding operator.
template <typename T>
struct AnatomyEncoder {
  UNetTrunk<T> trunk;
  nn::Conv2d<T> head;
  nn::Sigmoid<T> sigmoid;
  nn::RoundSTE<T> ste;

  void init(Rng& rng) {
    trunk.init(1, rng);
    head.init(16, kAnatomyChannels, 3, 1, 1, rng);
  }

  AnatomyOut<T> forward(const nn::TensorT<T>& x, bool training) {
    auto pre = sigmoid.forward(head.forward(trunk.forward(x, training), training), training);
    auto bin = ste.forward(pre, training);
    return {std::move(pre), std::move(bin)};
  }

  nn::TensorT<T> backward(const nn::TensorT<T>& d_binary) {
    return trunk.backward(head.backward(sigmoid.backward(ste.backward(d_binary))));
  }

  void collect_params(const std::string& prefix, NamedParams<T>& out) {
    trunk.collect_params(prefix + ".trunk", out);
    out.emplace_back(prefix + ".head.w", &head.weight);
    out.emplace_back(prefix + ".head.b", &head.bias);
  }
  void collect_buffers(const std::string& prefix, NamedTensors<T>& out) {
    trunk.collect_buffers(prefix + ".trunk", out);
  }
};

}  // namespace carseg::model
