// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "carseg/model/blocks.hpp"
#include "carseg/nn/adam.hpp"
#include "carseg/nn/layers.hpp"
#include "gradcheck.hpp"

using namespace carseg;
using namespace carseg::nn;
using testutil::check_grad;
using testutil::dot;
using DTensor = TensorT<double>;

namespace {

// Reference convolution: direct triple loop, zero padding.
DTensor conv_reference(const DTensor& x, const DTensor& w, const DTensor& b, int k, int stride,
                       int pad) {
  const int n = x.dim(0), ic = x.dim(1), h = x.dim(2), ww = x.dim(3);
  const int oc = w.dim(0);
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (ww + 2 * pad - k) / stride + 1;
  DTensor y({n, oc, oh, ow});
  for (int i = 0; i < n; ++i)
    for (int o = 0; o < oc; ++o)
      for (int r = 0; r < oh; ++r)
        for (int c = 0; c < ow; ++c) {
          double acc = b.data[o];
          for (int ci = 0; ci < ic; ++ci)
            for (int ki = 0; ki < k; ++ki)
              for (int kj = 0; kj < k; ++kj) {
                const int iy = r * stride - pad + ki;
                const int ix = c * stride - pad + kj;
                if (iy < 0 || iy >= h || ix < 0 || ix >= ww) continue;
                acc += x.at4(i, ci, iy, ix) * w.data[(o * ic + ci) * std::size_t(k) * k + ki * k + kj];
              }
          y.at4(i, o, r, c) = acc;
        }
  return y;
}

template <typename Layer>
void check_layer_grads(Layer& layer, DTensor x, Rng& rng) {
  auto y0 = layer.forward(x, true);
  const DTensor w = DTensor::randn(y0.shape, rng);
  // pop the state pushed above and collect analytic input grad
  DTensor dx = layer.backward(w);

  auto loss = [&] {
    auto y = layer.forward(x, true);
    const double value = dot(y, w);
    layer.backward(DTensor::zeros(y.shape));  // pop state, grads accumulate zero
    return value;
  };
  check_grad(x, dx, loss);
}

}  // namespace

TEST_CASE("conv2d matches the direct-loop reference") {
  Rng rng(1);
  struct {
    int ic, oc, k, s, p, h, w;
  } cases[] = {{3, 4, 3, 1, 1, 6, 6}, {2, 5, 4, 2, 1, 8, 8}, {4, 3, 1, 1, 0, 5, 5},
               {2, 1, 7, 1, 3, 8, 8}};
  for (const auto& cs : cases) {
    Conv2d<double> conv;
    conv.init(cs.ic, cs.oc, cs.k, cs.s, cs.p, rng);
    for (auto& b : conv.bias.value.data) b = rng.normal() * 0.1;
    const DTensor x = DTensor::randn({2, cs.ic, cs.h, cs.w}, rng);
    const DTensor y = conv.forward(x, false);
    const DTensor ref = conv_reference(x, conv.weight.value, conv.bias.value, cs.k, cs.s, cs.p);
    REQUIRE(y.shape == ref.shape);
    for (std::size_t i = 0; i < y.data.size(); ++i)
      CHECK(y.data[i] == doctest::Approx(ref.data[i]).epsilon(1e-10));
  }
}

TEST_CASE("conv2d gradients (input, weight, bias) against finite differences") {
  Rng rng(2);
  struct {
    int ic, oc, k, s, p, h, w;
  } cases[] = {{3, 4, 3, 1, 1, 6, 6}, {2, 5, 4, 2, 1, 8, 8}, {4, 3, 1, 1, 0, 5, 5},
               {2, 1, 7, 1, 3, 8, 8}};
  for (const auto& cs : cases) {
    Conv2d<double> conv;
    conv.init(cs.ic, cs.oc, cs.k, cs.s, cs.p, rng);
    DTensor x = DTensor::randn({2, cs.ic, cs.h, cs.w}, rng);

    auto y0 = conv.forward(x, true);
    const DTensor w = DTensor::randn(y0.shape, rng);
    conv.weight.grad.fill(0);
    conv.bias.grad.fill(0);
    DTensor dx = conv.backward(w);

    auto loss = [&] {
      auto y = conv.forward(x, true);
      const double v = dot(y, w);
      conv.backward(DTensor::zeros(y.shape));
      return v;
    };
    check_grad(x, dx, loss);
    check_grad(conv.weight.value, conv.weight.grad, loss);
    check_grad(conv.bias.value, conv.bias.grad, loss);
  }
}

TEST_CASE("batch norm: train-mode grads, running stats, eval determinism") {
  Rng rng(3);
  BatchNorm2d<double> bn;
  bn.init(3);
  for (auto& g : bn.gamma.value.data) g = 1.0 + 0.3 * rng.normal();
  for (auto& b : bn.beta.value.data) b = 0.2 * rng.normal();
  DTensor x = DTensor::randn({2, 3, 4, 4}, rng);

  auto y0 = bn.forward(x, true);
  const DTensor w = DTensor::randn(y0.shape, rng);
  bn.gamma.grad.fill(0);
  bn.beta.grad.fill(0);
  DTensor dx = bn.backward(w);
  auto loss = [&] {
    auto y = bn.forward(x, true);
    const double v = dot(y, w);
    bn.backward(DTensor::zeros(y.shape));
    return v;
  };
  check_grad(x, dx, loss);
  check_grad(bn.gamma.value, bn.gamma.grad, loss);
  check_grad(bn.beta.value, bn.beta.grad, loss);

  SUBCASE("train-mode output is normalized per channel") {
    auto y = bn.forward(x, true);
    bn.backward(DTensor::zeros(y.shape));
    for (int c = 0; c < 3; ++c) {
      double s = 0;
      for (int i = 0; i < 2; ++i)
        for (int r = 0; r < 4; ++r)
          for (int q = 0; q < 4; ++q) s += (y.at4(i, c, r, q) - bn.beta.value.data[c]);
      CHECK(std::abs(s / 32.0) < 1e-9);
    }
  }
  SUBCASE("eval mode is deterministic and uses running stats") {
    const auto y1 = bn.forward(x, false);
    const auto y2 = bn.forward(x, false);
    CHECK(y1.data == y2.data);
  }
}

TEST_CASE("pointwise and shape layers against finite differences") {
  Rng rng(4);
  SUBCASE("relu") {
    ReLU<double> l;
    check_layer_grads(l, DTensor::randn({2, 3, 4, 4}, rng), rng);
  }
  SUBCASE("sigmoid") {
    Sigmoid<double> l;
    check_layer_grads(l, DTensor::randn({2, 3, 4, 4}, rng), rng);
  }
  SUBCASE("tanh") {
    Tanh<double> l;
    check_layer_grads(l, DTensor::randn({2, 3, 4, 4}, rng), rng);
  }
  SUBCASE("softmax over channels") {
    SoftmaxChannel<double> l;
    check_layer_grads(l, DTensor::randn({2, 4, 3, 3}, rng), rng);
  }
  SUBCASE("max pool 2x2") {
    MaxPool2<double> l;
    check_layer_grads(l, DTensor::randn({2, 2, 6, 6}, rng), rng);
  }
  SUBCASE("nearest upsample x2") {
    UpsampleNearest2<double> l;
    check_layer_grads(l, DTensor::randn({2, 3, 4, 4}, rng), rng);
  }
  SUBCASE("global average pool") {
    GlobalAvgPool<double> l;
    check_layer_grads(l, DTensor::randn({3, 4, 5, 5}, rng), rng);
  }
}

TEST_CASE("linear layer gradients") {
  Rng rng(5);
  Linear<double> fc;
  fc.init(5, 4, rng);
  DTensor x = DTensor::randn({3, 5}, rng);
  auto y0 = fc.forward(x, true);
  const DTensor w = DTensor::randn(y0.shape, rng);
  fc.weight.grad.fill(0);
  fc.bias.grad.fill(0);
  DTensor dx = fc.backward(w);
  auto loss = [&] {
    auto y = fc.forward(x, true);
    const double v = dot(y, w);
    fc.backward(DTensor::zeros(y.shape));
    return v;
  };
  check_grad(x, dx, loss);
  check_grad(fc.weight.value, fc.weight.grad, loss);
  check_grad(fc.bias.value, fc.bias.grad, loss);
}

TEST_CASE("adain gradients for input, gamma and beta") {
  Rng rng(6);
  AdaIN<double> adain;
  DTensor x = DTensor::randn({2, 3, 4, 4}, rng);
  DTensor gamma = DTensor::randn({2, 3}, rng);
  DTensor beta = DTensor::randn({2, 3}, rng);

  auto y0 = adain.forward(x, gamma, beta, true);
  const DTensor w = DTensor::randn(y0.shape, rng);
  auto grads = adain.backward(w);
  auto loss = [&] {
    auto y = adain.forward(x, gamma, beta, true);
    const double v = dot(y, w);
    adain.backward(DTensor::zeros(y.shape));
    return v;
  };
  check_grad(x, grads.dx, loss);
  check_grad(gamma, grads.dgamma, loss);
  check_grad(beta, grads.dbeta, loss);
}

TEST_CASE("lifo state stacks allow two passes through one module") {
  Rng rng(7);
  Conv2d<double> conv;
  conv.init(2, 2, 3, 1, 1, rng);
  DTensor x1 = DTensor::randn({1, 2, 5, 5}, rng);
  DTensor x2 = DTensor::randn({1, 2, 5, 5}, rng);

  auto y1 = conv.forward(x1, true);
  auto y2 = conv.forward(x2, true);
  const DTensor w1 = DTensor::randn(y1.shape, rng);
  const DTensor w2 = DTensor::randn(y2.shape, rng);
  conv.weight.grad.fill(0);
  conv.bias.grad.fill(0);
  DTensor dx2 = conv.backward(w2);  // reverse order
  DTensor dx1 = conv.backward(w1);

  auto loss = [&] {
    auto a = conv.forward(x1, true);
    auto b = conv.forward(x2, true);
    const double v = dot(a, w1) + dot(b, w2);
    conv.backward(DTensor::zeros(b.shape));
    conv.backward(DTensor::zeros(a.shape));
    return v;
  };
  check_grad(x1, dx1, loss);
  check_grad(x2, dx2, loss);
  check_grad(conv.weight.value, conv.weight.grad, loss);  // grads accumulate across both passes
}

TEST_CASE("conv+bn+relu block composition gradient") {
  Rng rng(8);
  model::ConvBnRelu<double> block;
  block.init(2, 3, rng);
  DTensor x = DTensor::randn({2, 2, 4, 4}, rng);
  auto y0 = block.forward(x, true);
  const DTensor w = DTensor::randn(y0.shape, rng);
  block.conv.weight.grad.fill(0);
  block.conv.bias.grad.fill(0);
  block.bn.gamma.grad.fill(0);
  block.bn.beta.grad.fill(0);
  DTensor dx = block.backward(w);
  auto loss = [&] {
    auto y = block.forward(x, true);
    const double v = dot(y, w);
    block.backward(DTensor::zeros(y.shape));
    return v;
  };
  check_grad(x, dx, loss);
  check_grad(block.conv.weight.value, block.conv.weight.grad, loss);
  check_grad(block.bn.gamma.value, block.bn.gamma.grad, loss);
}

TEST_CASE("adam converges on a quadratic and leaves skipped params untouched") {
  Rng rng(9);
  ParamT<double> a, b;
  a.init_randn({4}, rng, 1.0);
  b.init_randn({4}, rng, 1.0);
  const DTensor b_before = b.value;
  AdamT<double> opt(0.05);
  for (int it = 0; it < 400; ++it) {
    for (std::size_t i = 0; i < 4; ++i) a.grad.data[i] = 2.0 * (a.value.data[i] - 1.5);
    opt.step({&a});
    AdamT<double>::zero_grad({&a});
  }
  for (double v : a.value.data) CHECK(v == doctest::Approx(1.5).epsilon(1e-3));
  CHECK(b.value.data == b_before.data);
}
