// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "carseg/nn/blas.hpp"
#include "carseg/nn/tensor.hpp"
#include "carseg/rng.hpp"

// Layer library with explicit forward/backward passes. Every layer pushes the
// state needed for its backward pass onto an internal stack when forward runs
// with training=true, and pops it in backward. The stacks make it safe to run
// a module several times inside one step (the decoder and modality encoder
// both run twice); backward calls must mirror forward calls in reverse order.
namespace carseg::nn {

template <typename T>
struct ParamT {
  TensorT<T> value;
  TensorT<T> grad;

  void init_zeros(std::vector<int> shape) {
    value = TensorT<T>::zeros(shape);
    grad = TensorT<T>::zeros(std::move(shape));
  }
  void init_randn(std::vector<int> shape, Rng& rng, double stddev) {
    value = TensorT<T>::randn(shape, rng, stddev);
    grad = TensorT<T>::zeros(std::move(shape));
  }
  void init_full(std::vector<int> shape, T v) {
    value = TensorT<T>::full(shape, v);
    grad = TensorT<T>::zeros(std::move(shape));
  }
};

namespace detail {

template <typename T>
void im2col(const T* x, int channels, int h, int w, int k, int stride, int pad, int oh, int ow,
            T* col) {
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* dst = col + (static_cast<std::size_t>((c * k + ki) * k + kj)) * oh * ow;
        for (int oy = 0; oy < oh; ++oy, dst += ow) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) {
            std::memset(dst, 0, sizeof(T) * ow);
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * h + iy) * w;
          // valid ox range: 0 <= ox*stride - pad + kj < w
          int lo = 0;
          while (lo < ow && lo * stride - pad + kj < 0) ++lo;
          int hi = ow;
          while (hi > lo && (hi - 1) * stride - pad + kj >= w) --hi;
          if (lo > 0) std::memset(dst, 0, sizeof(T) * lo);
          if (hi < ow) std::memset(dst + hi, 0, sizeof(T) * (ow - hi));
          if (stride == 1) {
            if (hi > lo) std::memcpy(dst + lo, src + (lo - pad + kj), sizeof(T) * (hi - lo));
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * stride - pad + kj];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int channels, int h, int w, int k, int stride, int pad, int oh, int ow,
            T* x) {
  std::memset(x, 0, sizeof(T) * channels * h * w);
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* src = col + (static_cast<std::size_t>((c * k + ki) * k + kj)) * oh * ow;
        for (int oy = 0; oy < oh; ++oy, src += ow) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) continue;
          T* dst = x + (static_cast<std::size_t>(c) * h + iy) * w;
          int lo = 0;
          while (lo < ow && lo * stride - pad + kj < 0) ++lo;
          int hi = ow;
          while (hi > lo && (hi - 1) * stride - pad + kj >= w) --hi;
          for (int ox = lo; ox < hi; ++ox) dst[ox * stride - pad + kj] += src[ox];
        }
      }
    }
  }
}

template <typename T>
std::vector<T>& col_scratch() {
  static thread_local std::vector<T> buf;
  return buf;
}

template <typename T>
std::vector<T>& dcol_scratch() {
  static thread_local std::vector<T> buf;
  return buf;
}

}  // namespace detail

template <typename T>
struct Conv2d {
  int in_ch = 0, out_ch = 0, ksize = 0, stride = 1, pad = 0;
  ParamT<T> weight;  // [out_ch, in_ch*k*k]
  ParamT<T> bias;    // [out_ch]
  std::vector<TensorT<T>> saved_x;

  void init(int in, int out, int k, int s, int p, Rng& rng, double weight_scale = 1.0) {
    in_ch = in;
    out_ch = out;
    ksize = k;
    stride = s;
    pad = p;
    const double fan_in = static_cast<double>(in) * k * k;
    weight.init_randn({out, in * k * k}, rng, weight_scale * std::sqrt(2.0 / fan_in));
    bias.init_zeros({out});
  }

  int out_dim(int d) const { return (d + 2 * pad - ksize) / stride + 1; }

  // Large kernels with few output channels (the 7x7 reconstruction head) are
  // far cheaper as direct sliding-window loops than as an im2col GEMM whose
  // column matrix would be k*k times the input size.
  bool use_direct() const { return stride == 1 && ksize >= 5; }

  TensorT<T> forward(const TensorT<T>& x, bool training) {
    if (use_direct()) {
      TensorT<T> y = forward_direct(x);
      if (training) saved_x.push_back(x);
      return y;
    }
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int oh = out_dim(h), ow = out_dim(w);
    const int k2 = in_ch * ksize * ksize;
    TensorT<T> y({n, out_ch, oh, ow});
    const bool unit = (ksize == 1 && stride == 1 && pad == 0);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
      const T* xi = x.ptr() + static_cast<std::size_t>(i) * in_ch * h * w;
      const T* mat = xi;
      if (!unit) {
        auto& col = detail::col_scratch<T>();
        col.resize(static_cast<std::size_t>(k2) * oh * ow);
        detail::im2col(xi, in_ch, h, w, ksize, stride, pad, oh, ow, col.data());
        mat = col.data();
      }
      T* yi = y.ptr() + static_cast<std::size_t>(i) * out_ch * oh * ow;
      gemm(false, false, out_ch, oh * ow, k2, T(1), weight.value.ptr(), k2, mat, oh * ow, T(0),
           yi, oh * ow);
      for (int c = 0; c < out_ch; ++c) {
        const T b = bias.value.data[c];
        T* row = yi + static_cast<std::size_t>(c) * oh * ow;
        for (int j = 0; j < oh * ow; ++j) row[j] += b;
      }
    }
    if (training) saved_x.push_back(x);
    return y;
  }

  TensorT<T> backward(const TensorT<T>& dy) {
    if (use_direct()) {
      TensorT<T> x = std::move(saved_x.back());
      saved_x.pop_back();
      return backward_direct(x, dy);
    }
    TensorT<T> x = std::move(saved_x.back());
    saved_x.pop_back();
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int oh = dy.dim(2), ow = dy.dim(3);
    const int k2 = in_ch * ksize * ksize;
    TensorT<T> dx({n, in_ch, h, w});
    const bool unit = (ksize == 1 && stride == 1 && pad == 0);
    const std::size_t wsize = weight.grad.data.size();
    // per-image weight/bias gradient slabs, reduced in index order below so
    // the result does not depend on the thread schedule
    std::vector<T> wslab(static_cast<std::size_t>(n) * wsize, T(0));
    std::vector<T> bslab(static_cast<std::size_t>(n) * out_ch, T(0));
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
      const T* xi = x.ptr() + static_cast<std::size_t>(i) * in_ch * h * w;
      const T* dyi = dy.ptr() + static_cast<std::size_t>(i) * out_ch * oh * ow;
      const T* mat = xi;
      if (!unit) {
        auto& col = detail::col_scratch<T>();
        col.resize(static_cast<std::size_t>(k2) * oh * ow);
        detail::im2col(xi, in_ch, h, w, ksize, stride, pad, oh, ow, col.data());
        mat = col.data();
      }
      // dW_i = dy_i * col^T, db_i = rowsum(dy_i)
      gemm(false, true, out_ch, k2, oh * ow, T(1), dyi, oh * ow, mat, oh * ow, T(0),
           wslab.data() + static_cast<std::size_t>(i) * wsize, k2);
      for (int c = 0; c < out_ch; ++c) {
        const T* row = dyi + static_cast<std::size_t>(c) * oh * ow;
        T s = 0;
        for (int j = 0; j < oh * ow; ++j) s += row[j];
        bslab[static_cast<std::size_t>(i) * out_ch + c] = s;
      }
      // dcol = W^T * dy_i, dx_i = col2im(dcol)
      T* dxi = dx.ptr() + static_cast<std::size_t>(i) * in_ch * h * w;
      if (unit) {
        gemm(true, false, k2, oh * ow, out_ch, T(1), weight.value.ptr(), k2, dyi, oh * ow, T(0),
             dxi, oh * ow);
      } else {
        auto& dcol = detail::dcol_scratch<T>();
        dcol.resize(static_cast<std::size_t>(k2) * oh * ow);
        gemm(true, false, k2, oh * ow, out_ch, T(1), weight.value.ptr(), k2, dyi, oh * ow, T(0),
             dcol.data(), oh * ow);
        detail::col2im(dcol.data(), in_ch, h, w, ksize, stride, pad, oh, ow, dxi);
      }
    }
    for (int i = 0; i < n; ++i) {
      const T* ws = wslab.data() + static_cast<std::size_t>(i) * wsize;
      for (std::size_t j = 0; j < wsize; ++j) weight.grad.data[j] += ws[j];
      for (int c = 0; c < out_ch; ++c) bias.grad.data[c] += bslab[static_cast<std::size_t>(i) * out_ch + c];
    }
    return dx;
  }

 private:
  TensorT<T> forward_direct(const TensorT<T>& x) const {
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int oh = out_dim(h), ow = out_dim(w);
    TensorT<T> y({n, out_ch, oh, ow});
    const std::size_t in_plane = static_cast<std::size_t>(h) * w;
    const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i)
      for (int o = 0; o < out_ch; ++o) {
        T* yp = y.ptr() + (static_cast<std::size_t>(i) * out_ch + o) * out_plane;
        std::fill(yp, yp + out_plane, bias.value.data[o]);
        for (int c = 0; c < in_ch; ++c) {
          const T* xp = x.ptr() + (static_cast<std::size_t>(i) * in_ch + c) * in_plane;
          const T* wr = weight.value.ptr() + (static_cast<std::size_t>(o) * in_ch + c) * ksize * ksize;
          for (int ki = 0; ki < ksize; ++ki)
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy - pad + ki;
              if (iy < 0 || iy >= h) continue;
              T* yrow = yp + static_cast<std::size_t>(oy) * ow;
              const T* xrow = xp + static_cast<std::size_t>(iy) * w;
              for (int kj = 0; kj < ksize; ++kj) {
                const T wv = wr[ki * ksize + kj];
                const int off = kj - pad;
                const int lo = std::max(0, -off);
                const int hi = std::min(ow, w - off);
                for (int ox = lo; ox < hi; ++ox) yrow[ox] += wv * xrow[ox + off];
              }
            }
        }
      }
    return y;
  }

  TensorT<T> backward_direct(const TensorT<T>& x, const TensorT<T>& dy) {
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int oh = dy.dim(2), ow = dy.dim(3);
    const std::size_t in_plane = static_cast<std::size_t>(h) * w;
    const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
    TensorT<T> dx(x.shape);
    const std::size_t wsize = weight.grad.data.size();
    std::vector<double> wslab(static_cast<std::size_t>(n) * wsize, 0.0);
    std::vector<double> bslab(static_cast<std::size_t>(n) * out_ch, 0.0);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i)
      for (int o = 0; o < out_ch; ++o) {
        std::vector<double> wacc(static_cast<std::size_t>(ksize) * ksize);
        const T* dyp = dy.ptr() + (static_cast<std::size_t>(i) * out_ch + o) * out_plane;
        double bsum = 0;
        for (std::size_t j = 0; j < out_plane; ++j) bsum += dyp[j];
        bslab[static_cast<std::size_t>(i) * out_ch + o] = bsum;
        for (int c = 0; c < in_ch; ++c) {
          const T* xp = x.ptr() + (static_cast<std::size_t>(i) * in_ch + c) * in_plane;
          T* dxp = dx.ptr() + (static_cast<std::size_t>(i) * in_ch + c) * in_plane;
          const T* wr = weight.value.ptr() + (static_cast<std::size_t>(o) * in_ch + c) * ksize * ksize;
          double* wg = wslab.data() + static_cast<std::size_t>(i) * wsize +
                       (static_cast<std::size_t>(o) * in_ch + c) * ksize * ksize;
          std::fill(wacc.begin(), wacc.end(), 0.0);
          for (int ki = 0; ki < ksize; ++ki)
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy - pad + ki;
              if (iy < 0 || iy >= h) continue;
              const T* dyrow = dyp + static_cast<std::size_t>(oy) * ow;
              const T* xrow = xp + static_cast<std::size_t>(iy) * w;
              T* dxrow = dxp + static_cast<std::size_t>(iy) * w;
              for (int kj = 0; kj < ksize; ++kj) {
                const int off = kj - pad;
                const int lo = std::max(0, -off);
                const int hi = std::min(ow, w - off);
                const T wv = wr[ki * ksize + kj];
                double acc = 0;
                for (int ox = lo; ox < hi; ++ox) {
                  acc += double(dyrow[ox]) * xrow[ox + off];
                  dxrow[ox + off] += wv * dyrow[ox];
                }
                wacc[static_cast<std::size_t>(ki) * ksize + kj] += acc;
              }
            }
          for (std::size_t j = 0; j < wacc.size(); ++j) wg[j] += wacc[j];
        }
      }
    for (int i = 0; i < n; ++i) {
      const double* ws = wslab.data() + static_cast<std::size_t>(i) * wsize;
      for (std::size_t j = 0; j < wsize; ++j) weight.grad.data[j] += T(ws[j]);
      for (int o = 0; o < out_ch; ++o)
        bias.grad.data[o] += T(bslab[static_cast<std::size_t>(i) * out_ch + o]);
    }
    return dx;
  }
};

template <typename T>
struct BatchNorm2d {
  int channels = 0;
  double momentum = 0.1, eps = 1e-5;
  ParamT<T> gamma, beta;
  TensorT<T> running_mean, running_var;  // buffers, population statistics

  struct Saved {
    TensorT<T> xhat;
    std::vector<T> invstd;
  };
  std::vector<Saved> saved;

  void init(int ch) {
    channels = ch;
    gamma.init_full({ch}, T(1));
    beta.init_zeros({ch});
    running_mean = TensorT<T>::zeros({ch});
    running_var = TensorT<T>::full({ch}, T(1));
  }

  TensorT<T> forward(const TensorT<T>& x, bool training) {
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const double m = static_cast<double>(n) * plane;
    TensorT<T> y(x.shape);
    Saved sv;
    if (training) {
      sv.xhat = TensorT<T>(x.shape);
      sv.invstd.resize(channels);
    }
#pragma omp parallel for schedule(static)
    for (int c = 0; c < channels; ++c) {
      double mean, var;
      if (training) {
        double sum = 0, sq = 0;
        for (int i = 0; i < n; ++i) {
          const T* p = x.ptr() + (static_cast<std::size_t>(i) * channels + c) * plane;
          for (std::size_t j = 0; j < plane; ++j) {
            sum += p[j];
            sq += double(p[j]) * p[j];
          }
        }
        mean = sum / m;
        var = std::max(0.0, sq / m - mean * mean);
        running_mean.data[c] = T((1 - momentum) * running_mean.data[c] + momentum * mean);
        running_var.data[c] = T((1 - momentum) * running_var.data[c] + momentum * var);
      } else {
        mean = running_mean.data[c];
        var = running_var.data[c];
      }
      const T inv = T(1.0 / std::sqrt(var + eps));
      const T g = gamma.value.data[c], b = beta.value.data[c], mu = T(mean);
      for (int i = 0; i < n; ++i) {
        const std::size_t off = (static_cast<std::size_t>(i) * channels + c) * plane;
        const T* p = x.ptr() + off;
        T* q = y.ptr() + off;
        if (training) {
          T* xh = sv.xhat.ptr() + off;
          for (std::size_t j = 0; j < plane; ++j) {
            xh[j] = (p[j] - mu) * inv;
            q[j] = g * xh[j] + b;
          }
        } else {
          for (std::size_t j = 0; j < plane; ++j) q[j] = g * (p[j] - mu) * inv + b;
        }
      }
      if (training) sv.invstd[c] = inv;
    }
    if (training) saved.push_back(std::move(sv));
    return y;
  }

  TensorT<T> backward(const TensorT<T>& dy) {
    Saved sv = std::move(saved.back());
    saved.pop_back();
    const int n = dy.dim(0), h = dy.dim(2), w = dy.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const double m = static_cast<double>(n) * plane;
    TensorT<T> dx(dy.shape);
#pragma omp parallel for schedule(static)
    for (int c = 0; c < channels; ++c) {
      double sum_dy = 0, sum_dy_xhat = 0;
      for (int i = 0; i < n; ++i) {
        const std::size_t off = (static_cast<std::size_t>(i) * channels + c) * plane;
        const T* d = dy.ptr() + off;
        const T* xh = sv.xhat.ptr() + off;
        for (std::size_t j = 0; j < plane; ++j) {
          sum_dy += d[j];
          sum_dy_xhat += double(d[j]) * xh[j];
        }
      }
      gamma.grad.data[c] += T(sum_dy_xhat);
      beta.grad.data[c] += T(sum_dy);
      const T g_inv_m = T(double(gamma.value.data[c]) * sv.invstd[c] / m);
      const T mean_dy = T(sum_dy / m), mean_dy_xhat = T(sum_dy_xhat / m);
      for (int i = 0; i < n; ++i) {
        const std::size_t off = (static_cast<std::size_t>(i) * channels + c) * plane;
        const T* d = dy.ptr() + off;
        const T* xh = sv.xhat.ptr() + off;
        T* out = dx.ptr() + off;
        for (std::size_t j = 0; j < plane; ++j)
          out[j] = g_inv_m * (T(m) * d[j] - T(m) * mean_dy - xh[j] * T(m) * mean_dy_xhat);
      }
    }
    return dx;
  }
};

template <typename T>
struct ReLU {
  std::vector<std::vector<std::uint8_t>> saved_mask;

  TensorT<T> forward(const TensorT<T>& x, bool training) {
    TensorT<T> y(x.shape);
    if (training) {
      std::vector<std::uint8_t> mask(x.data.size());
      for (std::size_t i = 0; i < x.data.size(); ++i) {
        const bool pos = x.data[i] > 0;
        mask[i] = pos;
        y.data[i] = pos ? x.data[i] : T(0);
      }
      saved_mask.push_back(std::move(mask));
    } else {
      for (std::size_t i = 0; i < x.data.size(); ++i)
        y.data[i] = x.data[i] > 0 ? x.data[i] : T(0);
    }
    return y;
  }
  TensorT<T> backward(const TensorT<T>& dy) {
    std::vector<std::uint8_t> mask = std::move(saved_mask.back());
    saved_mask.pop_back();
    TensorT<T> dx(dy.shape);
    for (std::size_t i = 0; i < dy.data.size(); ++i)
      dx.data[i] = mask[i] ? dy.data[i] : T(0);
    return dx;
  }
};

template <typename T>
struct Sigmoid {
  std::vector<TensorT<T>> saved_y;

  TensorT<T> forward(const TensorT<T>& x, bool training) {
    TensorT<T> y(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i)
      y.data[i] = T(1) / (T(1) + std::exp(-x.data[i]));
    if (training) saved_y.push_back(y);
    return y;
  }
  TensorT<T> backward(const TensorT<T>& dy) {
    TensorT<T> y = std::move(saved_y.back());
    saved_y.pop_back();
    TensorT<T> dx(dy.shape);
    for (std::size_t i = 0; i < dy.data.size(); ++i)
      dx.data[i] = dy.data[i] * y.data[i] * (T(1) - y.data[i]);
    return dx;
  }
};

template <typename T>
struct Tanh {
  std::vector<TensorT<T>> saved_y;

  TensorT<T> forward(const TensorT<T>& x, bool training) {
    TensorT<T> y(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = std::tanh(x.data[i]);
    if (training) saved_y.push_back(y);
    return y;
  }
  TensorT<T> backward(const TensorT<T>& dy) {
    TensorT<T> y = std::move(saved_y.back());
    saved_y.pop_back();
    TensorT<T> dx(dy.shape);
    for (std::size_t i = 0; i < dy.data.size(); ++i)
      dx.data[i] = dy.data[i] * (T(1) - y.data[i] * y.data[i]);
    return dx;
  }
};

/// Softmax over the channel dimension of an NCHW tensor.
template <typename T>
struct SoftmaxChannel {
  std::vector<TensorT<T>> saved_y;

  TensorT<T> forward(const TensorT<T>& x, bool training) {
    const int n = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    TensorT<T> y(x.shape);
    for (int i = 0; i < n; ++i) {
      const T* xi = x.ptr() + static_cast<std::size_t>(i) * ch * plane;
      T* yi = y.ptr() + static_cast<std::size_t>(i) * ch * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        T mx = xi[j];
        for (int c = 1; c < ch; ++c) mx = std::max(mx, xi[c * plane + j]);
        T sum = 0;
        for (int c = 0; c < ch; ++c) {
          const T e = std::exp(xi[c * plane + j] - mx);
          yi[c * plane + j] = e;
          sum += e;
        }
        const T inv = T(1) / sum;
        for (int c = 0; c < ch; ++c) yi[c * plane + j] *= inv;
      }
    }
    if (training) saved_y.push_back(y);
    return y;
  }

  TensorT<T> backward(const TensorT<T>& dy) {
    TensorT<T> y = std::move(saved_y.back());
    saved_y.pop_back();
    const int n = dy.dim(0), ch = dy.dim(1);
    const std::size_t plane = static_cast<std::size_t>(dy.dim(2)) * dy.dim(3);
    TensorT<T> dx(dy.shape);
    for (int i = 0; i < n; ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * ch * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        T dot = 0;
        for (int c = 0; c < ch; ++c)
          dot += dy.data[base + c * plane + j] * y.data[base + c * plane + j];
        for (int c = 0; c < ch; ++c) {
          const std::size_t k = base + c * plane + j;
          dx.data[k] = y.data[k] * (dy.data[k] - dot);
        }
      }
    }
    return dx;
  }
};

template <typename T>
struct MaxPool2 {
  struct Saved {
    std::vector<int> argmax;  // flat input index per output element
    std::vector<int> in_shape;
  };
  std::vector<Saved> saved;

  TensorT<T> forward(const TensorT<T>& x, bool training) {
    const int n = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int oh = h / 2, ow = w / 2;
    TensorT<T> y({n, ch, oh, ow});
    Saved sv;
    if (training) {
      sv.argmax.resize(y.data.size());
      sv.in_shape = x.shape;
    }
    std::size_t o = 0;
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < ch; ++c) {
        const T* plane = x.ptr() + (static_cast<std::size_t>(i) * ch + c) * h * w;
        const std::size_t plane_off = (static_cast<std::size_t>(i) * ch + c) * h * w;
        for (int r = 0; r < oh; ++r)
          for (int q = 0; q < ow; ++q, ++o) {
            const int r0 = r * 2, c0 = q * 2;
            int best = r0 * w + c0;
            T bv = plane[best];
            const int candidates[3] = {r0 * w + c0 + 1, (r0 + 1) * w + c0, (r0 + 1) * w + c0 + 1};
            for (int idx : candidates)
              if (plane[idx] > bv) {
                bv = plane[idx];
                best = idx;
              }
            y.data[o] = bv;
            if (training) sv.argmax[o] = static_cast<int>(plane_off) + best;
          }
      }
    if (training) saved.push_back(std::move(sv));
    return y;
  }

  TensorT<T> backward(const TensorT<T>& dy) {
    Saved sv = std::move(saved.back());
    saved.pop_back();
    TensorT<T> dx(sv.in_shape);
    for (std::size_t o = 0; o < dy.data.size(); ++o) dx.data[sv.argmax[o]] += dy.data[o];
    return dx;
  }
};

template <typename T>
struct UpsampleNearest2 {
  TensorT<T> forward(const TensorT<T>& x, bool /*training*/) {
    const int n = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
    TensorT<T> y({n, ch, h * 2, w * 2});
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < ch; ++c) {
        const T* src = x.ptr() + (static_cast<std::size_t>(i) * ch + c) * h * w;
        T* dst = y.ptr() + (static_cast<std::size_t>(i) * ch + c) * h * w * 4;
        for (int r = 0; r < h * 2; ++r) {
          const T* row = src + (r / 2) * w;
          T* out = dst + static_cast<std::size_t>(r) * w * 2;
          for (int q = 0; q < w * 2; ++q) out[q] = row[q / 2];
        }
      }
    return y;
  }
  TensorT<T> backward(const TensorT<T>& dy) {
    const int n = dy.dim(0), ch = dy.dim(1), oh = dy.dim(2), ow = dy.dim(3);
    const int h = oh / 2, w = ow / 2;
    TensorT<T> dx({n, ch, h, w});
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < ch; ++c) {
        T* dst = dx.ptr() + (static_cast<std::size_t>(i) * ch + c) * h * w;
        const T* src = dy.ptr() + (static_cast<std::size_t>(i) * ch + c) * oh * ow;
        for (int r = 0; r < oh; ++r)
          for (int q = 0; q < ow; ++q) dst[(r / 2) * w + q / 2] += src[static_cast<std::size_t>(r) * ow + q];
      }
    return dx;
  }
};

/// [N,C,H,W] -> [N,C] mean over the spatial dims.
template <typename T>
struct GlobalAvgPool {
  std::vector<std::vector<int>> saved_shape;

  TensorT<T> forward(const TensorT<T>& x, bool training) {
    const int n = x.dim(0), ch = x.dim(1);
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    TensorT<T> y({n, ch});
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < ch; ++c) {
        const T* p = x.ptr() + (static_cast<std::size_t>(i) * ch + c) * plane;
        double s = 0;
        for (std::size_t j = 0; j < plane; ++j) s += p[j];
        y.at2(i, c) = T(s / plane);
      }
    if (training) saved_shape.push_back(x.shape);
    return y;
  }
  TensorT<T> backward(const TensorT<T>& dy) {
    std::vector<int> shape = std::move(saved_shape.back());
    saved_shape.pop_back();
    const int n = shape[0], ch = shape[1];
    const std::size_t plane = static_cast<std::size_t>(shape[2]) * shape[3];
    TensorT<T> dx(shape);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < ch; ++c) {
        const T g = dy.at2(i, c) / T(plane);
        T* p = dx.ptr() + (static_cast<std::size_t>(i) * ch + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) p[j] = g;
      }
    return dx;
  }
};

template <typename T>
struct Linear {
  int in_f = 0, out_f = 0;
  ParamT<T> weight;  // [out_f, in_f]
  ParamT<T> bias;    // [out_f]
  std::vector<TensorT<T>> saved_x;

  void init(int in, int out, Rng& rng, double weight_scale = 1.0) {
    in_f = in;
    out_f = out;
    weight.init_randn({out, in}, rng, weight_scale * std::sqrt(2.0 / in));
    bias.init_zeros({out});
  }

  TensorT<T> forward(const TensorT<T>& x, bool training) {
    const int n = x.dim(0);
    TensorT<T> y({n, out_f});
    // y = x * W^T + b
    gemm(false, true, n, out_f, in_f, T(1), x.ptr(), in_f, weight.value.ptr(), in_f, T(0),
         y.ptr(), out_f);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < out_f; ++c) y.at2(i, c) += bias.value.data[c];
    if (training) saved_x.push_back(x);
    return y;
  }

  TensorT<T> backward(const TensorT<T>& dy) {
    TensorT<T> x = std::move(saved_x.back());
    saved_x.pop_back();
    const int n = x.dim(0);
    // dW += dy^T * x ; db += colsum(dy) ; dx = dy * W
    gemm(true, false, out_f, in_f, n, T(1), dy.ptr(), out_f, x.ptr(), in_f, T(1),
         weight.grad.ptr(), in_f);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < out_f; ++c) bias.grad.data[c] += dy.at2(i, c);
    TensorT<T> dx({n, in_f});
    gemm(false, false, n, in_f, out_f, T(1), dy.ptr(), out_f, weight.value.ptr(), in_f, T(0),
         dx.ptr(), in_f);
    return dx;
  }
};

/// Forward: 1 iff x >= 0.5 else 0. Backward: straight-through identity.
template <typename T>
struct RoundSTE {
  TensorT<T> forward(const TensorT<T>& x, bool /*training*/) {
    TensorT<T> y(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] >= T(0.5) ? T(1) : T(0);
    return y;
  }
  TensorT<T> backward(const TensorT<T>& dy) { return dy; }
};

/// Adaptive instance normalization: per (sample, channel) instance-normalize
/// over the spatial dims, then scale by gamma and shift by beta. gamma/beta
/// are inputs (computed from the modality factor), not parameters.
template <typename T>
struct AdaIN {
  static constexpr double kEps = 1e-5;

  struct Saved {
    TensorT<T> xhat;
    TensorT<T> gamma;
    std::vector<T> invstd;  // per (n, c)
  };
  std::vector<Saved> saved;

  struct Grads {
    TensorT<T> dx;
    TensorT<T> dgamma;  // [N, C]
    TensorT<T> dbeta;   // [N, C]
  };

  TensorT<T> forward(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                     bool training) {
    const int n = x.dim(0), ch = x.dim(1);
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    TensorT<T> y(x.shape);
    Saved sv;
    if (training) {
      sv.xhat = TensorT<T>(x.shape);
      sv.gamma = gamma;
      sv.invstd.resize(static_cast<std::size_t>(n) * ch);
    }
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < ch; ++c) {
        const std::size_t off = (static_cast<std::size_t>(i) * ch + c) * plane;
        const T* p = x.ptr() + off;
        double sum = 0, sq = 0;
        for (std::size_t j = 0; j < plane; ++j) {
          sum += p[j];
          sq += double(p[j]) * p[j];
        }
        const double mean = sum / plane;
        const double var = std::max(0.0, sq / plane - mean * mean);
        const T inv = T(1.0 / std::sqrt(var + kEps));
        const T g = gamma.at2(i, c), b = beta.at2(i, c), mu = T(mean);
        T* q = y.ptr() + off;
        if (training) {
          T* xh = sv.xhat.ptr() + off;
          for (std::size_t j = 0; j < plane; ++j) {
            xh[j] = (p[j] - mu) * inv;
            q[j] = g * xh[j] + b;
          }
          sv.invstd[static_cast<std::size_t>(i) * ch + c] = inv;
        } else {
          for (std::size_t j = 0; j < plane; ++j) q[j] = g * (p[j] - mu) * inv + b;
        }
      }
    if (training) saved.push_back(std::move(sv));
    return y;
  }

  Grads backward(const TensorT<T>& dy) {
    Saved sv = std::move(saved.back());
    saved.pop_back();
    const int n = dy.dim(0), ch = dy.dim(1);
    const std::size_t plane = static_cast<std::size_t>(dy.dim(2)) * dy.dim(3);
    Grads g;
    g.dx = TensorT<T>(dy.shape);
    g.dgamma = TensorT<T>({n, ch});
    g.dbeta = TensorT<T>({n, ch});
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < ch; ++c) {
        const std::size_t off = (static_cast<std::size_t>(i) * ch + c) * plane;
        const T* d = dy.ptr() + off;
        const T* xh = sv.xhat.ptr() + off;
        double sum_d = 0, sum_d_xh = 0;
        for (std::size_t j = 0; j < plane; ++j) {
          sum_d += d[j];
          sum_d_xh += double(d[j]) * xh[j];
        }
        g.dgamma.at2(i, c) = T(sum_d_xh);
        g.dbeta.at2(i, c) = T(sum_d);
        const T gam = sv.gamma.at2(i, c);
        const T inv = sv.invstd[static_cast<std::size_t>(i) * ch + c];
        const T mean_d = T(sum_d / plane), mean_d_xh = T(sum_d_xh / plane);
        T* out = g.dx.ptr() + off;
        for (std::size_t j = 0; j < plane; ++j)
          out[j] = gam * inv * (d[j] - mean_d - xh[j] * mean_d_xh);
      }
    return g;
  }
};

template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
  require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
          "concat_channels: shape mismatch");
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const std::size_t plane = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
  TensorT<T> y({n, ca + cb, a.dim(2), a.dim(3)});
  for (int i = 0; i < n; ++i) {
    std::memcpy(y.ptr() + static_cast<std::size_t>(i) * (ca + cb) * plane,
                a.ptr() + static_cast<std::size_t>(i) * ca * plane, sizeof(T) * ca * plane);
    std::memcpy(y.ptr() + (static_cast<std::size_t>(i) * (ca + cb) + ca) * plane,
                b.ptr() + static_cast<std::size_t>(i) * cb * plane, sizeof(T) * cb * plane);
  }
  return y;
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> split_channels(const TensorT<T>& y, int ca) {
  const int n = y.dim(0), c = y.dim(1);
  const int cb = c - ca;
  const std::size_t plane = static_cast<std::size_t>(y.dim(2)) * y.dim(3);
  TensorT<T> a({n, ca, y.dim(2), y.dim(3)});
  TensorT<T> b({n, cb, y.dim(2), y.dim(3)});
  for (int i = 0; i < n; ++i) {
    std::memcpy(a.ptr() + static_cast<std::size_t>(i) * ca * plane,
                y.ptr() + static_cast<std::size_t>(i) * c * plane, sizeof(T) * ca * plane);
    std::memcpy(b.ptr() + static_cast<std::size_t>(i) * cb * plane,
                y.ptr() + (static_cast<std::size_t>(i) * c + ca) * plane, sizeof(T) * cb * plane);
  }
  return {std::move(a), std::move(b)};
}

}  // namespace carseg::nn
