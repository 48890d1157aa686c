// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

#include "carseg/error.hpp"
#include "carseg/rng.hpp"

namespace carseg::nn {

/// Dense row-major tensor. Shapes are small (rank <= 4), data is contiguous.
/// float is used for training; tests instantiate double for finite-difference
/// oracles.
template <typename T>
struct TensorT {
  std::vector<int> shape;
  std::vector<T> data;

  TensorT() = default;
  explicit TensorT(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), T(0)) {}

  static TensorT zeros(std::vector<int> s) { return TensorT(std::move(s)); }

  static TensorT full(std::vector<int> s, T v) {
    TensorT t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static TensorT randn(std::vector<int> s, Rng& rng, double stddev = 1.0) {
    TensorT t(std::move(s));
    for (auto& x : t.data) x = static_cast<T>(rng.normal() * stddev);
    return t;
  }

  static std::int64_t numel_of(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  bool empty() const { return data.empty(); }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  // NCHW accessors; cold paths only, hot loops use raw pointers.
  T& at4(int n, int c, int h, int w) {
    return data[((static_cast<std::int64_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  const T& at4(int n, int c, int h, int w) const {
    return data[((static_cast<std::int64_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  T& at2(int n, int f) { return data[static_cast<std::int64_t>(n) * shape[1] + f]; }
  const T& at2(int n, int f) const { return data[static_cast<std::int64_t>(n) * shape[1] + f]; }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  TensorT& operator+=(const TensorT& o) {
    require(same_shape(o), "tensor shape mismatch in +=");
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    return *this;
  }

  TensorT& operator*=(T v) {
    for (auto& x : data) x *= v;
    return *this;
  }
};

using Tensor = TensorT<float>;

template <typename T>
bool all_finite(const TensorT<T>& t) {
  for (T v : t.data)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

}  // namespace carseg::nn
