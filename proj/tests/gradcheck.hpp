// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <doctest.h>

#include <cmath>
#include <functional>

#include "carseg/nn/tensor.hpp"

namespace carseg::testutil {

using DTensor = nn::TensorT<double>;

inline double dot(const DTensor& a, const DTensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

/// Central finite differences over every element of `target`, compared
/// against `analytic` elementwise: |a - n| <= atol + rtol * max(|a|, |n|).
/// A point whose +/-h interval straddles a kink (L1, ReLU, max) makes the
/// h-step estimate invalid, so mismatches are re-evaluated at h/10; a wrong
/// analytic gradient fails at every step size and still gets caught.
inline void check_grad(DTensor& target, const DTensor& analytic,
                       const std::function<double()>& loss, double rtol = 1e-3,
                       double atol = 1e-6, double h = 1e-4) {
  REQUIRE(target.shape == analytic.shape);
  auto central = [&](std::size_t i, double step) {
    const double orig = target.data[i];
    target.data[i] = orig + step;
    const double lp = loss();
    target.data[i] = orig - step;
    const double lm = loss();
    target.data[i] = orig;
    return (lp - lm) / (2.0 * step);
  };
  for (std::size_t i = 0; i < target.data.size(); ++i) {
    const double a = analytic.data[i];
    double numeric = central(i, h);
    double tol = atol + rtol * std::max(std::abs(a), std::abs(numeric));
    if (std::abs(a - numeric) > tol) {
      numeric = central(i, h / 10.0);
      tol = atol + rtol * std::max(std::abs(a), std::abs(numeric));
    }
    if (std::abs(a - numeric) > tol) {
      CAPTURE(i);
      CAPTURE(a);
      CAPTURE(numeric);
      CHECK(std::abs(a - numeric) <= tol);
      return;  // one detailed failure is enough
    }
  }
  CHECK(true);
}

}  // namespace carseg::testutil
