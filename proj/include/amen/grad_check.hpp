#pragma once

// Central finite-difference gradient checking.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>

#include "amen/error.hpp"
#include "amen/tensor.hpp"

namespace amen {

// A scalar function of one tensor together with its analytic gradient.
template <class T>
struct Differentiable {
  std::function<T(const Tensor<T>&)> value;
  std::function<Tensor<T>(const Tensor<T>&)> gradient;
};

template <class T>
T relative_error(T analytic, T numeric) {
  const T denom = std::max({std::abs(analytic), std::abs(numeric), static_cast<T>(1e-8)});
  return std::abs(analytic - numeric) / denom;
}

// Numerical gradient by (f(x+h) - f(x-h)) / 2h per coordinate.
template <class T>
Tensor<T> numeric_gradient(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& point,
                           T step) {
  Tensor<T> x = point;
  x.drop_grad();
  Tensor<T> g(point.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = x[i];
    x[i] = orig + step;
    const T plus = f(x);
    x[i] = orig - step;
    const T minus = f(x);
    x[i] = orig;
    g[i] = (plus - minus) / (2 * step);
  }
  return g;
}

// Max over coordinates of |a - n| / max(|a|, |n|, 1e-8). Relu kinks and
// max-pool ties are not differentiable; callers must keep `point` away from
// them (see the test helpers that nudge random points off those sets).
template <class T>
T grad_check(const Differentiable<T>& computation, const Tensor<T>& point, T step = T(1e-5)) {
  const Tensor<T> analytic = computation.gradient(point);
  if (analytic.shape() != point.shape()) {
    throw ShapeError("grad_check: analytic gradient " + shape_str(analytic.shape()) +
                     " does not match point " + shape_str(point.shape()));
  }
  for (auto v : analytic.values()) {
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite analytic gradient");
  }
  const Tensor<T> numeric = numeric_gradient(computation.value, point, step);
  T worst = 0;
  for (std::size_t i = 0; i < point.size(); ++i) {
    worst = std::max(worst, relative_error(analytic[i], numeric[i]));
  }
  return worst;
}

}  // namespace amen
