// Central finite differences over tensor storage, the independent oracle the
// analytic backward passes are checked against.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "gridcast/tensor.hpp"

namespace gridcast {

// Central differences of a scalar function over a raw parameter span.
// f is re-evaluated with each entry displaced by +/- eps in turn; the span
// is restored bitwise afterwards.
template <typename T, typename F>
std::vector<T> finite_diff_span(F&& f, T* p, std::size_t n, T eps) {
  std::vector<T> grad(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T saved = p[i];
    p[i] = saved + eps;
    const double fp = static_cast<double>(f());
    p[i] = saved - eps;
    const double fm = static_cast<double>(f());
    p[i] = saved;
    grad[i] = static_cast<T>((fp - fm) / (2.0 * static_cast<double>(eps)));
  }
  return grad;
}

// Gradient of a scalar-valued function of a Tensor4.
template <typename T>
Tensor4<T> finite_diff_grad(const std::function<T(const Tensor4<T>&)>& f,
                            const Tensor4<T>& x, T eps) {
  Tensor4<T> xc = x;
  Tensor4<T> grad(x.b, x.c, x.h, x.w);
  auto eval = [&]() { return f(xc); };
  std::vector<T> g = finite_diff_span(eval, xc.data.data(), xc.size(), eps);
  grad.data = std::move(g);
  return grad;
}

// max_i |a_i - n_i| scaled by the larger max-norm of the two gradients.
// Near-zero gradients compare as equal rather than blowing up the ratio.
template <typename T>
double max_rel_error(const std::vector<T>& analytic, const std::vector<T>& numeric) {
  detail::require(analytic.size() == numeric.size(), "max_rel_error: size mismatch");
  double scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    scale = std::max(scale, std::abs(static_cast<double>(analytic[i])));
    scale = std::max(scale, std::abs(static_cast<double>(numeric[i])));
  }
  if (scale == 0.0) return 0.0;
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double d = std::abs(static_cast<double>(analytic[i]) -
                              static_cast<double>(numeric[i]));
    worst = std::max(worst, d / scale);
  }
  return worst;
}

template <typename T>
double max_rel_error(const Tensor4<T>& analytic, const Tensor4<T>& numeric) {
  detail::require(analytic.same_shape(numeric), "max_rel_error: shape mismatch");
  return max_rel_error(analytic.data, numeric.data);
}

}  // namespace gridcast
