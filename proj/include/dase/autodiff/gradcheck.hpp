#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "dase/autodiff/tensor.hpp"
#include "dase/error.hpp"

namespace dase::ad {

using ScalarFn = std::function<TensorD(const TensorD&)>;

/// Worst relative error between the reverse-mode gradient of f at x and
/// central differences (f(x+e) - f(x-e)) / 2e, per coordinate. Denominators
/// are max(|analytic|, |numeric|) floored at 1e-12.
inline double grad_check(const ScalarFn& f, const TensorD& x, double eps = 1e-5) {
  TensorD probe(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
  const TensorD y = f(probe);
  if (y.numel() != 1) throw ShapeError("grad_check: f must return a single element");
  if (!std::isfinite(y.item())) throw NumericError("grad_check: non-finite f(x)");
  y.backward();
  std::vector<double> analytic(x.numel(), 0.0);
  if (probe.has_grad()) std::copy(probe.grad().begin(), probe.grad().end(), analytic.begin());

  std::vector<double> buf(x.data().begin(), x.data().end());
  double worst = 0.0;
  for (std::size_t i = 0; i < buf.size(); ++i) {
    const double orig = buf[i];
    buf[i] = orig + eps;
    const double fp = f(TensorD(x.shape(), buf)).item();
    buf[i] = orig - eps;
    const double fm = f(TensorD(x.shape(), buf)).item();
    buf[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) throw NumericError("grad_check: non-finite evaluation");
    const double numeric = (fp - fm) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-12});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace dase::ad
