#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "dase/autodiff/tensor.hpp"
#include "dase/error.hpp"

namespace dase::ad {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Moment accumulators for a fixed, ordered parameter list.
struct OptimState {
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;
  std::size_t step = 0;
  AdamWConfig hyper;

  template <class T>
  static OptimState for_params(const std::vector<Tensor<T>>& params, AdamWConfig hyper = {}) {
    OptimState s;
    s.hyper = hyper;
    for (const auto& p : params) {
      s.first.emplace_back(p.numel(), 0.0);
      s.second.emplace_back(p.numel(), 0.0);
    }
    return s;
  }
};

/// One AdamW step with decoupled weight decay:
///   p <- p - lr*wd*p, then p <- p - lr * m_hat / (sqrt(v_hat) + eps).
/// Parameters with frozen[i] set are left untouched (their moments too).
/// A missing gradient counts as zero.
template <class T>
void adamw_step(std::vector<Tensor<T>>& params, OptimState& state, double lr,
                const std::vector<bool>& frozen = {}) {
  if (state.first.size() != params.size()) throw ShapeError("adamw: state does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first[i].size() != params[i].numel()) throw ShapeError("adamw: moment shape mismatch");
    for (T g : params[i].grad()) {
      if (!std::isfinite(static_cast<double>(g))) throw NumericError("adamw: non-finite gradient");
    }
  }
  ++state.step;
  const auto& h = state.hyper;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!frozen.empty() && frozen[i]) continue;
    auto p = params[i].data();
    auto g = params[i].grad();
    auto& m = state.first[i];
    auto& v = state.second[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g.empty() ? 0.0 : static_cast<double>(g[j]);
      double pj = static_cast<double>(p[j]);
      pj -= lr * h.weight_decay * pj;
      m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * gj;
      v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      pj -= lr * mhat / (std::sqrt(vhat) + h.eps);
      p[j] = static_cast<T>(pj);
    }
  }
}

/// Cosine annealing with warm restarts every `period` epochs.
inline double cosine_lr(std::size_t epoch, double base_lr, double min_lr, std::size_t period) {
  if (period < 1) throw UsageError("cosine_lr: period must be >= 1");
  const double phase = static_cast<double>(epoch % period) / static_cast<double>(period);
  return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * phase));
}

}  // namespace dase::ad
