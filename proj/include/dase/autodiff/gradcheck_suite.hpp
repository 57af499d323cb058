#pragma once

// Finite-difference checks over every differentiable op, in double precision.
// Each probe reduces the op output to a scalar through a fixed random
// projection so that every output coordinate contributes to the gradient.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "dase/autodiff/conv.hpp"
#include "dase/autodiff/gradcheck.hpp"
#include "dase/autodiff/ops.hpp"
#include "dase/network/dgm.hpp"

namespace dase::ad {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
};

namespace detail {

inline TensorD random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = d(rng);
  return TensorD(std::move(shape), std::move(v));
}

/// Values with magnitude in [0.2, 1] and random sign: away from the ReLU and |.| kinks.
inline TensorD off_kink_tensor(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.2, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
  return TensorD(std::move(shape), std::move(v));
}

/// A random permutation of well-separated levels, so max pooling has no near ties.
inline TensorD distinct_tensor(Shape shape, std::mt19937_64& rng) {
  std::vector<double> v(numel_of(shape));
  std::iota(v.begin(), v.end(), 0.0);
  std::shuffle(v.begin(), v.end(), rng);
  for (auto& x : v) x = 0.05 * x - 1.0;
  return TensorD(std::move(shape), std::move(v));
}

inline TensorD project(const TensorD& y, const TensorD& r) { return sum(hadamard(y, r)); }

}  // namespace detail

/// Runs the whole suite for one seed and returns the worst relative error per op.
inline std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed) {
  using detail::off_kink_tensor;
  using detail::project;
  using detail::random_tensor;
  std::mt19937_64 rng(seed);
  std::vector<GradCheckResult> out;
  auto check = [&](const std::string& name, const ScalarFn& f, const TensorD& x) {
    out.push_back({name, grad_check(f, x)});
  };

  {
    const ConvSpec spec{4, 6, 3, 2, 1, 2};
    const auto x = random_tensor({2, 4, 5, 5}, rng);
    const auto w = random_tensor(spec.weight_shape(), rng);
    const auto b = random_tensor({6}, rng);
    const auto r = random_tensor({2, 6, spec.output_extent(5), spec.output_extent(5)}, rng);
    check("conv2d_grouped.x", [&](const TensorD& v) { return project(conv2d(v, w, b, spec), r); }, x);
    check("conv2d_grouped.w", [&](const TensorD& v) { return project(conv2d(x, v, b, spec), r); }, w);
    check("conv2d_grouped.b", [&](const TensorD& v) { return project(conv2d(x, w, v, spec), r); }, b);
  }
  {
    const ConvSpec spec{4, 4, 3, 1, 1, 4};
    const auto x = random_tensor({1, 4, 4, 4}, rng);
    const auto w = random_tensor(spec.weight_shape(), rng);
    const auto r = random_tensor({1, 4, 4, 4}, rng);
    check("conv2d_depthwise.x", [&](const TensorD& v) { return project(conv2d(v, w, TensorD{}, spec), r); }, x);
    check("conv2d_depthwise.w", [&](const TensorD& v) { return project(conv2d(x, v, TensorD{}, spec), r); }, w);
  }
  {
    const ConvSpec spec{8, 4, 1, 1, 0, 4};
    const auto x = random_tensor({2, 8, 3, 3}, rng);
    const auto w = random_tensor(spec.weight_shape(), rng);
    const auto r = random_tensor({2, 4, 3, 3}, rng);
    check("conv2d_pointwise.x", [&](const TensorD& v) { return project(conv2d(v, w, TensorD{}, spec), r); }, x);
    check("conv2d_pointwise.w", [&](const TensorD& v) { return project(conv2d(x, v, TensorD{}, spec), r); }, w);
  }
  {
    const auto x = off_kink_tensor({3, 4}, rng);
    const auto r = random_tensor({3, 4}, rng);
    check("relu", [&](const TensorD& v) { return project(relu(v), r); }, x);
  }
  {
    const auto x = random_tensor({3, 4}, rng, -4.0, 4.0);
    const auto r = random_tensor({3, 4}, rng);
    check("sigmoid", [&](const TensorD& v) { return project(sigmoid(v), r); }, x);
  }
  {
    const auto a = random_tensor({2, 3, 2, 2}, rng);
    const auto b = random_tensor({2, 3, 2, 2}, rng);
    const auto r = random_tensor({2, 3, 2, 2}, rng);
    check("hadamard.a", [&](const TensorD& v) { return project(hadamard(v, b), r); }, a);
    check("hadamard.b", [&](const TensorD& v) { return project(hadamard(a, v), r); }, b);
    check("add", [&](const TensorD& v) { return project(add(v, b), r); }, a);
  }
  {
    const auto x = detail::distinct_tensor({2, 2, 4, 4}, rng);
    const auto r = random_tensor({2, 2, 2, 2}, rng);
    const auto g = random_tensor({2, 2, 1, 1}, rng);
    check("pool_max", [&](const TensorD& v) { return project(pool2d(v, PoolKind::max, 2), r); }, x);
    check("pool_mean", [&](const TensorD& v) { return project(pool2d(v, PoolKind::mean, 2), r); }, x);
    check("pool_global_avg", [&](const TensorD& v) { return project(pool2d(v, PoolKind::global_avg), g); }, x);
  }
  {
    const auto x = random_tensor({3, 5}, rng);
    const auto w = random_tensor({5, 4}, rng);
    const auto b = random_tensor({4}, rng);
    const auto r = random_tensor({3, 4}, rng);
    check("linear.x", [&](const TensorD& v) { return project(linear(v, w, b), r); }, x);
    check("linear.w", [&](const TensorD& v) { return project(linear(x, v, b), r); }, w);
    check("linear.b", [&](const TensorD& v) { return project(linear(x, w, v), r); }, b);
  }
  {
    const auto s = random_tensor({4}, rng);
    const auto r = random_tensor({4}, rng);
    check("softmax", [&](const TensorD& v) { return project(softmax(v), r); }, s);
    const std::vector<TensorD> parts = {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng),
                                        random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)};
    const auto rr = random_tensor({2, 3}, rng);
    check("weighted_sum.weights", [&](const TensorD& v) { return project(weighted_sum(parts, softmax(v)), rr); }, s);
    check("weighted_sum.part",
          [&](const TensorD& v) {
            auto p = parts;
            p[1] = v;
            return project(weighted_sum(p, softmax(s)), rr);
          },
          parts[1]);
  }
  {
    const auto logits = random_tensor({4, 3}, rng, -2.0, 2.0);
    const std::vector<int> labels = {0, 2, 1, 2};
    check("softmax_cross_entropy", [&](const TensorD& v) { return softmax_cross_entropy(v, std::span(labels)); },
          logits);
    const auto target = random_tensor({6}, rng);
    auto pred_v = off_kink_tensor({6}, rng).data();
    std::vector<double> pred(pred_v.begin(), pred_v.end());
    for (std::size_t i = 0; i < pred.size(); ++i) pred[i] += target.data()[i];
    check("l1_loss", [&](const TensorD& v) { return l1_loss(v, target); }, TensorD({6}, pred));
    const auto r = random_tensor({2, 3}, rng);
    check("reshape", [&](const TensorD& v) { return project(reshape(v, {2, 3}), r); }, target);
  }
  {
    const net::DgmConfig cfg{8, 2, 2};
    const auto x = random_tensor({2, 8, 3, 3}, rng);
    const auto r = random_tensor({2, 8, 3, 3}, rng);
    net::DgmParams<double> p;
    p.reduce_w = random_tensor(cfg.reduce_spec().weight_shape(), rng);
    p.reduce_b = random_tensor({cfg.reduced()}, rng, 0.5, 1.0);  // keeps the inner ReLU mostly active
    p.expand_w = random_tensor(cfg.expand_spec().weight_shape(), rng);
    p.expand_b = random_tensor({cfg.channels}, rng);
    p.fuse_w = random_tensor(cfg.fuse_spec().weight_shape(), rng);
    p.fuse_b = random_tensor({cfg.channels}, rng);
    check("dgm_block.x", [&](const TensorD& v) { return project(net::dgm_block(v, cfg, p), r); }, x);
    check("dgm_block.reduce_w",
          [&](const TensorD& v) {
            auto q = p;
            q.reduce_w = v;
            return project(net::dgm_block(x, cfg, q), r);
          },
          p.reduce_w);
    check("dgm_block.fuse_w",
          [&](const TensorD& v) {
            auto q = p;
            q.fuse_w = v;
            return project(net::dgm_block(x, cfg, q), r);
          },
          p.fuse_w);
  }
  return out;
}

}  // namespace dase::ad
