#pragma once

// Dynamic Group Mechanism: a grouped-convolution channel recalibration block.
//   W  = sigmoid(conv_G(relu(conv_G(X))))   reduce C -> C', expand C' -> C
//   X' = X (.) W
//   Y  = conv_G(X')                         fuse C -> C
// All three convolutions are 1x1 and grouped with G groups.

#include <algorithm>
#include <string>

#include "dase/autodiff/conv.hpp"
#include "dase/autodiff/ops.hpp"
#include "dase/autodiff/tensor.hpp"
#include "dase/error.hpp"

namespace dase::net {

using ad::ConvSpec;
using ad::Tensor;

struct DgmConfig {
  std::size_t channels = 16;
  std::size_t reduction = 4;
  std::size_t groups = 4;

  /// C' = max(1, floor(C / r)).
  std::size_t reduced() const { return std::max<std::size_t>(1, channels / std::max<std::size_t>(1, reduction)); }

  void validate() const {
    if (reduction < 1) throw ConfigError("dgm: reduction must be >= 1");
    if (groups < 1 || channels % groups != 0 || reduced() % groups != 0) {
      throw ConfigError("dgm: groups " + std::to_string(groups) + " must divide C=" + std::to_string(channels) +
                        " and C'=" + std::to_string(reduced()));
    }
  }

  ConvSpec reduce_spec() const { return {channels, reduced(), 1, 1, 0, groups}; }
  ConvSpec expand_spec() const { return {reduced(), channels, 1, 1, 0, groups}; }
  ConvSpec fuse_spec() const { return {channels, channels, 1, 1, 0, groups}; }

  std::size_t weight_count() const {
    return ad::param_count(reduce_spec()) + ad::param_count(expand_spec()) + ad::param_count(fuse_spec());
  }
};

template <class T>
struct DgmParams {
  Tensor<T> reduce_w, reduce_b;
  Tensor<T> expand_w, expand_b;
  Tensor<T> fuse_w, fuse_b;

  static DgmParams zeros(const DgmConfig& cfg, bool requires_grad = false) {
    cfg.validate();
    DgmParams p;
    p.reduce_w = Tensor<T>::zeros(cfg.reduce_spec().weight_shape(), requires_grad);
    p.reduce_b = Tensor<T>::zeros({cfg.reduced()}, requires_grad);
    p.expand_w = Tensor<T>::zeros(cfg.expand_spec().weight_shape(), requires_grad);
    p.expand_b = Tensor<T>::zeros({cfg.channels}, requires_grad);
    p.fuse_w = Tensor<T>::zeros(cfg.fuse_spec().weight_shape(), requires_grad);
    p.fuse_b = Tensor<T>::zeros({cfg.channels}, requires_grad);
    return p;
  }
};

template <class T>
struct DgmTrace {
  Tensor<T> weight_map;  // W, strictly inside (0,1)
  Tensor<T> reweighted;  // X'
  Tensor<T> output;      // Y
};

template <class T>
DgmTrace<T> dgm_forward(const Tensor<T>& x, const DgmConfig& cfg, const DgmParams<T>& p) {
  cfg.validate();
  if (x.rank() != 4 || x.dim(1) != cfg.channels) {
    throw ShapeError("dgm: input " + ad::shape_str(x.shape()) + " does not have " + std::to_string(cfg.channels) +
                     " channels");
  }
  DgmTrace<T> t;
  auto h = ad::relu(ad::conv2d(x, p.reduce_w, p.reduce_b, cfg.reduce_spec()));
  t.weight_map = ad::sigmoid(ad::conv2d(h, p.expand_w, p.expand_b, cfg.expand_spec()));
  t.reweighted = ad::hadamard(x, t.weight_map);
  t.output = ad::conv2d(t.reweighted, p.fuse_w, p.fuse_b, cfg.fuse_spec());
  return t;
}

template <class T>
Tensor<T> dgm_block(const Tensor<T>& x, const DgmConfig& cfg, const DgmParams<T>& p) {
  return dgm_forward(x, cfg, p).output;
}

template <class T>
Tensor<T> dgm_weight_map(const Tensor<T>& x, const DgmConfig& cfg, const DgmParams<T>& p) {
  return dgm_forward(x, cfg, p).weight_map;
}

}  // namespace dase::net
