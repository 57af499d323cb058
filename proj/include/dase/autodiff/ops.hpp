#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "dase/autodiff/tensor.hpp"
#include "dase/error.hpp"

namespace dase::ad {

namespace detail {

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <class T>
void require_rank(const Tensor<T>& a, std::size_t r, const char* op) {
  if (a.rank() != r) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " + shape_str(a.shape()));
  }
}

}  // namespace detail

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > T{0} ? xv[i] : T{0};
  return Tensor<T>::from_op(x.shape(), std::move(out), {x}, [](Node<T>& self) {
    auto& px = *self.parents[0];
    px.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (px.value[i] > T{0}) px.grad[i] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  constexpr T lo = std::numeric_limits<T>::min();
  constexpr T hi = T{1} - std::numeric_limits<T>::epsilon() / 2;
  std::vector<T> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = static_cast<double>(xv[i]);
    // Split by sign so exp never overflows.
    const double s = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    // Saturated values are pinned inside the open interval (0,1).
    out[i] = std::clamp(static_cast<T>(s), lo, hi);
  }
  return Tensor<T>::from_op(x.shape(), std::move(out), {x}, [](Node<T>& self) {
    auto& px = *self.parents[0];
    px.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double s = static_cast<double>(self.value[i]);
      px.grad[i] += static_cast<T>(static_cast<double>(self.grad[i]) * s * (1.0 - s));
    }
  });
}

/// Elementwise product of equally shaped tensors.
template <class T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "hadamard");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return Tensor<T>::from_op(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[self.parents.size() - 1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return Tensor<T>::from_op(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
  });
}

/// Same data under a new shape with equal element count.
template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  return Tensor<T>::from_op(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()), {x},
                            [](Node<T>& self) {
                              auto& px = *self.parents[0];
                              px.ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i];
                            });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  double s = 0.0;
  for (T v : x.data()) s += static_cast<double>(v);
  return Tensor<T>::from_op({1}, {static_cast<T>(s)}, {x}, [](Node<T>& self) {
    auto& px = *self.parents[0];
    px.ensure_grad();
    for (auto& g : px.grad) g += self.grad[0];
  });
}

/// Softmax over a rank-1 tensor.
template <class T>
Tensor<T> softmax(const Tensor<T>& x) {
  detail::require_rank(x, 1, "softmax");
  const auto xv = x.data();
  const double mx = static_cast<double>(*std::max_element(xv.begin(), xv.end()));
  std::vector<double> e(xv.size());
  double z = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) z += (e[i] = std::exp(static_cast<double>(xv[i]) - mx));
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < e.size(); ++i) out[i] = static_cast<T>(e[i] / z);
  return Tensor<T>::from_op(x.shape(), std::move(out), {x}, [](Node<T>& self) {
    auto& px = *self.parents[0];
    px.ensure_grad();
    double dot = 0.0;
    for (std::size_t i = 0; i < self.grad.size(); ++i) dot += static_cast<double>(self.grad[i]) * self.value[i];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      px.grad[i] += static_cast<T>(static_cast<double>(self.value[i]) * (static_cast<double>(self.grad[i]) - dot));
    }
  });
}

/// sum_s weights[s] * parts[s] for equally shaped parts and a rank-1 weight vector.
template <class T>
Tensor<T> weighted_sum(const std::vector<Tensor<T>>& parts, const Tensor<T>& weights) {
  if (parts.empty()) throw ShapeError("weighted_sum: no parts");
  detail::require_rank(weights, 1, "weighted_sum");
  if (weights.numel() != parts.size()) throw ShapeError("weighted_sum: weight count does not match parts");
  for (const auto& p : parts) detail::require_same_shape(p, parts.front(), "weighted_sum");
  const std::size_t n = parts.front().numel();
  std::vector<double> acc(n, 0.0);
  for (std::size_t s = 0; s < parts.size(); ++s) {
    const double w = weights.data()[s];
    for (std::size_t i = 0; i < n; ++i) acc[i] += w * static_cast<double>(parts[s].data()[i]);
  }
  std::vector<T> out(acc.begin(), acc.end());
  std::vector<Tensor<T>> parents = parts;
  parents.push_back(weights);
  return Tensor<T>::from_op(parts.front().shape(), std::move(out), std::move(parents), [](Node<T>& self) {
    const std::size_t S = self.parents.size() - 1;
    auto& pw = *self.parents[S];
    for (std::size_t s = 0; s < S; ++s) {
      auto& ps = *self.parents[s];
      if (pw.requires_grad) {
        pw.ensure_grad();
        double g = 0.0;
        for (std::size_t i = 0; i < self.grad.size(); ++i) g += static_cast<double>(self.grad[i]) * ps.value[i];
        pw.grad[s] += static_cast<T>(g);
      }
      if (ps.requires_grad) {
        ps.ensure_grad();
        const T w = pw.value[s];
        for (std::size_t i = 0; i < self.grad.size(); ++i) ps.grad[i] += w * self.grad[i];
      }
    }
  });
}

enum class PoolKind { max, mean, global_avg };

/// Non-overlapping pooling over [N,C,H,W]; the window must divide H and W.
/// global_avg ignores window and reduces to [N,C,1,1].
template <class T>
Tensor<T> pool2d(const Tensor<T>& x, PoolKind kind, std::size_t window = 2) {
  detail::require_rank(x, 4, "pool2d");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t wy = kind == PoolKind::global_avg ? H : window;
  const std::size_t wx = kind == PoolKind::global_avg ? W : window;
  if (wy == 0 || wx == 0 || H % wy != 0 || W % wx != 0) {
    throw ShapeError("pool2d: window " + std::to_string(window) + " does not divide " + shape_str(x.shape()));
  }
  const std::size_t Ho = H / wy, Wo = W / wx;
  const auto xv = x.data();
  std::vector<T> out(N * C * Ho * Wo);
  std::vector<std::uint32_t> argmax(kind == PoolKind::max ? out.size() : 0);
  const double inv = 1.0 / static_cast<double>(wy * wx);
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* plane = xv.data() + nc * H * W;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        const std::size_t o = (nc * Ho + oy) * Wo + ox;
        if (kind == PoolKind::max) {
          std::size_t best = oy * wy * W + ox * wx;
          for (std::size_t ky = 0; ky < wy; ++ky)
            for (std::size_t kx = 0; kx < wx; ++kx) {
              const std::size_t idx = (oy * wy + ky) * W + ox * wx + kx;
              if (plane[idx] > plane[best]) best = idx;
            }
          out[o] = plane[best];
          argmax[o] = static_cast<std::uint32_t>(best);
        } else {
          double s = 0.0;
          for (std::size_t ky = 0; ky < wy; ++ky)
            for (std::size_t kx = 0; kx < wx; ++kx) s += plane[(oy * wy + ky) * W + ox * wx + kx];
          out[o] = static_cast<T>(s * inv);
        }
      }
    }
  }
  return Tensor<T>::from_op(
      {N, C, Ho, Wo}, std::move(out), {x},
      [kind, H, W, Ho, Wo, wy, wx, inv, argmax = std::move(argmax)](Node<T>& self) {
        auto& px = *self.parents[0];
        px.ensure_grad();
        for (std::size_t nc = 0; nc < self.grad.size() / (Ho * Wo); ++nc) {
          T* gplane = px.grad.data() + nc * H * W;
          for (std::size_t oy = 0; oy < Ho; ++oy) {
            for (std::size_t ox = 0; ox < Wo; ++ox) {
              const std::size_t o = (nc * Ho + oy) * Wo + ox;
              if (kind == PoolKind::max) {
                gplane[argmax[o]] += self.grad[o];
              } else {
                const T g = static_cast<T>(static_cast<double>(self.grad[o]) * inv);
                for (std::size_t ky = 0; ky < wy; ++ky)
                  for (std::size_t kx = 0; kx < wx; ++kx) gplane[(oy * wy + ky) * W + ox * wx + kx] += g;
              }
            }
          }
        }
      });
}

/// x[N,D] * w[D,M] + b[M]. Pass an undefined bias to skip it.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b = {}) {
  detail::require_rank(x, 2, "linear");
  detail::require_rank(w, 2, "linear");
  const std::size_t N = x.dim(0), D = x.dim(1), M = w.dim(1);
  if (w.dim(0) != D) throw ShapeError("linear: input width " + std::to_string(D) + " vs weight " + shape_str(w.shape()));
  if (b.defined() && (b.rank() != 1 || b.dim(0) != M)) throw ShapeError("linear: bias shape");
  const auto xv = x.data();
  const auto wv = w.data();
  std::vector<T> out(N * M);
  std::vector<double> acc(M);
  for (std::size_t n = 0; n < N; ++n) {
    if (b.defined()) {
      for (std::size_t m = 0; m < M; ++m) acc[m] = b.data()[m];
    } else {
      std::fill(acc.begin(), acc.end(), 0.0);
    }
    for (std::size_t d = 0; d < D; ++d) {
      const double xd = xv[n * D + d];
      const T* wr = wv.data() + d * M;
      for (std::size_t m = 0; m < M; ++m) acc[m] += xd * static_cast<double>(wr[m]);
    }
    for (std::size_t m = 0; m < M; ++m) out[n * M + m] = static_cast<T>(acc[m]);
  }
  std::vector<Tensor<T>> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return Tensor<T>::from_op({N, M}, std::move(out), std::move(parents), [N, D, M](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    const T* g = self.grad.data();
    if (px.requires_grad) {
      px.ensure_grad();
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t d = 0; d < D; ++d) {
          double s = 0.0;
          const T* wr = pw.value.data() + d * M;
          for (std::size_t m = 0; m < M; ++m) s += static_cast<double>(wr[m]) * g[n * M + m];
          px.grad[n * D + d] += static_cast<T>(s);
        }
    }
    if (pw.requires_grad) {
      pw.ensure_grad();
      for (std::size_t d = 0; d < D; ++d)
        for (std::size_t m = 0; m < M; ++m) {
          double s = 0.0;
          for (std::size_t n = 0; n < N; ++n) s += static_cast<double>(px.value[n * D + d]) * g[n * M + m];
          pw.grad[d * M + m] += static_cast<T>(s);
        }
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      auto& pb = *self.parents[2];
      pb.ensure_grad();
      for (std::size_t m = 0; m < M; ++m) {
        double s = 0.0;
        for (std::size_t n = 0; n < N; ++n) s += g[n * M + m];
        pb.grad[m] += static_cast<T>(s);
      }
    }
  });
}

/// Mean over the batch of -log softmax(logits)[label].
template <class T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  detail::require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t N = logits.dim(0), M = logits.dim(1);
  if (labels.size() != N) throw ShapeError("softmax_cross_entropy: label count does not match batch");
  std::vector<T> probs(N * M);
  double loss = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    const int y = labels[n];
    if (y < 0 || static_cast<std::size_t>(y) >= M) {
      throw DataError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0," + std::to_string(M) + ")");
    }
    const T* row = logits.data().data() + n * M;
    const double mx = static_cast<double>(*std::max_element(row, row + M));
    double z = 0.0;
    for (std::size_t m = 0; m < M; ++m) z += std::exp(static_cast<double>(row[m]) - mx);
    const double lse = mx + std::log(z);
    loss += lse - static_cast<double>(row[y]);
    for (std::size_t m = 0; m < M; ++m) probs[n * M + m] = static_cast<T>(std::exp(static_cast<double>(row[m]) - lse));
  }
  loss /= static_cast<double>(N);
  std::vector<int> ys(labels.begin(), labels.end());
  return Tensor<T>::from_op({1}, {static_cast<T>(loss)}, {logits},
                            [N, M, probs = std::move(probs), ys = std::move(ys)](Node<T>& self) {
                              auto& pl = *self.parents[0];
                              pl.ensure_grad();
                              const double scale = static_cast<double>(self.grad[0]) / static_cast<double>(N);
                              for (std::size_t n = 0; n < N; ++n)
                                for (std::size_t m = 0; m < M; ++m) {
                                  const double onehot = static_cast<int>(m) == ys[n] ? 1.0 : 0.0;
                                  pl.grad[n * M + m] +=
                                      static_cast<T>(scale * (static_cast<double>(probs[n * M + m]) - onehot));
                                }
                            });
}

/// Mean absolute error; the target is treated as a constant.
template <class T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  detail::require_same_shape(pred, target, "l1_loss");
  if (pred.numel() == 0) throw ShapeError("l1_loss: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    s += std::abs(static_cast<double>(pred.data()[i]) - static_cast<double>(target.data()[i]));
  }
  const double n = static_cast<double>(pred.numel());
  return Tensor<T>::from_op({1}, {static_cast<T>(s / n)}, {pred},
                            [n, tv = std::vector<T>(target.data().begin(), target.data().end())](Node<T>& self) {
                              auto& pp = *self.parents[0];
                              pp.ensure_grad();
                              const double g = static_cast<double>(self.grad[0]) / n;
                              for (std::size_t i = 0; i < pp.value.size(); ++i) {
                                const double d = static_cast<double>(pp.value[i]) - static_cast<double>(tv[i]);
                                if (d > 0) pp.grad[i] += static_cast<T>(g);
                                if (d < 0) pp.grad[i] -= static_cast<T>(g);
                              }
                            });
}

}  // namespace dase::ad
