#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dase/autodiff/tensor.hpp"
#include "dase/error.hpp"

namespace dase::ad {

struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;

  void validate() const {
    if (kernel < 1 || stride < 1) throw ConfigError("conv: kernel and stride must be >= 1");
    if (groups < 1 || in_channels % groups != 0 || out_channels % groups != 0) {
      throw ConfigError("conv: groups " + std::to_string(groups) + " must divide in_channels " +
                        std::to_string(in_channels) + " and out_channels " + std::to_string(out_channels));
    }
  }

  Shape weight_shape() const { return {out_channels, in_channels / groups, kernel, kernel}; }

  /// Output extent along one spatial axis (floor division, as in common frameworks).
  std::size_t output_extent(std::size_t in) const {
    if (in + 2 * padding < kernel) {
      throw ShapeError("conv: kernel " + std::to_string(kernel) + " exceeds padded input " +
                       std::to_string(in + 2 * padding));
    }
    return (in + 2 * padding - kernel) / stride + 1;
  }
};

/// Weight parameters of a grouped convolution, bias excluded: C_in * C_out * K^2 / G.
inline std::size_t param_count(const ConvSpec& s) {
  s.validate();
  return s.in_channels * s.out_channels * s.kernel * s.kernel / s.groups;
}

namespace detail {

// Patch matrix for one sample and one group: rows (c, ky, kx), columns output pixels.
template <class T>
void im2col(const T* x, std::size_t channels, std::size_t H, std::size_t W, const ConvSpec& s, std::size_t Ho,
            std::size_t Wo, T* col) {
  const std::size_t K = s.kernel;
  const std::size_t P = Ho * Wo;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = x + c * H * W;
    for (std::size_t ky = 0; ky < K; ++ky) {
      for (std::size_t kx = 0; kx < K; ++kx) {
        T* row = col + ((c * K + ky) * K + kx) * P;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const long iy = static_cast<long>(oy * s.stride + ky) - static_cast<long>(s.padding);
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const long ix = static_cast<long>(ox * s.stride + kx) - static_cast<long>(s.padding);
            row[oy * Wo + ox] = (iy >= 0 && iy < static_cast<long>(H) && ix >= 0 && ix < static_cast<long>(W))
                                    ? plane[iy * static_cast<long>(W) + ix]
                                    : T{0};
          }
        }
      }
    }
  }
}

inline void col2im_acc(const double* col, std::size_t channels, std::size_t H, std::size_t W, const ConvSpec& s,
                       std::size_t Ho, std::size_t Wo, double* dx) {
  const std::size_t K = s.kernel;
  const std::size_t P = Ho * Wo;
  for (std::size_t c = 0; c < channels; ++c) {
    double* plane = dx + c * H * W;
    for (std::size_t ky = 0; ky < K; ++ky) {
      for (std::size_t kx = 0; kx < K; ++kx) {
        const double* row = col + ((c * K + ky) * K + kx) * P;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const long iy = static_cast<long>(oy * s.stride + ky) - static_cast<long>(s.padding);
          if (iy < 0 || iy >= static_cast<long>(H)) continue;
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const long ix = static_cast<long>(ox * s.stride + kx) - static_cast<long>(s.padding);
            if (ix < 0 || ix >= static_cast<long>(W)) continue;
            plane[iy * static_cast<long>(W) + ix] += row[oy * Wo + ox];
          }
        }
      }
    }
  }
}

inline bool is_pointwise(const ConvSpec& s) { return s.kernel == 1 && s.stride == 1 && s.padding == 0; }

}  // namespace detail

/// Grouped 2D cross-correlation with zero padding.
/// x [N, C_in, H, W], w [C_out, C_in/G, K, K], b [C_out] or undefined.
/// All reductions run in double, in a fixed loop order.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const ConvSpec& spec) {
  spec.validate();
  if (x.rank() != 4 || x.dim(1) != spec.in_channels) {
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " incompatible with in_channels " +
                     std::to_string(spec.in_channels));
  }
  if (w.shape() != spec.weight_shape()) {
    throw ShapeError("conv2d: weight " + shape_str(w.shape()) + ", expected " + shape_str(spec.weight_shape()));
  }
  if (b.defined() && (b.rank() != 1 || b.dim(0) != spec.out_channels)) throw ShapeError("conv2d: bias shape");

  const std::size_t N = x.dim(0), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = spec.output_extent(H), Wo = spec.output_extent(W);
  const std::size_t G = spec.groups;
  const std::size_t Cg_in = spec.in_channels / G, Cg_out = spec.out_channels / G;
  const std::size_t KK = spec.kernel * spec.kernel;
  const std::size_t rows = Cg_in * KK;
  const std::size_t P = Ho * Wo;
  const bool pointwise = detail::is_pointwise(spec);

  const auto xv = x.data();
  const auto wv = w.data();
  std::vector<T> out(N * spec.out_channels * P);
  std::vector<T> colbuf(pointwise ? 0 : rows * P);
  std::vector<double> acc(P);

  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t g = 0; g < G; ++g) {
      const T* xg = xv.data() + (n * spec.in_channels + g * Cg_in) * H * W;
      const T* col = xg;
      if (!pointwise) {
        detail::im2col(xg, Cg_in, H, W, spec, Ho, Wo, colbuf.data());
        col = colbuf.data();
      }
      for (std::size_t m = 0; m < Cg_out; ++m) {
        const std::size_t oc = g * Cg_out + m;
        std::fill(acc.begin(), acc.end(), b.defined() ? static_cast<double>(b.data()[oc]) : 0.0);
        const T* wr = wv.data() + oc * rows;
        for (std::size_t k = 0; k < rows; ++k) {
          const double wk = wr[k];
          const T* cr = col + k * P;
          for (std::size_t p = 0; p < P; ++p) acc[p] += wk * static_cast<double>(cr[p]);
        }
        T* o = out.data() + (n * spec.out_channels + oc) * P;
        for (std::size_t p = 0; p < P; ++p) o[p] = static_cast<T>(acc[p]);
      }
    }
  }

  std::vector<Tensor<T>> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return Tensor<T>::from_op(
      {N, spec.out_channels, Ho, Wo}, std::move(out), std::move(parents),
      [spec, N, H, W, Ho, Wo, G, Cg_in, Cg_out, rows, P, pointwise](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        Node<T>* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
        const bool need_x = px.requires_grad, need_w = pw.requires_grad, need_b = pb && pb->requires_grad;
        std::vector<T> colbuf(pointwise ? 0 : rows * P);
        std::vector<double> dcol(need_x ? rows * P : 0);
        std::vector<double> dx(need_x ? Cg_in * H * W : 0);
        std::vector<double> dw(need_w ? spec.out_channels * rows : 0, 0.0);
        std::vector<double> db(need_b ? spec.out_channels : 0, 0.0);
        if (need_x) px.ensure_grad();

        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t g = 0; g < G; ++g) {
            const T* xg = px.value.data() + (n * spec.in_channels + g * Cg_in) * H * W;
            const T* col = xg;
            if (need_w && !pointwise) {
              detail::im2col(xg, Cg_in, H, W, spec, Ho, Wo, colbuf.data());
              col = colbuf.data();
            }
            if (need_x) std::fill(dcol.begin(), dcol.end(), 0.0);
            for (std::size_t m = 0; m < Cg_out; ++m) {
              const std::size_t oc = g * Cg_out + m;
              const T* go = self.grad.data() + (n * spec.out_channels + oc) * P;
              if (need_b) {
                double s = 0.0;
                for (std::size_t p = 0; p < P; ++p) s += go[p];
                db[oc] += s;
              }
              if (need_w) {
                for (std::size_t k = 0; k < rows; ++k) {
                  const T* cr = col + k * P;
                  double s = 0.0;
                  for (std::size_t p = 0; p < P; ++p) s += static_cast<double>(go[p]) * static_cast<double>(cr[p]);
                  dw[oc * rows + k] += s;
                }
              }
              if (need_x) {
                const T* wr = pw.value.data() + oc * rows;
                for (std::size_t k = 0; k < rows; ++k) {
                  const double wk = wr[k];
                  double* dr = dcol.data() + k * P;
                  for (std::size_t p = 0; p < P; ++p) dr[p] += wk * static_cast<double>(go[p]);
                }
              }
            }
            if (need_x) {
              T* gx = px.grad.data() + (n * spec.in_channels + g * Cg_in) * H * W;
              if (pointwise) {
                for (std::size_t i = 0; i < Cg_in * H * W; ++i) gx[i] += static_cast<T>(dcol[i]);
              } else {
                std::fill(dx.begin(), dx.end(), 0.0);
                detail::col2im_acc(dcol.data(), Cg_in, H, W, spec, Ho, Wo, dx.data());
                for (std::size_t i = 0; i < dx.size(); ++i) gx[i] += static_cast<T>(dx[i]);
              }
            }
          }
        }
        if (need_w) {
          pw.ensure_grad();
          for (std::size_t i = 0; i < dw.size(); ++i) pw.grad[i] += static_cast<T>(dw[i]);
        }
        if (need_b) {
          pb->ensure_grad();
          for (std::size_t i = 0; i < db.size(); ++i) pb->grad[i] += static_cast<T>(db[i]);
        }
      });
}

}  // namespace dase::ad
