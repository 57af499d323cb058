#pragma once

// Approximate rank pooling of an ordered slice stack into a single dynamic
// image, order-invariant baseline poolings, and two reference routes (direct
// pairwise sum and subgradient descent on the rank-pooling objective) used to
// validate the closed form.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dase/error.hpp"
#include "dase/volume.hpp"
#include "dase/volume_io.hpp"

namespace dase {

enum class PoolingMethod { arp, max, mean, gap, stochastic, spp };

inline constexpr std::array<PoolingMethod, 6> kAllPoolingMethods = {
    PoolingMethod::arp, PoolingMethod::max, PoolingMethod::mean,
    PoolingMethod::gap, PoolingMethod::stochastic, PoolingMethod::spp};

inline std::string_view to_string(PoolingMethod m) {
  switch (m) {
    case PoolingMethod::arp: return "arp";
    case PoolingMethod::max: return "max";
    case PoolingMethod::mean: return "mean";
    case PoolingMethod::gap: return "gap";
    case PoolingMethod::stochastic: return "stochastic";
    case PoolingMethod::spp: return "spp";
  }
  return "?";
}

inline PoolingMethod parse_pooling_method(std::string_view s) {
  for (auto m : kAllPoolingMethods) {
    if (to_string(m) == s) return m;
  }
  throw UsageError("unknown pooling method '" + std::string(s) + "'");
}

/// H_t = sum_{i=1..t} 1/i, H_0 = 0.
inline double harmonic(std::size_t t) {
  double h = 0.0;
  for (std::size_t i = 1; i <= t; ++i) h += 1.0 / static_cast<double>(i);
  return h;
}

struct CoefficientVector {
  std::vector<double> alphas;

  std::size_t t_len() const { return alphas.size(); }
  double checksum() const {
    double s = 0.0;
    for (double a : alphas) s += std::abs(a);
    return s;
  }
};

/// alpha_t = 2(T - t + 1) - (T + 1)(H_T - H_{t-1}), t = 1..T.
inline CoefficientVector arp_coefficients(std::size_t t_len) {
  if (t_len < 1) throw UsageError("arp: need at least one slice");
  std::vector<double> h(t_len + 1, 0.0);
  for (std::size_t t = 1; t <= t_len; ++t) h[t] = h[t - 1] + 1.0 / static_cast<double>(t);
  const double T = static_cast<double>(t_len);
  CoefficientVector c;
  c.alphas.resize(t_len);
  for (std::size_t t = 1; t <= t_len; ++t) {
    c.alphas[t - 1] = 2.0 * (T - static_cast<double>(t) + 1.0) - (T + 1.0) * (h[t_len] - h[t - 1]);
  }
  return c;
}

struct DynamicImage {
  PlanarImage payload;
  PoolingMethod method = PoolingMethod::arp;
  std::size_t source_t_len = 0;
  std::optional<std::uint64_t> seed;
};

namespace detail {

inline void check_slices(std::span<const PlanarImage> slices) {
  if (slices.empty()) throw ShapeError("pooling: empty slice list");
  for (const auto& s : slices) {
    if (!s.same_dims(slices.front()) || s.channels() != 1) {
      throw ShapeError("pooling: slices must be single-channel with equal dims");
    }
  }
}

inline PlanarImage image_from(const std::vector<double>& acc, const PlanarImage& like) {
  PlanarImage out(like.height(), like.width(), 1);
  for (std::size_t i = 0; i < acc.size(); ++i) out.values()[i] = static_cast<float>(acc[i]);
  return out;
}

// Running prefix means V_t = (1/t) sum_{i<=t} psi_i, t = 1..T.
inline std::vector<std::vector<double>> prefix_means(std::span<const PlanarImage> slices) {
  const std::size_t n = slices.front().pixel_count();
  std::vector<std::vector<double>> v(slices.size(), std::vector<double>(n));
  std::vector<double> run(n, 0.0);
  for (std::size_t t = 0; t < slices.size(); ++t) {
    for (std::size_t p = 0; p < n; ++p) {
      run[p] += slices[t].values()[p];
      v[t][p] = run[p] / static_cast<double>(t + 1);
    }
  }
  return v;
}

}  // namespace detail

/// d* = sum_t alpha_t psi_t with psi_t the raw slice pixels.
inline DynamicImage encode_arp(std::span<const PlanarImage> slices) {
  detail::check_slices(slices);
  const auto coeffs = arp_coefficients(slices.size());
  std::vector<double> acc(slices.front().pixel_count(), 0.0);
  for (std::size_t t = 0; t < slices.size(); ++t) {
    const double a = coeffs.alphas[t];
    auto vals = slices[t].values();
    for (std::size_t p = 0; p < acc.size(); ++p) acc[p] += a * vals[p];
  }
  return {detail::image_from(acc, slices.front()), PoolingMethod::arp, slices.size(), std::nullopt};
}

inline DynamicImage encode_baseline(std::span<const PlanarImage> slices, PoolingMethod method,
                                    std::optional<std::uint64_t> seed = std::nullopt) {
  detail::check_slices(slices);
  if (method == PoolingMethod::arp) throw UsageError("encode_baseline: arp is not a baseline");
  if (method == PoolingMethod::stochastic && !seed) throw UsageError("stochastic pooling requires a seed");
  if (method != PoolingMethod::stochastic && seed) seed.reset();

  const std::size_t n = slices.front().pixel_count();
  const std::size_t T = slices.size();
  std::vector<double> acc(n, 0.0);

  switch (method) {
    case PoolingMethod::max: {
      for (std::size_t p = 0; p < n; ++p) {
        double m = slices[0].values()[p];
        for (std::size_t t = 1; t < T; ++t) m = std::max(m, static_cast<double>(slices[t].values()[p]));
        acc[p] = m;
      }
      break;
    }
    case PoolingMethod::mean: {
      for (const auto& s : slices)
        for (std::size_t p = 0; p < n; ++p) acc[p] += s.values()[p];
      for (double& a : acc) a /= static_cast<double>(T);
      break;
    }
    case PoolingMethod::gap: {
      double total = 0.0;
      for (const auto& s : slices)
        for (float v : s.values()) total += v;
      std::fill(acc.begin(), acc.end(), total / static_cast<double>(T * n));
      break;
    }
    case PoolingMethod::stochastic: {
      // One draw per pixel, slice chosen with probability proportional to its
      // (non-negative) value; uniform when every slice is zero there.
      std::mt19937_64 rng(*seed);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      for (std::size_t p = 0; p < n; ++p) {
        double total = 0.0;
        for (std::size_t t = 0; t < T; ++t) total += std::max(0.0, static_cast<double>(slices[t].values()[p]));
        const double u = unit(rng);
        std::size_t pick = T - 1;
        if (total > 0.0) {
          double cum = 0.0;
          for (std::size_t t = 0; t < T; ++t) {
            cum += std::max(0.0, static_cast<double>(slices[t].values()[p])) / total;
            if (u < cum) {
              pick = t;
              break;
            }
          }
        } else {
          pick = std::min(T - 1, static_cast<std::size_t>(u * static_cast<double>(T)));
        }
        acc[p] = slices[pick].values()[p];
      }
      break;
    }
    case PoolingMethod::spp: {
      // Average of the mean maps over 1, 2 and 4 contiguous temporal windows.
      std::size_t maps = 0;
      for (std::size_t windows : {1u, 2u, 4u}) {
        for (std::size_t w = 0; w < windows; ++w) {
          const std::size_t lo = w * T / windows;
          const std::size_t hi = (w + 1) * T / windows;
          if (hi <= lo) continue;
          for (std::size_t p = 0; p < n; ++p) {
            double s = 0.0;
            for (std::size_t t = lo; t < hi; ++t) s += slices[t].values()[p];
            acc[p] += s / static_cast<double>(hi - lo);
          }
          ++maps;
        }
      }
      for (double& a : acc) a /= static_cast<double>(maps);
      break;
    }
    case PoolingMethod::arp:
      break;
  }
  return {detail::image_from(acc, slices.front()), method, T, seed};
}

/// Dispatches to ARP or a baseline.
inline DynamicImage encode(std::span<const PlanarImage> slices, PoolingMethod method,
                           std::optional<std::uint64_t> seed = std::nullopt) {
  if (method == PoolingMethod::arp) return encode_arp(slices);
  return encode_baseline(slices, method, seed);
}

inline DynamicImage encode(const Volume& v, PoolingMethod method, std::optional<std::uint64_t> seed = std::nullopt) {
  const auto s = slices(v);
  return encode(s, method, seed);
}

/// Brute-force sum_{q>t} (V_q - V_t) over all ordered pairs.
inline PlanarImage pairwise_oracle(std::span<const PlanarImage> slices) {
  detail::check_slices(slices);
  const auto v = detail::prefix_means(slices);
  std::vector<double> acc(slices.front().pixel_count(), 0.0);
  for (std::size_t t = 0; t < v.size(); ++t) {
    for (std::size_t q = t + 1; q < v.size(); ++q) {
      for (std::size_t p = 0; p < acc.size(); ++p) acc[p] += v[q][p] - v[t][p];
    }
  }
  return detail::image_from(acc, slices.front());
}

struct RankPoolProblem {
  double reg_lambda = 0.0;
  double step_size = 0.1;
  std::size_t steps = 1;
};

/// Subgradient descent from d = 0 on
///   lambda/2 |d|^2 + 2/(T(T-1)) sum_{q>t} max(0, 1 - <d,V_q> + <d,V_t>).
inline std::vector<double> rank_pool_oracle(std::span<const PlanarImage> slices, const RankPoolProblem& problem) {
  detail::check_slices(slices);
  if (slices.size() < 2) throw UsageError("rank pooling needs at least two slices");
  if (problem.reg_lambda < 0.0) throw UsageError("rank pooling: negative regularizer");
  if (problem.steps < 1) throw UsageError("rank pooling: steps must be >= 1");

  const auto v = detail::prefix_means(slices);
  const std::size_t T = v.size();
  const std::size_t n = v.front().size();
  const double pair_w = 2.0 / (static_cast<double>(T) * static_cast<double>(T - 1));

  std::vector<double> d(n, 0.0), score(T), beta(T), grad(n);
  for (std::size_t step = 0; step < problem.steps; ++step) {
    for (std::size_t t = 0; t < T; ++t) {
      double s = 0.0;
      for (std::size_t p = 0; p < n; ++p) s += d[p] * v[t][p];
      score[t] = s;
    }
    // beta_t collects the signed count of active hinges touching V_t.
    std::fill(beta.begin(), beta.end(), 0.0);
    double objective = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t q = t + 1; q < T; ++q) {
        const double margin = 1.0 - score[q] + score[t];
        if (margin > 0.0) {
          objective += pair_w * margin;
          beta[q] += 1.0;
          beta[t] -= 1.0;
        }
      }
    }
    double norm2 = 0.0;
    for (double x : d) norm2 += x * x;
    objective += 0.5 * problem.reg_lambda * norm2;
    if (!std::isfinite(objective)) throw NumericError("rank pooling: non-finite objective");

    for (std::size_t p = 0; p < n; ++p) {
      double g = problem.reg_lambda * d[p];
      for (std::size_t t = 0; t < T; ++t) g -= pair_w * beta[t] * v[t][p];
      grad[p] = g;
    }
    for (std::size_t p = 0; p < n; ++p) d[p] -= problem.step_size * grad[p];
  }
  return d;
}

inline nlohmann::json sidecar_json(const DynamicImage& img) {
  nlohmann::json j;
  j["method"] = std::string(to_string(img.method));
  j["T"] = img.source_t_len;
  j["seed"] = img.seed ? nlohmann::json(*img.seed) : nlohmann::json(nullptr);
  j["alpha_checksum"] = arp_coefficients(img.source_t_len).checksum();
  return j;
}

/// Writes the PFM payload and a sibling JSON sidecar (same stem, .json).
inline std::filesystem::path write_dynamic_image(const DynamicImage& img, const std::filesystem::path& pfm_path) {
  write_pfm(img.payload, pfm_path);
  auto sidecar = pfm_path;
  sidecar.replace_extension(".json");
  detail::write_file(sidecar, sidecar_json(img).dump(2) + "\n");
  return sidecar;
}

}  // namespace dase
