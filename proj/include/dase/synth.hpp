#pragma once

// Deterministic synthetic volumes whose class lives in slice order.
//
// Every volume shows a fixed elliptical "brain" (intensity 0.3) with a bright
// disc on top. The disc radius follows a class-dependent temporal profile:
//   class 0: grows linearly from r_min to r_max
//   class 1: shrinks linearly (class 0 played backwards)
//   class 2: grows to r_max at mid-volume and shrinks back (triangle pulse)
// Per-pixel time-averages coincide across the three profiles, so only an
// order-aware encoder separates them. Geometry depends on (seed, index);
// noise on (seed, class, index).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <string>

#include <json.hpp>

#include "dase/error.hpp"
#include "dase/volume.hpp"

namespace dase::synth {

struct SynthSpec {
  std::size_t class_count = 3;
  std::size_t volumes_per_class = 60;
  std::size_t t_len = 16;
  std::size_t height = 32;
  std::size_t width = 32;
  double noise = 0.05;
  std::uint64_t seed = 2024;

  void validate() const {
    if (t_len < 4 || height < 4 || width < 4) throw UsageError("synth: T, H, W must all be >= 4");
    if (class_count < 1 || class_count > 3) throw UsageError("synth: class_count must be in [1,3]");
    if (volumes_per_class < 1) throw UsageError("synth: volumes_per_class must be >= 1");
    if (!(noise >= 0.0)) throw UsageError("synth: noise must be >= 0");
  }
};

inline nlohmann::json to_json(const SynthSpec& s) {
  return {{"class_count", s.class_count}, {"volumes_per_class", s.volumes_per_class},
          {"T", s.t_len},                 {"H", s.height},
          {"W", s.width},                 {"noise", s.noise},
          {"seed", s.seed}};
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {"class_count", "volumes_per_class", "T", "H", "W", "noise", "seed"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) throw UsageError("synth spec: unknown key '" + it.key() + "'");
  }
  SynthSpec s;
  try {
    s.class_count = j.value("class_count", s.class_count);
    s.volumes_per_class = j.value("volumes_per_class", s.volumes_per_class);
    s.t_len = j.value("T", s.t_len);
    s.height = j.value("H", s.height);
    s.width = j.value("W", s.width);
    s.noise = j.value("noise", s.noise);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("synth spec: ") + e.what());
  }
  s.validate();
  return s;
}

/// Disc radius at slice t for a class, as a fraction in [0,1] between r_min and r_max.
inline double radius_profile(std::size_t class_id, std::size_t t, std::size_t t_len) {
  const double u = static_cast<double>(t) / static_cast<double>(t_len - 1);
  switch (class_id) {
    case 0: return u;
    case 1: return 1.0 - u;
    default: return 1.0 - std::abs(2.0 * u - 1.0);
  }
}

inline Volume gen_synthetic_volume(const SynthSpec& spec, std::size_t class_id, std::size_t index) {
  spec.validate();
  if (class_id >= spec.class_count) {
    throw UsageError("synth: class " + std::to_string(class_id) + " >= class_count " +
                     std::to_string(spec.class_count));
  }
  const double H = static_cast<double>(spec.height), W = static_cast<double>(spec.width);
  const double extent = std::min(H, W);

  std::seed_seq geo_seed{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                         static_cast<std::uint32_t>(index), 0x9e0u};
  std::mt19937_64 geo(geo_seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double cy = H * (0.44 + 0.12 * u01(geo));
  const double cx = W * (0.44 + 0.12 * u01(geo));
  const double r_min = extent * (0.09 + 0.01 * u01(geo));
  const double r_max = extent * (0.27 + 0.01 * u01(geo));

  std::seed_seq noise_seed{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                           static_cast<std::uint32_t>(class_id), static_cast<std::uint32_t>(index), 0x5e1u};
  std::mt19937_64 noise_rng(noise_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Volume v(spec.t_len, spec.height, spec.width);
  for (std::size_t t = 0; t < spec.t_len; ++t) {
    const double r = r_min + (r_max - r_min) * radius_profile(class_id, t, spec.t_len);
    for (std::size_t y = 0; y < spec.height; ++y) {
      for (std::size_t x = 0; x < spec.width; ++x) {
        const double py = static_cast<double>(y) + 0.5, px = static_cast<double>(x) + 0.5;
        const double ey = (py - H / 2) / (0.45 * H), ex = (px - W / 2) / (0.45 * W);
        double val = ey * ey + ex * ex <= 1.0 ? 0.3 : 0.0;
        const double d = std::hypot(py - cy, px - cx);
        val += 0.7 * std::clamp(r - d + 0.5, 0.0, 1.0);  // anti-aliased disc edge
        if (spec.noise > 0.0) val += spec.noise * gauss(noise_rng);
        v.at(t, y, x) = static_cast<float>(val);
      }
    }
  }
  return normalize_volume(v);
}

}  // namespace dase::synth
