#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dase/error.hpp"

namespace dase {

/// Ordered stack of T slices, each H x W. Voxels are t-major, row-major
/// within a slice. Slice order carries meaning and is never changed here.
class Volume {
 public:
  Volume() = default;

  Volume(std::size_t t_len, std::size_t height, std::size_t width)
      : t_len_(t_len), height_(height), width_(width), voxels_(t_len * height * width, 0.0f) {}

  Volume(std::size_t t_len, std::size_t height, std::size_t width, std::vector<float> voxels)
      : t_len_(t_len), height_(height), width_(width), voxels_(std::move(voxels)) {
    if (voxels_.size() != t_len_ * height_ * width_) {
      throw ShapeError("volume: voxel count " + std::to_string(voxels_.size()) +
                       " does not match T*H*W = " + std::to_string(t_len_ * height_ * width_));
    }
  }

  std::size_t t_len() const { return t_len_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t slice_size() const { return height_ * width_; }
  bool empty() const { return voxels_.empty(); }

  std::span<const float> voxels() const { return voxels_; }
  std::span<float> voxels() { return voxels_; }

  std::span<const float> slice(std::size_t t) const {
    return std::span<const float>(voxels_).subspan(t * slice_size(), slice_size());
  }
  std::span<float> slice(std::size_t t) {
    return std::span<float>(voxels_).subspan(t * slice_size(), slice_size());
  }

  float& at(std::size_t t, std::size_t y, std::size_t x) {
    return voxels_[(t * height_ + y) * width_ + x];
  }
  float at(std::size_t t, std::size_t y, std::size_t x) const {
    return voxels_[(t * height_ + y) * width_ + x];
  }

  friend bool operator==(const Volume&, const Volume&) = default;

 private:
  std::size_t t_len_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<float> voxels_;
};

/// C x H x W planar image, channel-major.
class PlanarImage {
 public:
  PlanarImage() = default;

  PlanarImage(std::size_t height, std::size_t width, std::size_t channels = 1)
      : height_(height), width_(width), channels_(channels), values_(channels * height * width, 0.0f) {}

  PlanarImage(std::size_t height, std::size_t width, std::size_t channels, std::vector<float> values)
      : height_(height), width_(width), channels_(channels), values_(std::move(values)) {
    if (channels_ < 1) throw ShapeError("image: channel count must be >= 1");
    if (values_.size() != channels_ * height_ * width_) {
      throw ShapeError("image: value count does not match C*H*W");
    }
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t channels() const { return channels_; }
  std::size_t pixel_count() const { return height_ * width_; }

  std::span<const float> values() const { return values_; }
  std::span<float> values() { return values_; }

  float& at(std::size_t c, std::size_t y, std::size_t x) {
    return values_[(c * height_ + y) * width_ + x];
  }
  float at(std::size_t c, std::size_t y, std::size_t x) const {
    return values_[(c * height_ + y) * width_ + x];
  }

  bool same_dims(const PlanarImage& o) const {
    return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
  }

  friend bool operator==(const PlanarImage&, const PlanarImage&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 1;
  std::vector<float> values_;
};

struct HistogramSpec {
  std::size_t bins = 64;
  double range_lo = 0.0;
  double range_hi = 1.0;

  void validate() const {
    if (bins < 2) throw UsageError("histogram: need at least 2 bins");
    if (!(range_lo < range_hi)) throw UsageError("histogram: range_lo must be < range_hi");
  }
};

/// Per-volume min-max rescale to [0,1]. A constant volume maps to zeros.
inline Volume normalize_volume(const Volume& v) {
  Volume out = v;
  auto vox = out.voxels();
  if (vox.empty()) return out;
  const auto [mn_it, mx_it] = std::minmax_element(vox.begin(), vox.end());
  const double mn = *mn_it;
  const double range = static_cast<double>(*mx_it) - mn;
  if (!(range > 0.0)) {
    std::fill(vox.begin(), vox.end(), 0.0f);
    return out;
  }
  for (float& x : vox) {
    const double r = (static_cast<double>(x) - mn) / range;
    x = static_cast<float>(std::clamp(r, 0.0, 1.0));
  }
  return out;
}

/// Splits a volume into T single-channel H x W images, in stored order.
inline std::vector<PlanarImage> slices(const Volume& v) {
  std::vector<PlanarImage> out;
  out.reserve(v.t_len());
  for (std::size_t t = 0; t < v.t_len(); ++t) {
    auto s = v.slice(t);
    out.emplace_back(v.height(), v.width(), 1, std::vector<float>(s.begin(), s.end()));
  }
  return out;
}

/// Inverse of slices(): stacks equally sized single-channel images.
inline Volume assemble(std::span<const PlanarImage> images) {
  if (images.empty()) throw ShapeError("assemble: no slices");
  const auto& first = images.front();
  std::vector<float> vox;
  vox.reserve(images.size() * first.pixel_count());
  for (const auto& img : images) {
    if (!img.same_dims(first) || img.channels() != 1) {
      throw ShapeError("assemble: slices must be single-channel with equal dims");
    }
    vox.insert(vox.end(), img.values().begin(), img.values().end());
  }
  return Volume(images.size(), first.height(), first.width(), std::move(vox));
}

namespace detail {

inline std::vector<double> normalized_histogram(std::span<const float> values, const HistogramSpec& spec) {
  std::vector<double> h(spec.bins, 0.0);
  const double width = (spec.range_hi - spec.range_lo) / static_cast<double>(spec.bins);
  for (float v : values) {
    const double pos = (static_cast<double>(v) - spec.range_lo) / width;
    long long bin = std::isfinite(pos) ? static_cast<long long>(std::floor(pos)) : (pos > 0 ? static_cast<long long>(spec.bins) : 0);
    bin = std::clamp<long long>(bin, 0, static_cast<long long>(spec.bins) - 1);
    h[static_cast<std::size_t>(bin)] += 1.0;
  }
  for (double& c : h) c /= static_cast<double>(values.size());
  return h;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) {
    throw UndefinedError("histogram correlation: zero-variance histogram");
  }
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

}  // namespace detail

/// Pearson correlation of two count-normalized intensity histograms.
/// Values outside [range_lo, range_hi) land in the edge bins.
inline double histogram_correlation(std::span<const float> a, std::span<const float> b,
                                    const HistogramSpec& spec = {}) {
  spec.validate();
  if (a.empty() || b.empty()) throw UsageError("histogram correlation: empty input");
  const auto ha = detail::normalized_histogram(a, spec);
  const auto hb = detail::normalized_histogram(b, spec);
  return detail::pearson(ha, hb);
}

inline double histogram_correlation(const Volume& a, const Volume& b, const HistogramSpec& spec = {}) {
  return histogram_correlation(a.voxels(), b.voxels(), spec);
}

inline double histogram_correlation(const PlanarImage& a, const PlanarImage& b, const HistogramSpec& spec = {}) {
  return histogram_correlation(a.values(), b.values(), spec);
}

}  // namespace dase
