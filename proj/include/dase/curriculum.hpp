#pragma once

// Complexity-gated curriculum: feature-map complexity, quantile thresholds,
// the stage-advancement state machine, and weighted cross-stage fusion.

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dase/autodiff/ops.hpp"
#include "dase/autodiff/tensor.hpp"
#include "dase/error.hpp"

namespace dase::curriculum {

using ad::Tensor;

/// Sum over channels and pixels of |dx| + |dy|, forward differences, with the
/// last column (dx) and last row (dy) contributing zero. `plane` is [C,H,W].
template <class T>
double complexity(std::span<const T> plane, std::size_t C, std::size_t H, std::size_t W) {
  if (plane.size() != C * H * W) throw ShapeError("complexity: data does not match C*H*W");
  double total = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    const T* p = plane.data() + c * H * W;
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const double v = p[y * W + x];
        if (x + 1 < W) total += std::abs(static_cast<double>(p[y * W + x + 1]) - v);
        if (y + 1 < H) total += std::abs(static_cast<double>(p[(y + 1) * W + x]) - v);
      }
    }
  }
  return total;
}

/// [C,H,W] input scores one map; [N,C,H,W] input averages the per-sample scores.
template <class T>
double complexity(const Tensor<T>& x) {
  if (x.rank() == 3) return complexity<T>(x.data(), x.dim(0), x.dim(1), x.dim(2));
  if (x.rank() != 4) throw ShapeError("complexity: expected [C,H,W] or [N,C,H,W], got " + ad::shape_str(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (N == 0) throw ShapeError("complexity: empty batch");
  double s = 0.0;
  for (std::size_t n = 0; n < N; ++n) s += complexity<T>(x.data().subspan(n * C * H * W, C * H * W), C, H, W);
  return s / static_cast<double>(N);
}

/// Linear-interpolation quantiles (position q * (n - 1) in the sorted samples).
inline std::vector<double> calibrate_thresholds(std::span<const double> samples, std::span<const double> quantiles) {
  if (samples.empty()) throw DataError("calibrate_thresholds: no samples");
  for (std::size_t i = 0; i < quantiles.size(); ++i) {
    if (!(quantiles[i] > 0.0 && quantiles[i] < 1.0)) throw UsageError("calibrate_thresholds: quantile outside (0,1)");
    if (i > 0 && !(quantiles[i] > quantiles[i - 1])) {
      throw UsageError("calibrate_thresholds: quantiles must be strictly increasing");
    }
  }
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> out;
  out.reserve(quantiles.size());
  for (double q : quantiles) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    out.push_back(sorted[lo] + frac * (sorted[hi] - sorted[lo]));
  }
  return out;
}

struct ComplexityScore {
  double value = 0.0;
  std::string stage;
  std::size_t step = 0;
};

struct TraceRow {
  ComplexityScore score;
  std::size_t stage_index = 1;  // index active when the score arrived
  double tau_active = 0.0;
  bool advanced = false;
};

struct RecalibrationEvent {
  std::size_t step = 0;
  std::size_t stage_index = 0;  // stage in force after the event
};

/// Stage i (1-based) of N advances to i+1 when its monitored complexity is
/// strictly above tau_i. At the final stage the index stays at N while the
/// recalibration signal is still raised.
class CurriculumState {
 public:
  CurriculumState() = default;

  CurriculumState(std::vector<std::string> stage_names, std::vector<double> thresholds)
      : stage_names_(std::move(stage_names)), thresholds_(std::move(thresholds)) {
    if (stage_names_.empty()) throw ConfigError("curriculum: no stages");
    if (thresholds_.size() != stage_names_.size()) {
      throw ConfigError("curriculum: need one threshold per stage (" + std::to_string(stage_names_.size()) + ")");
    }
    for (double t : thresholds_) {
      if (!(t >= 0.0)) throw ConfigError("curriculum: thresholds must be non-negative");
    }
  }

  std::size_t stage_index() const { return stage_index_; }
  std::size_t stage_count() const { return stage_names_.size(); }
  const std::string& active_stage() const { return stage_names_[stage_index_ - 1]; }
  const std::vector<std::string>& stage_names() const { return stage_names_; }
  const std::vector<double>& thresholds() const { return thresholds_; }
  double active_threshold() const { return thresholds_[stage_index_ - 1]; }
  const std::vector<TraceRow>& history() const { return history_; }
  const std::vector<RecalibrationEvent>& recalibration_events() const { return events_; }

  /// Returns true when recalibration is requested.
  bool advance(const ComplexityScore& score) {
    if (score.stage != active_stage()) {
      throw UsageError("curriculum: score for stage '" + score.stage + "' but '" + active_stage() + "' is monitored");
    }
    TraceRow row{score, stage_index_, active_threshold(), false};
    const bool above = score.value > active_threshold();
    if (above && stage_index_ < stage_count()) {
      ++stage_index_;
      row.advanced = true;
      events_.push_back({score.step, stage_index_});
    }
    history_.push_back(std::move(row));
    return above;
  }

  /// CSV trace: step, stage, lambda, tau_active, advanced.
  std::string trace_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "step,stage,lambda,tau_active,advanced\n";
    for (const auto& r : history_) {
      os << r.score.step << ',' << r.score.stage << ',' << r.score.value << ',' << r.tau_active << ','
         << (r.advanced ? 1 : 0) << '\n';
    }
    return os.str();
  }

 private:
  std::vector<std::string> stage_names_;
  std::vector<double> thresholds_;
  std::size_t stage_index_ = 1;
  std::vector<TraceRow> history_;
  std::vector<RecalibrationEvent> events_;
};

/// Functional form of CurriculumState::advance.
inline std::pair<CurriculumState, bool> advance(CurriculumState state, const ComplexityScore& score) {
  const bool recalibrate = state.advance(score);
  return {std::move(state), recalibrate};
}

/// Learned per-stage fusion scores; the mixing weights are their softmax.
template <class T>
struct FusionWeights {
  std::vector<std::string> stages;
  Tensor<T> scores;  // rank 1, one entry per stage

  Tensor<T> normalized() const { return ad::softmax(scores); }
};

template <class T>
struct StageProjection {
  Tensor<T> weight;  // [C_stage, D]
  Tensor<T> bias;    // [D]
};

/// sum_s w_s * proj_s(gap(feature_s)), w = softmax(scores). Features are [N,C,H,W];
/// the result is [N,D].
template <class T>
Tensor<T> fuse_stages(const std::map<std::string, Tensor<T>>& features, const FusionWeights<T>& weights,
                      const std::map<std::string, StageProjection<T>>& projections) {
  if (weights.stages.empty()) throw ShapeError("fuse_stages: no stages");
  std::vector<Tensor<T>> parts;
  parts.reserve(weights.stages.size());
  for (const auto& name : weights.stages) {
    const auto f = features.find(name);
    if (f == features.end()) throw DataError("fuse_stages: missing stage feature '" + name + "'");
    const auto pr = projections.find(name);
    if (pr == projections.end()) throw DataError("fuse_stages: missing projection for '" + name + "'");
    const auto& x = f->second;
    if (x.rank() != 4) throw ShapeError("fuse_stages: stage features must be [N,C,H,W]");
    auto pooled = ad::reshape(ad::pool2d(x, ad::PoolKind::global_avg), {x.dim(0), x.dim(1)});
    parts.push_back(ad::linear(pooled, pr->second.weight, pr->second.bias));
  }
  return ad::weighted_sum(parts, weights.normalized());
}

}  // namespace dase::curriculum
