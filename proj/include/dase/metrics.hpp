#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dase/error.hpp"

namespace dase::metrics {

struct Confusion {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;

  std::size_t total() const { return tp + tn + fp + fn; }
  Confusion& operator+=(const Confusion& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

/// Rates are in [0,1]. A metric whose denominator is zero reports 0 and its
/// name is listed in `undefined`.
struct MetricsReport {
  std::vector<Confusion> per_class;  // one-vs-rest
  double acc = 0.0, pre = 0.0, rec = 0.0, f1 = 0.0;
  std::optional<double> auc, ap, dsc, mae;
  std::vector<std::string> undefined;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

namespace detail {

inline double ratio(std::size_t num, std::size_t den, const std::string& name, std::vector<std::string>& flags) {
  if (den == 0) {
    flags.push_back(name);
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

struct Prf {
  double pre, rec, f1;
};

inline Prf precision_recall_f1(const Confusion& c, const std::string& suffix, std::vector<std::string>& flags) {
  Prf r{};
  r.pre = ratio(c.tp, c.tp + c.fp, "pre" + suffix, flags);
  r.rec = ratio(c.tp, c.tp + c.fn, "rec" + suffix, flags);
  if (r.pre + r.rec > 0.0) {
    r.f1 = 2.0 * r.pre * r.rec / (r.pre + r.rec);
  } else {
    r.f1 = 0.0;
    flags.push_back("f1" + suffix);
  }
  return r;
}

}  // namespace detail

/// Binary metrics from one confusion table.
inline MetricsReport classification_metrics(const Confusion& c) {
  if (c.total() == 0) throw DataError("classification_metrics: empty confusion table");
  MetricsReport r;
  r.per_class = {c};
  r.acc = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  const auto prf = detail::precision_recall_f1(c, "", r.undefined);
  r.pre = prf.pre;
  r.rec = prf.rec;
  r.f1 = prf.f1;
  return r;
}

/// Mann-Whitney AUC with midranks for ties, and average precision
/// sum_k (R_k - R_{k-1}) P_k over distinct score thresholds.
inline std::pair<double, double> auc_ap(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("auc_ap: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::size_t npos = 0;
  for (int l : labels) npos += l ? 1 : 0;
  const std::size_t nneg = n - npos;
  if (npos == 0 || nneg == 0) throw UndefinedError("auc_ap: both classes must be present");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) pos_rank_sum += midrank;
    i = j;
  }
  const double np = static_cast<double>(npos), nn = static_cast<double>(nneg);
  const double auc = (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);

  double ap = 0.0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = n; i > 0;) {
    std::size_t j = i;
    while (j > 0 && scores[order[j - 1]] == scores[order[i - 1]]) --j;
    std::size_t new_tp = 0;
    for (std::size_t k = j; k < i; ++k) new_tp += labels[order[k]] ? 1 : 0;
    tp += new_tp;
    seen += i - j;
    ap += (static_cast<double>(new_tp) / np) * (static_cast<double>(tp) / static_cast<double>(seen));
    i = j;
  }
  return {auc, ap};
}

/// 2|P & G| / (|P| + |G|); two empty masks score 1.
inline double dice(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size()) throw ShapeError("dice: mask shapes differ");
  std::size_t inter = 0, p = 0, g = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] != 0, b = gt[i] != 0;
    p += a;
    g += b;
    inter += a && b;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(p + g);
}

inline double mae(std::span<const double> preds, std::span<const double> targets) {
  if (preds.size() != targets.size()) throw ShapeError("mae: length mismatch");
  if (preds.empty()) throw DataError("mae: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) s += std::abs(preds[i] - targets[i]);
  return s / static_cast<double>(preds.size());
}

/// Multi-class report: overall accuracy, macro-averaged one-vs-rest
/// precision/recall/F1, and macro one-vs-rest AUC/AP over classes that have
/// both positives and negatives. `scores` is row-major [N, classes].
inline MetricsReport multiclass_report(std::span<const int> predictions, std::span<const int> labels,
                                       std::span<const double> scores, std::size_t classes) {
  if (predictions.size() != labels.size()) throw ShapeError("metrics: predictions and labels differ in length");
  if (labels.empty()) throw DataError("metrics: empty evaluation set");
  if (!scores.empty() && scores.size() != labels.size() * classes) throw ShapeError("metrics: score matrix shape");
  MetricsReport r;
  r.per_class.assign(classes, {});
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i], p = predictions[i];
    if (y < 0 || static_cast<std::size_t>(y) >= classes || p < 0 || static_cast<std::size_t>(p) >= classes) {
      throw DataError("metrics: class id out of range");
    }
    correct += y == p;
    for (std::size_t c = 0; c < classes; ++c) {
      const bool truth = static_cast<std::size_t>(y) == c, pred = static_cast<std::size_t>(p) == c;
      auto& cc = r.per_class[c];
      if (truth && pred) ++cc.tp;
      else if (!truth && pred) ++cc.fp;
      else if (truth && !pred) ++cc.fn;
      else ++cc.tn;
    }
  }
  r.acc = static_cast<double>(correct) / static_cast<double>(labels.size());
  for (std::size_t c = 0; c < classes; ++c) {
    const auto prf = detail::precision_recall_f1(r.per_class[c], "[" + std::to_string(c) + "]", r.undefined);
    r.pre += prf.pre;
    r.rec += prf.rec;
    r.f1 += prf.f1;
  }
  r.pre /= static_cast<double>(classes);
  r.rec /= static_cast<double>(classes);
  r.f1 /= static_cast<double>(classes);

  if (!scores.empty()) {
    double auc_sum = 0.0, ap_sum = 0.0;
    std::size_t used = 0;
    std::vector<double> col(labels.size());
    std::vector<int> bin(labels.size());
    for (std::size_t c = 0; c < classes; ++c) {
      for (std::size_t i = 0; i < labels.size(); ++i) {
        col[i] = scores[i * classes + c];
        bin[i] = static_cast<std::size_t>(labels[i]) == c ? 1 : 0;
      }
      const std::size_t pos = static_cast<std::size_t>(std::count(bin.begin(), bin.end(), 1));
      if (pos == 0 || pos == bin.size()) {
        r.undefined.push_back("auc[" + std::to_string(c) + "]");
        continue;
      }
      const auto [auc, ap] = auc_ap(col, bin);
      auc_sum += auc;
      ap_sum += ap;
      ++used;
    }
    if (used > 0) {
      r.auc = auc_sum / static_cast<double>(used);
      r.ap = ap_sum / static_cast<double>(used);
    }
  }
  return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j;
  nlohmann::json counts = nlohmann::json::array();
  for (const auto& c : r.per_class) counts.push_back({{"tp", c.tp}, {"tn", c.tn}, {"fp", c.fp}, {"fn", c.fn}});
  j["confusion"] = counts;
  j["acc"] = r.acc;
  j["pre"] = r.pre;
  j["rec"] = r.rec;
  j["f1"] = r.f1;
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  j["auc"] = opt(r.auc);
  j["ap"] = opt(r.ap);
  j["dsc"] = opt(r.dsc);
  j["mae"] = opt(r.mae);
  j["undefined"] = r.undefined;
  return j;
}

}  // namespace dase::metrics
