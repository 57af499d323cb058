#pragma once

// Training and evaluation harness: encoded datasets, k-fold plans, the
// curriculum-driven AdamW loop, metrics and subject-level prediction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dase/arp.hpp"
#include "dase/autodiff/ops.hpp"
#include "dase/autodiff/optim.hpp"
#include "dase/curriculum.hpp"
#include "dase/error.hpp"
#include "dase/metrics.hpp"
#include "dase/network/model.hpp"
#include "dase/synth.hpp"
#include "dase/volume.hpp"

namespace dase::train {

using ad::Tensor;
using ad::TensorF;

enum class Task { classification, regression };

inline std::string to_string(Task t) { return t == Task::classification ? "classification" : "regression"; }

inline Task parse_task(const std::string& s) {
  if (s == "classification") return Task::classification;
  if (s == "regression") return Task::regression;
  throw UsageError("unknown task '" + s + "'");
}

struct RunConfig {
  net::ModelSpec model = net::default_model_spec();
  ad::AdamWConfig optim;  // lr 1e-3, weight decay 0.01
  double min_lr = 0.0;
  std::size_t period = 50;
  std::size_t epochs = 12;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  PoolingMethod encoding = PoolingMethod::arp;
  std::vector<double> quantiles = {0.25, 0.5, 0.75};
  std::size_t warmup_epochs = 1;
  Task task = Task::classification;
  std::size_t folds = 3;
  std::optional<std::string> data;            // directory with labels.csv
  std::optional<synth::SynthSpec> synth;      // or a generated dataset

  void validate() const {
    model.validate();
    if (batch_size < 1) throw UsageError("config: batch_size must be positive");
    if (period < 1) throw UsageError("config: period must be positive");
    if (!(optim.lr > 0.0) || !(optim.weight_decay >= 0.0)) throw UsageError("config: bad optimizer settings");
    if (quantiles.empty()) throw UsageError("config: need at least one curriculum quantile");
    for (std::size_t i = 0; i < quantiles.size(); ++i) {
      if (!(quantiles[i] > 0.0 && quantiles[i] < 1.0)) throw UsageError("config: quantiles must lie in (0,1)");
      if (i > 0 && !(quantiles[i] > quantiles[i - 1])) throw UsageError("config: quantiles must increase");
    }
    if (folds < 2) throw UsageError("config: folds must be >= 2");
    if (task == Task::regression && model.classes != 1) throw UsageError("config: regression needs classes = 1");
  }
};

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j = {{"model", net::to_json(c.model)},
                      {"lr", c.optim.lr},
                      {"weight_decay", c.optim.weight_decay},
                      {"beta1", c.optim.beta1},
                      {"beta2", c.optim.beta2},
                      {"eps", c.optim.eps},
                      {"min_lr", c.min_lr},
                      {"period", c.period},
                      {"epochs", c.epochs},
                      {"batch_size", c.batch_size},
                      {"seed", c.seed},
                      {"encoding", std::string(to_string(c.encoding))},
                      {"quantiles", c.quantiles},
                      {"warmup_epochs", c.warmup_epochs},
                      {"task", to_string(c.task)},
                      {"folds", c.folds}};
  if (c.data) j["data"] = *c.data;
  if (c.synth) j["synth"] = synth::to_json(*c.synth);
  return j;
}

/// `seed` is mandatory; everything else falls back to defaults. Unknown keys
/// are rejected.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw UsageError("config: expected a JSON object");
  static const std::set<std::string> known = {"model",  "lr",         "weight_decay", "beta1",         "beta2",
                                              "eps",    "min_lr",     "period",       "epochs",        "batch_size",
                                              "seed",   "encoding",   "quantiles",    "warmup_epochs", "task",
                                              "folds",  "data",       "synth"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) throw UsageError("config: unknown key '" + it.key() + "'");
  }
  if (!j.contains("seed")) throw UsageError("config: 'seed' is required");
  RunConfig c;
  try {
    if (j.contains("model")) c.model = net::model_spec_from_json(j.at("model"));
    c.optim.lr = j.value("lr", c.optim.lr);
    c.optim.weight_decay = j.value("weight_decay", c.optim.weight_decay);
    c.optim.beta1 = j.value("beta1", c.optim.beta1);
    c.optim.beta2 = j.value("beta2", c.optim.beta2);
    c.optim.eps = j.value("eps", c.optim.eps);
    c.min_lr = j.value("min_lr", c.min_lr);
    c.period = j.value("period", c.period);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.at("seed").get<std::uint64_t>();
    c.encoding = parse_pooling_method(j.value("encoding", std::string("arp")));
    c.quantiles = j.value("quantiles", c.quantiles);
    c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
    c.task = parse_task(j.value("task", std::string("classification")));
    c.folds = j.value("folds", c.folds);
    if (j.contains("data")) c.data = j.at("data").get<std::string>();
    if (j.contains("synth")) c.synth = synth::synth_spec_from_json(j.at("synth"));
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  if (c.epochs < 1) throw UsageError("config: epochs must be positive");
  c.validate();
  return c;
}

/// Encoded dynamic images with labels (classification) or targets (regression).
struct Dataset {
  std::vector<PlanarImage> images;
  std::vector<int> labels;
  std::vector<double> targets;

  std::size_t size() const { return images.size(); }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset d;
    for (std::size_t i : idx) {
      d.images.push_back(images.at(i));
      if (!labels.empty()) d.labels.push_back(labels.at(i));
      if (!targets.empty()) d.targets.push_back(targets.at(i));
    }
    return d;
  }
};

/// Per-subject seed used by stochastic pooling, so the same subject always
/// encodes the same way.
inline std::uint64_t subject_seed(std::uint64_t run_seed, std::size_t subject) {
  return run_seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(subject);
}

/// Normalize, then encode with the chosen pooling method.
inline PlanarImage encode_subject(const Volume& v, PoolingMethod method, std::uint64_t seed) {
  return encode(normalize_volume(v), method, seed).payload;
}

inline Dataset encode_dataset(std::span<const Volume> volumes, std::span<const int> labels, PoolingMethod method,
                              std::uint64_t run_seed) {
  if (volumes.size() != labels.size()) throw ShapeError("dataset: volumes and labels differ in length");
  Dataset d;
  for (std::size_t i = 0; i < volumes.size(); ++i) {
    d.images.push_back(encode_subject(volumes[i], method, subject_seed(run_seed, i)));
    d.labels.push_back(labels[i]);
  }
  return d;
}

struct LabeledVolumes {
  std::vector<Volume> volumes;
  std::vector<int> labels;
};

/// Subjects interleaved by class: index i has class i % class_count.
inline LabeledVolumes synth_volumes(const synth::SynthSpec& spec) {
  spec.validate();
  LabeledVolumes out;
  for (std::size_t i = 0; i < spec.volumes_per_class; ++i) {
    for (std::size_t c = 0; c < spec.class_count; ++c) {
      out.volumes.push_back(synth::gen_synthetic_volume(spec, c, i));
      out.labels.push_back(static_cast<int>(c));
    }
  }
  return out;
}

struct FoldPlan {
  std::size_t k = 0;
  std::vector<std::vector<std::size_t>> test;
  std::vector<std::vector<std::size_t>> train;
};

/// Seeded shuffle, then contiguous folds; the first (n mod k) folds take one extra subject.
inline FoldPlan kfold_split(std::size_t subject_count, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw UsageError("kfold: k must be >= 2");
  if (k > subject_count) throw UsageError("kfold: k exceeds subject count");
  std::vector<std::size_t> order(subject_count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  FoldPlan plan;
  plan.k = k;
  const std::size_t base = subject_count / k, extra = subject_count % k;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t len = base + (f < extra ? 1 : 0);
    std::vector<std::size_t> t(order.begin() + static_cast<std::ptrdiff_t>(pos),
                               order.begin() + static_cast<std::ptrdiff_t>(pos + len));
    std::sort(t.begin(), t.end());
    plan.test.push_back(std::move(t));
    pos += len;
  }
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<std::size_t> tr;
    for (std::size_t g = 0; g < k; ++g)
      if (g != f) tr.insert(tr.end(), plan.test[g].begin(), plan.test[g].end());
    std::sort(tr.begin(), tr.end());
    plan.train.push_back(std::move(tr));
  }
  return plan;
}

struct HistoryRow {
  std::size_t epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::size_t stage = 1;
  double lambda = 0.0;  // mean complexity of the monitored stage over the epoch
  std::size_t advanced = 0;
};

inline std::string history_csv(const std::vector<HistoryRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,loss,lr,stage,lambda,advanced\n";
  for (const auto& r : rows) {
    os << r.epoch << ',' << r.loss << ',' << r.lr << ',' << r.stage << ',' << r.lambda << ',' << r.advanced << '\n';
  }
  return os.str();
}

/// Raised on a non-finite loss or gradient. The model holds the last parameters
/// that produced a finite loss.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, net::Model<float> last_good, std::vector<HistoryRow> history)
      : NumericError(what), last_good_(std::move(last_good)), history_(std::move(history)) {}

  const net::Model<float>& last_good() const { return last_good_; }
  const std::vector<HistoryRow>& history() const { return history_; }

 private:
  net::Model<float> last_good_;
  std::vector<HistoryRow> history_;
};

struct TrainResult {
  net::Model<float> model;
  std::vector<HistoryRow> history;
  curriculum::CurriculumState curriculum;
  bool curriculum_started = false;
};

namespace detail {

inline void check_images(const Dataset& d, const net::ModelSpec& spec) {
  for (const auto& img : d.images) {
    if (img.channels() != spec.input_channels || img.height() != spec.input_size || img.width() != spec.input_size) {
      throw ShapeError("dataset image " + std::to_string(img.channels()) + "x" + std::to_string(img.height()) + "x" +
                       std::to_string(img.width()) + " does not match model input " +
                       std::to_string(spec.input_channels) + "x" + std::to_string(spec.input_size) + "x" +
                       std::to_string(spec.input_size));
    }
  }
}

inline TensorF make_batch(const Dataset& d, std::span<const std::size_t> idx) {
  const auto& first = d.images.at(idx.front());
  const std::size_t per = first.values().size();
  std::vector<float> v;
  v.reserve(per * idx.size());
  for (std::size_t i : idx) v.insert(v.end(), d.images[i].values().begin(), d.images[i].values().end());
  return TensorF({idx.size(), first.channels(), first.height(), first.width()}, std::move(v));
}

inline TensorF batch_loss(const TensorF& logits, const Dataset& d, std::span<const std::size_t> idx, Task task) {
  if (task == Task::classification) {
    std::vector<int> y;
    for (std::size_t i : idx) y.push_back(d.labels.at(i));
    return ad::softmax_cross_entropy(logits, std::span<const int>(y));
  }
  std::vector<float> t;
  for (std::size_t i : idx) t.push_back(static_cast<float>(d.targets.at(i)));
  return ad::l1_loss(ad::reshape(logits, {idx.size()}), TensorF({idx.size()}, std::move(t)));
}

}  // namespace detail

/// AdamW + cosine restarts with the complexity-gated curriculum.
///
/// The first `warmup_epochs` record the complexity of every curriculum stage
/// per batch; stage i's threshold is then the i-th configured quantile of its
/// own samples (the last quantile is reused past the end of the list). From
/// then on each batch scores the active stage and calls advance. DGM blocks
/// and fusion scores of stages not yet reached stay frozen.
inline TrainResult train(const RunConfig& config, const Dataset& data) {
  config.validate();
  if (data.size() == 0) throw DataError("train: empty dataset");
  if (config.task == Task::classification) {
    if (data.labels.size() != data.size()) throw DataError("train: missing labels");
    for (int y : data.labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= config.model.classes) throw DataError("train: label out of range");
    }
  } else if (data.targets.size() != data.size()) {
    throw DataError("train: missing regression targets");
  }
  detail::check_images(data, config.model);

  TrainResult res{net::build_model<float>(config.model, config.seed), {}, {}, false};
  auto& model = res.model;
  auto params = model.parameters();
  auto opt = ad::OptimState::for_params(params, config.optim);
  const auto stages = config.model.curriculum_stages();

  std::vector<std::vector<std::size_t>> stage_params;
  for (const auto& s : stages) stage_params.push_back(model.dgm_param_indices(s));
  const std::size_t score_index = model.indices_with_prefix("fusion.scores").at(0);

  std::size_t reached = 1;  // stages 1..reached are trainable
  std::vector<bool> frozen(params.size(), false);
  auto refresh_frozen = [&] {
    for (std::size_t s = 0; s < stages.size(); ++s)
      for (std::size_t i : stage_params[s]) frozen[i] = s >= reached;
  };
  refresh_frozen();

  std::vector<std::vector<double>> warmup_samples(stages.size());
  std::mt19937_64 shuffle_rng(config.seed ^ 0x5bd1e995ULL);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  ad::NamedTensors<float> last_good = model.checkpoint_tensors();
  for (auto& [n, t] : last_good) t = t.clone();
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = ad::cosine_lr(epoch, config.optim.lr, config.min_lr, config.period);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0, lambda_sum = 0.0;
    std::size_t lambda_n = 0, advanced = 0;

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t len = std::min(config.batch_size, order.size() - start);
      const std::span<const std::size_t> idx(order.data() + start, len);
      const auto fwd = model.forward(detail::make_batch(data, idx));
      auto loss = detail::batch_loss(fwd.logits, data, idx, config.task);
      const double lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv)) {
        model.load_parameters(last_good);
        throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                  std::to_string(step),
                              model, res.history);
      }
      for (std::size_t i = 0; i < last_good.size(); ++i) {
        const auto src = params[i].data();
        std::copy(src.begin(), src.end(), last_good[i].second.data().begin());
      }
      loss_sum += lv * static_cast<double>(len);

      model.zero_grad();
      loss.backward();

      if (!res.curriculum_started) {
        for (std::size_t s = 0; s < stages.size(); ++s)
          warmup_samples[s].push_back(curriculum::complexity(fwd.stage_features.at(stages[s])));
        lambda_sum += warmup_samples[0].back();
        ++lambda_n;
      } else {
        const auto& active = res.curriculum.active_stage();
        const double lam = curriculum::complexity(fwd.stage_features.at(active));
        lambda_sum += lam;
        ++lambda_n;
        const std::size_t before = res.curriculum.stage_index();
        res.curriculum.advance({lam, active, step});
        if (res.curriculum.stage_index() != before) {
          ++advanced;
          reached = res.curriculum.stage_index();
          refresh_frozen();
        }
      }

      auto score_grad = params[score_index].grad_buffer();
      for (std::size_t s = reached; s < score_grad.size(); ++s) score_grad[s] = 0.0f;
      try {
        ad::adamw_step(params, opt, lr, frozen);
      } catch (const NumericError& e) {
        model.load_parameters(last_good);
        throw DivergenceError("train: " + std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", step " +
                                  std::to_string(step),
                              model, res.history);
      }
      ++step;
    }

    if (!res.curriculum_started && epoch + 1 >= config.warmup_epochs) {
      std::vector<double> taus;
      for (std::size_t s = 0; s < stages.size(); ++s) {
        const double q = config.quantiles[std::min(s, config.quantiles.size() - 1)];
        taus.push_back(curriculum::calibrate_thresholds(warmup_samples[s], std::span<const double>(&q, 1)).at(0));
      }
      res.curriculum = curriculum::CurriculumState(stages, taus);
      res.curriculum_started = true;
    }

    res.history.push_back({epoch, loss_sum / static_cast<double>(data.size()), lr, reached,
                           lambda_n ? lambda_sum / static_cast<double>(lambda_n) : 0.0, advanced});
  }
  return res;
}

struct Predictions {
  std::vector<int> labels;
  std::vector<double> scores;  // row-major [N, classes], softmax of logits
  std::size_t classes = 0;
};

inline std::vector<double> softmax_row(std::span<const float> logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (float v : logits) mx = std::max(mx, static_cast<double>(v));
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += p[i] = std::exp(static_cast<double>(logits[i]) - mx);
  for (auto& v : p) v /= z;
  return p;
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline Predictions predict(const net::Model<float>& model, const Dataset& data, std::size_t batch = 32) {
  if (data.size() == 0) throw DataError("predict: empty dataset");
  detail::check_images(data, model.spec());
  Predictions out;
  out.classes = model.spec().classes;
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t start = 0; start < idx.size(); start += batch) {
    const std::size_t len = std::min(batch, idx.size() - start);
    const auto fwd = model.forward(detail::make_batch(data, std::span<const std::size_t>(idx.data() + start, len)));
    const auto logits = fwd.logits.data();
    for (std::size_t n = 0; n < len; ++n) {
      const auto p = softmax_row(logits.subspan(n * out.classes, out.classes));
      out.labels.push_back(static_cast<int>(argmax(p)));
      if (out.classes == 1) {
        out.scores.push_back(static_cast<double>(logits[n]));  // regression: raw output
      } else {
        out.scores.insert(out.scores.end(), p.begin(), p.end());
      }
    }
  }
  return out;
}

inline metrics::MetricsReport evaluate(const net::Model<float>& model, const Dataset& data,
                                       Task task = Task::classification) {
  const auto pred = predict(model, data);
  if (task == Task::regression) {
    if (data.targets.size() != data.size()) throw DataError("evaluate: missing regression targets");
    metrics::MetricsReport r;
    r.mae = metrics::mae(pred.scores, data.targets);
    return r;
  }
  if (data.labels.size() != data.size()) throw DataError("evaluate: missing labels");
  return metrics::multiclass_report(pred.labels, data.labels, pred.scores, pred.classes);
}

struct SubjectPrediction {
  int label = 0;
  std::vector<double> scores;
};

/// normalize -> encode -> forward -> argmax over softmax scores.
inline SubjectPrediction predict_subject(const Volume& volume, const net::Model<float>& model, PoolingMethod method,
                                         std::uint64_t seed = 0) {
  Dataset d;
  d.images.push_back(encode_subject(volume, method, seed));
  const auto p = predict(model, d);
  return {p.labels.at(0), p.scores};
}

/// Fold-averaged metrics of one cross-validated run.
struct CvResult {
  std::vector<metrics::MetricsReport> folds;
  std::vector<std::vector<HistoryRow>> histories;
  std::vector<curriculum::CurriculumState> curricula;
  std::vector<net::Model<float>> models;
  std::map<std::string, double> mean;  // acc, auc, f1, pre, rec, ap (and mae)
};

inline std::map<std::string, double> average_reports(std::span<const metrics::MetricsReport> reports) {
  std::map<std::string, double> m;
  std::map<std::string, std::size_t> n;
  auto put = [&](const std::string& k, std::optional<double> v) {
    if (!v) return;
    m[k] += *v;
    ++n[k];
  };
  for (const auto& r : reports) {
    if (r.mae) {
      put("mae", r.mae);
      continue;
    }
    put("acc", r.acc);
    put("pre", r.pre);
    put("rec", r.rec);
    put("f1", r.f1);
    put("auc", r.auc);
    put("ap", r.ap);
  }
  for (auto& [k, v] : m) v /= static_cast<double>(n[k]);
  return m;
}

/// k-fold cross-validation on an already encoded dataset; the fold plan uses
/// the run seed.
inline CvResult cross_validate(const RunConfig& config, const Dataset& data, bool keep_models = false) {
  const auto plan = kfold_split(data.size(), config.folds, config.seed);
  CvResult cv;
  for (std::size_t f = 0; f < plan.k; ++f) {
    auto tr = train(config, data.subset(plan.train[f]));
    cv.folds.push_back(evaluate(tr.model, data.subset(plan.test[f]), config.task));
    cv.histories.push_back(std::move(tr.history));
    cv.curricula.push_back(std::move(tr.curriculum));
    if (keep_models) cv.models.push_back(std::move(tr.model));
  }
  cv.mean = average_reports(cv.folds);
  return cv;
}

struct ComparisonRow {
  PoolingMethod method = PoolingMethod::arp;
  std::map<std::string, double> metrics;  // averaged over seeds and folds
  std::vector<double> seed_acc;
};

inline const std::vector<std::string>& comparison_columns() {
  static const std::vector<std::string> cols = {"acc", "auc", "f1", "pre", "rec", "ap"};
  return cols;
}

/// Trains one cross-validated model per pooling method on identical folds and
/// seeds. Each seed regenerates the synthetic data (spec.seed + s) and reseeds
/// training (config.seed + s).
inline std::vector<ComparisonRow> pooling_comparison(const synth::SynthSpec& spec, const RunConfig& config,
                                                     std::size_t seeds = 3,
                                                     std::span<const PoolingMethod> methods = kAllPoolingMethods) {
  std::vector<ComparisonRow> rows;
  for (auto m : methods) rows.push_back({m, {}, {}});
  for (std::size_t s = 0; s < seeds; ++s) {
    auto sp = spec;
    sp.seed = spec.seed + s;
    const auto vols = synth_volumes(sp);
    auto cfg = config;
    cfg.seed = config.seed + s;
    for (auto& row : rows) {
      cfg.encoding = row.method;
      const auto data = encode_dataset(vols.volumes, vols.labels, row.method, cfg.seed);
      const auto cv = cross_validate(cfg, data);
      for (const auto& [k, v] : cv.mean) row.metrics[k] += v / static_cast<double>(seeds);
      row.seed_acc.push_back(cv.mean.at("acc"));
    }
  }
  return rows;
}

inline std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << "method";
  for (const auto& c : comparison_columns()) os << ',' << c;
  os << '\n';
  for (const auto& r : rows) {
    os << to_string(r.method);
    for (const auto& c : comparison_columns()) {
      const auto it = r.metrics.find(c);
      os << ',' << (it == r.metrics.end() ? 0.0 : it->second);
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace dase::train
