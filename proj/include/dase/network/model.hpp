#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dase/autodiff/checkpoint.hpp"
#include "dase/autodiff/conv.hpp"
#include "dase/autodiff/ops.hpp"
#include "dase/autodiff/tensor.hpp"
#include "dase/curriculum.hpp"
#include "dase/error.hpp"
#include "dase/network/dgm.hpp"

namespace dase::net {

enum class BlockKind { bottleneck1, bottleneck2, pointwise };

inline std::string to_string(BlockKind k) {
  switch (k) {
    case BlockKind::bottleneck1: return "bottleneck1";
    case BlockKind::bottleneck2: return "bottleneck2";
    case BlockKind::pointwise: return "pointwise";
  }
  return "?";
}

inline BlockKind parse_block_kind(const std::string& s) {
  if (s == "bottleneck1") return BlockKind::bottleneck1;
  if (s == "bottleneck2") return BlockKind::bottleneck2;
  if (s == "pointwise") return BlockKind::pointwise;
  throw ConfigError("unknown block kind '" + s + "'");
}

struct StageSpec {
  std::string name;
  BlockKind block = BlockKind::bottleneck1;
  std::size_t channels = 16;  // output channels
  std::size_t stride = 1;
  bool dgm_enabled = false;
};

struct ModelSpec {
  std::size_t input_channels = 1;
  std::size_t input_size = 32;
  std::size_t stem_channels = 16;
  std::size_t stem_stride = 2;
  std::size_t expansion = 4;  // bottleneck hidden width = in_channels * expansion
  std::size_t groups = 4;     // DGM branch groups
  std::size_t reduction = 4;  // DGM channel reduction r
  std::size_t head_width = 128;
  std::size_t classes = 3;
  double input_scale = 0.05;  // fixed gain on the input image
  std::vector<StageSpec> stages;

  /// Stage names carrying a DGM block, in network order; these are the
  /// curriculum stages.
  std::vector<std::string> curriculum_stages() const {
    std::vector<std::string> out;
    for (const auto& s : stages)
      if (s.dgm_enabled) out.push_back(s.name);
    return out;
  }

  void validate() const {
    if (input_channels < 1 || input_size < 1 || stem_channels < 1 || head_width < 1 || classes < 1) {
      throw ConfigError("model: sizes must be positive");
    }
    if (!(input_scale > 0.0) || !std::isfinite(input_scale)) throw ConfigError("model: input_scale must be positive");
    if (stem_stride < 1 || stem_stride > 2) throw ConfigError("model: stem stride must be 1 or 2");
    if (expansion < 1) throw ConfigError("model: expansion must be >= 1");
    if (stages.empty()) throw ConfigError("model: no stages");
    std::set<std::string> names;
    std::size_t size = ad::ConvSpec{input_channels, stem_channels, 3, stem_stride, 1, 1}.output_extent(input_size);
    for (const auto& s : stages) {
      if (s.name.empty() || !names.insert(s.name).second) throw ConfigError("model: stage names must be unique");
      if (s.channels < 1) throw ConfigError("model: stage " + s.name + " has no channels");
      if (s.stride != 1 && s.stride != 2) throw ConfigError("model: stage " + s.name + " stride must be 1 or 2");
      if (s.block == BlockKind::bottleneck1 && s.stride != 1) {
        throw ConfigError("model: bottleneck1 stage " + s.name + " must have stride 1");
      }
      if (s.block == BlockKind::pointwise && s.stride != 1) {
        throw ConfigError("model: pointwise stage " + s.name + " must have stride 1");
      }
      if (s.dgm_enabled) DgmConfig{s.channels, reduction, groups}.validate();
      size = ad::ConvSpec{1, 1, 3, s.stride, 1, 1}.output_extent(size);
    }
    if (curriculum_stages().empty()) throw ConfigError("model: at least one stage needs a DGM block");
  }
};

/// Desk-scale default: stem 3x3/2 (1->16); S1 b1 16 +DGM; S2 b2 16->24; S3 b1 24;
/// S4 b2 24->48 +DGM; S5 b1 48; S6 b2 48->96 +DGM; Conv1 1x1 96->128 +DGM.
inline ModelSpec default_model_spec() {
  ModelSpec m;
  m.stages = {
      {"S1", BlockKind::bottleneck1, 16, 1, true},  {"S2", BlockKind::bottleneck2, 24, 2, false},
      {"S3", BlockKind::bottleneck1, 24, 1, false}, {"S4", BlockKind::bottleneck2, 48, 2, true},
      {"S5", BlockKind::bottleneck1, 48, 1, false}, {"S6", BlockKind::bottleneck2, 96, 2, true},
      {"Conv1", BlockKind::pointwise, 128, 1, true},
  };
  return m;
}

inline nlohmann::json to_json(const ModelSpec& m) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : m.stages) {
    stages.push_back({{"name", s.name},
                      {"block", to_string(s.block)},
                      {"channels", s.channels},
                      {"stride", s.stride},
                      {"dgm", s.dgm_enabled}});
  }
  return {{"input_channels", m.input_channels}, {"input_size", m.input_size}, {"channels", m.stem_channels},
          {"stem_stride", m.stem_stride},       {"expansion", m.expansion},   {"groups", m.groups},
          {"reduction", m.reduction},           {"head_width", m.head_width}, {"classes", m.classes},
          {"input_scale", m.input_scale},       {"stages", stages}};
}

/// Missing keys fall back to the desk-scale defaults; unknown keys are rejected.
inline ModelSpec model_spec_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {"input_channels", "input_size", "channels", "stem_stride",
                                              "expansion",      "groups",     "reduction", "head_width",
                                              "classes",        "input_scale", "stages"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) throw ConfigError("model spec: unknown key '" + it.key() + "'");
  }
  ModelSpec m = default_model_spec();
  try {
    m.input_channels = j.value("input_channels", m.input_channels);
    m.input_size = j.value("input_size", m.input_size);
    m.stem_channels = j.value("channels", m.stem_channels);
    m.stem_stride = j.value("stem_stride", m.stem_stride);
    m.expansion = j.value("expansion", m.expansion);
    m.groups = j.value("groups", m.groups);
    m.reduction = j.value("reduction", m.reduction);
    m.head_width = j.value("head_width", m.head_width);
    m.classes = j.value("classes", m.classes);
    m.input_scale = j.value("input_scale", m.input_scale);
    if (j.contains("stages")) {
      m.stages.clear();
      for (const auto& s : j.at("stages")) {
        StageSpec st;
        st.name = s.at("name").get<std::string>();
        st.block = parse_block_kind(s.value("block", std::string("bottleneck1")));
        st.channels = s.at("channels").get<std::size_t>();
        st.stride = s.value("stride", st.block == BlockKind::bottleneck2 ? std::size_t{2} : std::size_t{1});
        st.dgm_enabled = s.value("dgm", false);
        m.stages.push_back(std::move(st));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model spec: ") + e.what());
  }
  m.validate();
  return m;
}

struct BottleneckSpec {
  BlockKind kind = BlockKind::bottleneck1;
  std::size_t in_channels = 16;
  std::size_t out_channels = 16;
  std::size_t expansion = 4;
  std::size_t stride = 1;

  std::size_t hidden() const { return in_channels * expansion; }
  ad::ConvSpec expand_spec() const { return {in_channels, hidden(), 1, 1, 0, 1}; }
  ad::ConvSpec depthwise_spec() const { return {hidden(), hidden(), 3, stride, 1, hidden()}; }
  ad::ConvSpec project_spec() const { return {hidden(), out_channels, 1, 1, 0, 1}; }
  bool residual() const { return kind == BlockKind::bottleneck1 && in_channels == out_channels; }

  std::size_t weight_count() const {
    return ad::param_count(expand_spec()) + ad::param_count(depthwise_spec()) + ad::param_count(project_spec());
  }
};

template <class T>
struct BottleneckParams {
  Tensor<T> expand_w, expand_b;
  Tensor<T> dw_w, dw_b;
  Tensor<T> project_w, project_b;
};

/// Inverted bottleneck: 1x1 expand + ReLU, 3x3 depthwise + ReLU, 1x1 linear
/// projection. bottleneck1 adds the input back when channel counts match;
/// bottleneck2 is the strided, residual-free variant.
template <class T>
Tensor<T> linear_bottleneck(const Tensor<T>& x, const BottleneckSpec& spec, const BottleneckParams<T>& p) {
  if (spec.kind == BlockKind::pointwise) throw ConfigError("linear_bottleneck: pointwise is not a bottleneck");
  if (spec.kind == BlockKind::bottleneck1 && spec.stride != 1) {
    throw ConfigError("linear_bottleneck: bottleneck1 requires stride 1");
  }
  auto h = ad::relu(ad::conv2d(x, p.expand_w, p.expand_b, spec.expand_spec()));
  h = ad::relu(ad::conv2d(h, p.dw_w, p.dw_b, spec.depthwise_spec()));
  auto y = ad::conv2d(h, p.project_w, p.project_b, spec.project_spec());
  if (spec.residual()) {
    if (y.shape() != x.shape()) throw ConfigError("linear_bottleneck: residual shape mismatch");
    y = ad::add(y, x);
  }
  return y;
}

template <class T>
struct ForwardResult {
  Tensor<T> logits;
  std::map<std::string, Tensor<T>> stage_features;
  std::map<std::string, Tensor<T>> weight_maps;
};

/// One grouped convolution of the model, for parameter audits.
struct ConvAudit {
  std::string name;
  ad::ConvSpec spec;
  std::size_t allocated = 0;
  bool dgm_branch = false;
};

template <class T>
class Model {
 public:
  Model(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    std::mt19937_64 rng(seed);
    add_conv("stem", {spec_.input_channels, spec_.stem_channels, 3, spec_.stem_stride, 1, 1}, rng, false);
    std::size_t in = spec_.stem_channels;
    for (const auto& s : spec_.stages) {
      if (s.block == BlockKind::pointwise) {
        add_conv(s.name + ".conv", {in, s.channels, 1, 1, 0, 1}, rng, false);
      } else {
        const auto b = bottleneck_spec(s, in);
        add_conv(s.name + ".expand", b.expand_spec(), rng, false);
        add_conv(s.name + ".dw", b.depthwise_spec(), rng, false);
        add_conv(s.name + ".project", b.project_spec(), rng, false);
      }
      if (s.dgm_enabled) {
        const DgmConfig cfg = dgm_config(s);
        add_conv(s.name + ".dgm.reduce", cfg.reduce_spec(), rng, true);
        add_conv(s.name + ".dgm.expand", cfg.expand_spec(), rng, true);
        add_conv(s.name + ".dgm.fuse", cfg.fuse_spec(), rng, true);
      }
      in = s.channels;
    }
    for (const auto& s : spec_.stages) {
      if (!s.dgm_enabled) continue;
      add_linear("fusion." + s.name, s.channels, spec_.head_width, rng);
    }
    add_param("fusion.scores", Tensor<T>::zeros({spec_.curriculum_stages().size()}));
    add_linear("head", spec_.head_width, spec_.classes, rng);
  }

  Model(const Model& o) : spec_(o.spec_), audits_(o.audits_) {
    for (const auto& [name, t] : o.params_) add_param(name, t.clone());
  }
  Model& operator=(const Model& o) {
    if (this != &o) {
      Model tmp(o);
      *this = std::move(tmp);
    }
    return *this;
  }
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelSpec& spec() const { return spec_; }
  const ad::NamedTensors<T>& named_parameters() const { return params_; }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    out.reserve(params_.size());
    for (const auto& [name, t] : params_) out.push_back(t);
    return out;
  }

  const Tensor<T>& param(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("model: no parameter '" + name + "'");
    return params_[it->second].second;
  }

  /// Overwrites parameter values from a checkpoint; names and shapes must match.
  void load_parameters(const ad::NamedTensors<T>& values) {
    if (values.size() != params_.size()) throw ShapeError("model: checkpoint tensor count mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (values[i].first != params_[i].first || values[i].second.shape() != params_[i].second.shape()) {
        throw ShapeError("model: checkpoint tensor '" + values[i].first + "' does not match '" + params_[i].first + "'");
      }
      auto dst = params_[i].second.data();
      std::copy(values[i].second.data().begin(), values[i].second.data().end(), dst.begin());
    }
  }

  void zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

  const std::vector<ConvAudit>& conv_audit() const { return audits_; }

  std::size_t total_params() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
  }

  std::size_t dgm_branch_weight_count() const {
    std::size_t n = 0;
    for (const auto& a : audits_)
      if (a.dgm_branch) n += a.allocated;
    return n;
  }

  /// Indices into parameters() of one stage's DGM block.
  std::vector<std::size_t> dgm_param_indices(const std::string& stage) const {
    return indices_with_prefix(stage + ".dgm.");
  }

  std::vector<std::size_t> indices_with_prefix(const std::string& prefix) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i].first.starts_with(prefix)) out.push_back(i);
    return out;
  }

  ForwardResult<T> forward(const Tensor<T>& batch) const {
    if (batch.rank() != 4 || batch.dim(1) != spec_.input_channels || batch.dim(2) != spec_.input_size ||
        batch.dim(3) != spec_.input_size) {
      throw ShapeError("model: batch " + ad::shape_str(batch.shape()) + " does not match input [N," +
                       std::to_string(spec_.input_channels) + "," + std::to_string(spec_.input_size) + "," +
                       std::to_string(spec_.input_size) + "]");
    }
    ForwardResult<T> r;
    std::vector<T> scaled(batch.data().begin(), batch.data().end());
    for (auto& v : scaled) v = static_cast<T>(v * spec_.input_scale);
    auto x = ad::relu(conv("stem", Tensor<T>(batch.shape(), std::move(scaled))));
    std::size_t in = spec_.stem_channels;
    for (const auto& s : spec_.stages) {
      if (s.block == BlockKind::pointwise) {
        x = ad::relu(conv(s.name + ".conv", x));
      } else {
        x = linear_bottleneck(x, bottleneck_spec(s, in), bottleneck_params(s.name));
      }
      if (s.dgm_enabled) {
        auto trace = dgm_forward(x, dgm_config(s), dgm_params(s.name));
        x = trace.output;
        r.weight_maps[s.name] = trace.weight_map;
        r.stage_features[s.name] = x;
      }
      in = s.channels;
    }
    curriculum::FusionWeights<T> fw{spec_.curriculum_stages(), param("fusion.scores")};
    std::map<std::string, curriculum::StageProjection<T>> proj;
    for (const auto& name : fw.stages) proj[name] = {param("fusion." + name + ".w"), param("fusion." + name + ".b")};
    auto fused = curriculum::fuse_stages(r.stage_features, fw, proj);
    r.logits = ad::linear(fused, param("head.w"), param("head.b"));
    return r;
  }

  BottleneckSpec bottleneck_spec(const StageSpec& s, std::size_t in) const {
    return {s.block, in, s.channels, spec_.expansion, s.stride};
  }
  DgmConfig dgm_config(const StageSpec& s) const { return {s.channels, spec_.reduction, spec_.groups}; }

  BottleneckParams<T> bottleneck_params(const std::string& stage) const {
    return {param(stage + ".expand.w"), param(stage + ".expand.b"),  param(stage + ".dw.w"),
            param(stage + ".dw.b"),     param(stage + ".project.w"), param(stage + ".project.b")};
  }

  DgmParams<T> dgm_params(const std::string& stage) const {
    return {param(stage + ".dgm.reduce.w"), param(stage + ".dgm.reduce.b"), param(stage + ".dgm.expand.w"),
            param(stage + ".dgm.expand.b"), param(stage + ".dgm.fuse.w"),   param(stage + ".dgm.fuse.b")};
  }

  ad::NamedTensors<T> checkpoint_tensors() const { return params_; }

 private:
  Tensor<T> conv(const std::string& name, const Tensor<T>& x) const {
    for (const auto& a : audits_) {
      if (a.name == name) return ad::conv2d(x, param(name + ".w"), param(name + ".b"), a.spec);
    }
    throw ConfigError("model: no conv '" + name + "'");
  }

  void add_param(const std::string& name, Tensor<T> t) {
    t.set_requires_grad(true);
    index_[name] = params_.size();
    params_.emplace_back(name, std::move(t));
  }

  // He-uniform: U(-b, b), b = sqrt(6 / fan_in).
  static Tensor<T> he_uniform(ad::Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> v(ad::numel_of(shape));
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return Tensor<T>(std::move(shape), std::move(v));
  }

  void add_conv(const std::string& name, const ad::ConvSpec& cs, std::mt19937_64& rng, bool dgm_branch) {
    cs.validate();
    const auto shape = cs.weight_shape();
    const std::size_t fan_in = shape[1] * shape[2] * shape[3];
    add_param(name + ".w", he_uniform(shape, fan_in, rng));
    add_param(name + ".b", Tensor<T>::zeros({cs.out_channels}));
    audits_.push_back({name, cs, param(name + ".w").numel(), dgm_branch});
  }

  void add_linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
    add_param(name + ".w", he_uniform({in, out}, in, rng));
    add_param(name + ".b", Tensor<T>::zeros({out}));
  }

  ModelSpec spec_;
  ad::NamedTensors<T> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<ConvAudit> audits_;
};

template <class T = float>
Model<T> build_model(const ModelSpec& spec, std::uint64_t seed) {
  return Model<T>(spec, seed);
}

}  // namespace dase::net
