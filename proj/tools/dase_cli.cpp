// dase: command-line front end for encoding, synthetic data, training,
// evaluation, prediction, gradient checks and file inspection.
//
// Exit codes: 0 ok, 1 internal, 2 usage, 3 data, 4 numeric/divergence.

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dase/arp.hpp"
#include "dase/autodiff/checkpoint.hpp"
#include "dase/autodiff/gradcheck_suite.hpp"
#include "dase/error.hpp"
#include "dase/run_io.hpp"
#include "dase/synth.hpp"
#include "dase/train.hpp"
#include "dase/volume_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace dase;

namespace {

constexpr int kExitInternal = 1;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::string hex(const unsigned char* p, std::size_t n) {
  std::ostringstream os;
  for (std::size_t i = 0; i < n; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(p[i]);
  return os.str();
}

std::string sha1(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha1(), nullptr) != 1) {
    throw Error("sha1: digest failed");
  }
  return hex(md, len);
}

// git blob hash for files; directories hash a sorted "name<TAB>hash" listing.
std::string content_hash(const fs::path& p) {
  if (fs::is_directory(p)) {
    std::vector<std::string> entries;
    for (const auto& e : fs::recursive_directory_iterator(p)) {
      if (e.is_regular_file()) {
        entries.push_back(fs::relative(e.path(), p).generic_string() + "\t" + content_hash(e.path()));
      }
    }
    std::sort(entries.begin(), entries.end());
    std::string listing;
    for (const auto& e : entries) listing += e + "\n";
    return sha1("tree " + std::to_string(listing.size()) + std::string(1, '\0') + listing);
  }
  const std::string bytes = dase::detail::read_file(p);
  return sha1("blob " + std::to_string(bytes.size()) + std::string(1, '\0') + bytes);
}

struct Manifest {
  json body = json::object();

  Manifest(const std::string& command, json args) {
    body["tool"] = "dase";
    body["command"] = command;
    body["arguments"] = std::move(args);
    body["inputs"] = json::array();
    body["outputs"] = json::array();
  }
  void input(const fs::path& p) { body["inputs"].push_back({{"path", p.string()}, {"sha1", content_hash(p)}}); }
  void output(const fs::path& p) { body["outputs"].push_back(p.filename().string()); }
  void write(const fs::path& dir) const {
    fs::create_directories(dir);
    dase::detail::write_file(dir / "manifest.json", body.dump(2) + "\n");
  }
};

void write_text(const fs::path& p, const std::string& s) { dase::detail::write_file(p, s); }

json report_json(const metrics::MetricsReport& r) { return metrics::to_json(r); }

// ---- encode ---------------------------------------------------------------

int cmd_encode(const fs::path& input, const std::string& method_name, std::optional<std::uint64_t> seed,
               const fs::path& out) {
  const auto method = parse_pooling_method(method_name);
  const auto vol = normalize_volume(load_volume(input));
  const auto img = encode(vol, method, seed);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  const auto sidecar = write_dynamic_image(img, out);
  Manifest m("encode", {{"input", input.string()}, {"method", method_name}, {"out", out.string()}});
  if (seed) m.body["arguments"]["seed"] = *seed;
  m.input(input);
  m.output(out);
  m.output(sidecar);
  m.write(out.has_parent_path() ? out.parent_path() : fs::path("."));
  std::cout << "wrote " << out.string() << " and " << sidecar.string() << "\n";
  return 0;
}

// ---- synth ----------------------------------------------------------------

int cmd_synth(const fs::path& spec_path, const fs::path& out) {
  const auto spec = synth::synth_spec_from_json(ad::read_json(spec_path));
  const auto lv = train::synth_volumes(spec);
  std::vector<std::string> files;
  for (std::size_t i = 0; i < lv.volumes.size(); ++i) {
    std::ostringstream name;
    name << "subject_" << std::setw(4) << std::setfill('0') << i << ".dase";
    files.push_back(name.str());
  }
  io::save_labeled_directory(out, files, lv.volumes, lv.labels);
  Manifest m("synth", {{"spec", spec_path.string()}, {"out", out.string()}});
  m.body["spec"] = synth::to_json(spec);
  m.body["seeds"] = {{"synth", spec.seed}};
  m.input(spec_path);
  m.output("labels.csv");
  m.body["subjects"] = lv.volumes.size();
  m.write(out);
  std::cout << "wrote " << lv.volumes.size() << " volumes to " << out.string() << "\n";
  return 0;
}

// ---- train ----------------------------------------------------------------

struct LoadedData {
  train::Dataset dataset;
  std::vector<Volume> volumes;
};

LoadedData load_training_data(const train::RunConfig& cfg, Manifest& m) {
  LoadedData out;
  if (cfg.data) {
    const auto dir = io::load_labeled_directory(*cfg.data);
    m.input(*cfg.data);
    out.dataset = io::encode_directory(dir, cfg.encoding, cfg.seed);
    out.volumes = dir.volumes;
  } else {
    const auto spec = cfg.synth.value_or(synth::SynthSpec{});
    const auto lv = train::synth_volumes(spec);
    m.body["seeds"]["synth"] = spec.seed;
    out.dataset = train::encode_dataset(lv.volumes, lv.labels, cfg.encoding, cfg.seed);
    out.volumes = lv.volumes;
  }
  return out;
}

int cmd_train(const fs::path& config_path, const fs::path& out) {
  const auto cfg = train::run_config_from_json(ad::read_json(config_path));
  Manifest m("train", {{"config", config_path.string()}, {"out", out.string()}});
  m.body["config"] = train::to_json(cfg);
  m.body["seeds"] = {{"run", cfg.seed}};
  m.input(config_path);
  const auto data = load_training_data(cfg, m);
  fs::create_directories(out);

  const auto plan = train::kfold_split(data.dataset.size(), cfg.folds, cfg.seed);
  json folds = json::array();
  json thresholds = json::array();
  std::vector<metrics::MetricsReport> reports;
  auto run_one = [&](const train::Dataset& ds, const std::string& tag) {
    try {
      return train::train(cfg, ds);
    } catch (const train::DivergenceError& e) {
      const auto ckpt = out / (tag + "_last_good.json");
      io::save_model(e.last_good(), ckpt, cfg.encoding, cfg.seed, cfg.task);
      write_text(out / (tag + "_history.csv"), train::history_csv(e.history()));
      m.output(ckpt);
      m.body["diverged"] = tag;
      m.write(out);
      throw;
    }
  };
  for (std::size_t f = 0; f < plan.k; ++f) {
    const std::string tag = "fold" + std::to_string(f);
    auto res = run_one(data.dataset.subset(plan.train[f]), tag);
    const auto rep = train::evaluate(res.model, data.dataset.subset(plan.test[f]), cfg.task);
    reports.push_back(rep);
    io::save_model(res.model, out / (tag + ".json"), cfg.encoding, cfg.seed, cfg.task);
    write_text(out / (tag + "_history.csv"), train::history_csv(res.history));
    write_text(out / (tag + "_curriculum.csv"), res.curriculum.trace_csv());
    for (const auto& name : {".json", ".bin", "_history.csv", "_curriculum.csv"}) m.output(tag + name);
    folds.push_back({{"fold", f}, {"test", plan.test[f]}, {"metrics", report_json(rep)}});
    thresholds.push_back(res.curriculum_started ? json(res.curriculum.thresholds()) : json::array());
    std::cout << tag << ": acc " << rep.acc << "\n";
  }
  auto final_run = run_one(data.dataset, "model");
  io::save_model(final_run.model, out / "model.json", cfg.encoding, cfg.seed, cfg.task);
  write_text(out / "history.csv", train::history_csv(final_run.history));
  write_text(out / "curriculum.csv", final_run.curriculum.trace_csv());
  for (const auto& name : {"model.json", "model.bin", "history.csv", "curriculum.csv"}) m.output(name);

  json metrics = {{"folds", folds}, {"mean", train::average_reports(reports)}};
  write_text(out / "metrics.json", metrics.dump(2) + "\n");
  m.output("metrics.json");
  m.body["thresholds"] = {{"folds", thresholds},
                          {"model", final_run.curriculum_started ? json(final_run.curriculum.thresholds())
                                                                 : json::array()}};
  m.write(out);
  const auto mean = train::average_reports(reports);
  if (mean.contains("acc")) std::cout << "mean acc " << mean.at("acc") << "\n";
  if (mean.contains("mae")) std::cout << "mean mae " << mean.at("mae") << "\n";
  return 0;
}

// ---- eval / predict ---------------------------------------------------------

int cmd_eval(const fs::path& model_path, const fs::path& data_dir, const fs::path& out) {
  const auto saved = io::load_model(model_path);
  const auto dir = io::load_labeled_directory(data_dir);
  const auto ds = io::encode_directory(dir, saved.encoding, saved.seed);
  const auto rep = train::evaluate(saved.model, ds, saved.task);
  fs::create_directories(out);
  write_text(out / "metrics.json", report_json(rep).dump(2) + "\n");
  Manifest m("eval", {{"model", model_path.string()}, {"data", data_dir.string()}, {"out", out.string()}});
  m.input(model_path);
  m.input(data_dir);
  m.output("metrics.json");
  m.write(out);
  std::cout << report_json(rep).dump() << "\n";
  return 0;
}

int cmd_predict(const fs::path& model_path, const fs::path& volume_path, std::uint64_t seed,
                const std::optional<fs::path>& out) {
  const auto saved = io::load_model(model_path);
  const auto p = train::predict_subject(load_volume(volume_path), saved.model, saved.encoding, seed);
  const json result = {{"label", p.label}, {"scores", p.scores}};
  std::cout << result.dump() << "\n";
  if (out) {
    Manifest m("predict", {{"model", model_path.string()}, {"volume", volume_path.string()}, {"seed", seed}});
    m.input(model_path);
    m.input(volume_path);
    m.body["result"] = result;
    m.write(*out);
  }
  return 0;
}

// ---- gradcheck ------------------------------------------------------------

int cmd_gradcheck(std::uint64_t seed, const std::optional<fs::path>& out) {
  constexpr double kTolerance = 1e-4;
  const auto results = ad::run_gradcheck_suite(seed);
  bool ok = true;
  json rows = json::array();
  for (const auto& r : results) {
    const bool pass = r.max_rel_error < kTolerance;
    ok = ok && pass;
    std::printf("%-28s %.3e %s\n", r.name.c_str(), r.max_rel_error, pass ? "ok" : "FAIL");
    rows.push_back({{"op", r.name}, {"max_rel_error", r.max_rel_error}, {"pass", pass}});
  }
  if (out) {
    Manifest m("gradcheck", {{"seed", seed}});
    m.body["results"] = rows;
    m.write(*out);
  }
  if (!ok) {
    std::cerr << "numeric error: gradient check above " << kTolerance << "\n";
    return kExitNumeric;
  }
  return 0;
}

// ---- compare --------------------------------------------------------------

int cmd_compare(const fs::path& config_path, const fs::path& out, std::size_t seeds) {
  const auto cfg = train::run_config_from_json(ad::read_json(config_path));
  const auto spec = cfg.synth.value_or(synth::SynthSpec{});
  const auto rows = train::pooling_comparison(spec, cfg, seeds);
  fs::create_directories(out);
  const auto csv = train::comparison_csv(rows);
  write_text(out / "comparison.csv", csv);
  Manifest m("compare", {{"config", config_path.string()}, {"out", out.string()}, {"seeds", seeds}});
  m.body["config"] = train::to_json(cfg);
  m.body["seeds"] = {{"synth_base", spec.seed}, {"run_base", cfg.seed}, {"count", seeds}};
  m.input(config_path);
  m.output("comparison.csv");
  m.write(out);
  std::cout << csv;
  return 0;
}

// ---- inspect --------------------------------------------------------------

json stats(std::span<const float> v) {
  double mn = v.empty() ? 0.0 : v[0], mx = mn, s = 0.0;
  for (float x : v) {
    mn = std::min<double>(mn, x);
    mx = std::max<double>(mx, x);
    s += x;
  }
  return {{"min", mn}, {"max", mx}, {"mean", v.empty() ? 0.0 : s / static_cast<double>(v.size())}};
}

int cmd_inspect(const fs::path& input, const std::optional<fs::path>& reference) {
  json info;
  std::vector<float> values;
  const auto ext = input.extension().string();
  if (fs::is_directory(input)) {
    const auto v = load_pgm_stack(input);
    info = {{"format", "pgm-stack"}, {"T", v.t_len()}, {"H", v.height()}, {"W", v.width()}};
    values.assign(v.voxels().begin(), v.voxels().end());
  } else if (ext == ".pgm") {
    const auto img = read_pgm(input);
    info = {{"format", "pgm"}, {"H", img.height()}, {"W", img.width()}};
    values.assign(img.values().begin(), img.values().end());
  } else if (ext == ".pfm") {
    const auto img = read_pfm(input);
    info = {{"format", "pfm"}, {"H", img.height()}, {"W", img.width()}, {"channels", img.channels()}};
    values.assign(img.values().begin(), img.values().end());
    auto sidecar = input;
    sidecar.replace_extension(".json");
    if (fs::exists(sidecar)) info["sidecar"] = ad::read_json(sidecar);
  } else if (ext == ".json") {
    const auto [manifest, tensors] = ad::load_checkpoint<float>(input);
    std::size_t n = 0;
    for (const auto& [name, t] : tensors) n += t.numel();
    info = {{"format", manifest.value("format", "")}, {"tensors", tensors.size()}, {"parameters", n}};
    if (manifest.contains("model")) info["model"] = manifest.at("model");
  } else {
    const auto v = decode_dase(dase::detail::read_file(input));
    info = {{"format", "dase"},
            {"version", kDaseVersion},
            {"header_bytes", kDaseHeaderBytes},
            {"T", v.t_len()},
            {"H", v.height()},
            {"W", v.width()}};
    values.assign(v.voxels().begin(), v.voxels().end());
  }
  if (!values.empty()) info["stats"] = stats(values);
  if (reference) {
    const auto ref = load_volume(*reference);
    info["histogram"] = histogram_report(values, ref.voxels());
  }
  std::cout << info.dump(2) << "\n";
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"dase: order-aware volume encoding and curriculum training"};
  app.require_subcommand(1);

  auto* enc = app.add_subcommand("encode", "Encode a volume into a dynamic image (PFM + JSON sidecar)");
  fs::path enc_in, enc_out;
  std::string enc_method = "arp";
  std::optional<std::uint64_t> enc_seed;
  enc->add_option("--input", enc_in, "DASE file or PGM slice directory")->required();
  enc->add_option("--method", enc_method, "arp|max|mean|gap|stochastic|spp")->required();
  enc->add_option("--seed", enc_seed, "Seed for stochastic pooling");
  enc->add_option("--out", enc_out, "Output PFM path")->required();

  auto* syn = app.add_subcommand("synth", "Generate a labelled synthetic dataset");
  fs::path syn_spec, syn_out;
  syn->add_option("--spec", syn_spec, "SynthSpec JSON")->required();
  syn->add_option("--out", syn_out, "Output directory")->required();

  auto* trn = app.add_subcommand("train", "Cross-validate and train a model");
  fs::path trn_cfg, trn_out;
  trn->add_option("--config", trn_cfg, "Run config JSON")->required();
  trn->add_option("--out", trn_out, "Output directory")->required();

  auto* evl = app.add_subcommand("eval", "Evaluate a trained model on a labelled directory");
  fs::path evl_model, evl_data, evl_out;
  evl->add_option("--model", evl_model, "Model checkpoint manifest")->required();
  evl->add_option("--data", evl_data, "Labelled directory")->required();
  evl->add_option("--out", evl_out, "Output directory")->required();

  auto* prd = app.add_subcommand("predict", "Predict the class of one volume");
  fs::path prd_model, prd_vol;
  std::uint64_t prd_seed = 0;
  std::optional<fs::path> prd_out;
  prd->add_option("--model", prd_model, "Model checkpoint manifest")->required();
  prd->add_option("--volume", prd_vol, "DASE file or PGM slice directory")->required();
  prd->add_option("--seed", prd_seed, "Seed for stochastic pooling");
  prd->add_option("--out", prd_out, "Directory for a manifest");

  auto* gck = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  std::uint64_t gck_seed = 0;
  std::optional<fs::path> gck_out;
  gck->add_option("--seed", gck_seed, "Random seed");
  gck->add_option("--out", gck_out, "Directory for a manifest");

  auto* ins = app.add_subcommand("inspect", "Print header, shape and statistics of a file");
  fs::path ins_in;
  std::optional<fs::path> ins_ref;
  ins->add_option("--input", ins_in, "DASE, PGM, PFM, PGM directory or checkpoint")->required();
  ins->add_option("--reference", ins_ref, "Volume for a histogram-correlation report");

  auto* cmp = app.add_subcommand("compare", "Pooling comparison on synthetic data");
  fs::path cmp_cfg, cmp_out;
  std::size_t cmp_seeds = 3;
  cmp->add_option("--config", cmp_cfg, "Run config JSON")->required();
  cmp->add_option("--out", cmp_out, "Output directory")->required();
  cmp->add_option("--seeds", cmp_seeds, "Number of seeds")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  if (*enc) return cmd_encode(enc_in, enc_method, enc_seed, enc_out);
  if (*syn) return cmd_synth(syn_spec, syn_out);
  if (*trn) return cmd_train(trn_cfg, trn_out);
  if (*evl) return cmd_eval(evl_model, evl_data, evl_out);
  if (*prd) return cmd_predict(prd_model, prd_vol, prd_seed, prd_out);
  if (*gck) return cmd_gradcheck(gck_seed, gck_out);
  if (*ins) return cmd_inspect(ins_in, ins_ref);
  if (*cmp) return cmd_compare(cmp_cfg, cmp_out, cmp_seeds);
  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}
