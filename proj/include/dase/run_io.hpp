#pragma once

// On-disk layouts used by the command-line tools: labelled volume directories
// and trained-model checkpoints.
//
// A labelled directory holds one volume per subject (.dase file or PGM slice
// directory) plus labels.csv with a "file,label[,target]" header.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dase/arp.hpp"
#include "dase/autodiff/checkpoint.hpp"
#include "dase/error.hpp"
#include "dase/network/model.hpp"
#include "dase/train.hpp"
#include "dase/volume_io.hpp"

namespace dase::io {

struct LabeledDirectory {
  std::vector<std::string> files;
  std::vector<Volume> volumes;
  std::vector<int> labels;
  std::vector<double> targets;  // empty unless a target column exists
};

inline LabeledDirectory load_labeled_directory(const std::filesystem::path& dir) {
  const auto csv_path = dir / "labels.csv";
  if (!std::filesystem::exists(csv_path)) throw DataError("dataset: missing " + csv_path.string());
  std::istringstream in(detail::read_file(csv_path));
  std::string line;
  if (!std::getline(in, line)) throw FormatError("dataset: empty labels.csv");
  const bool has_target = line.find(",target") != std::string::npos;
  if (line.rfind("file,label", 0) != 0) throw FormatError("dataset: labels.csv header must start with file,label");
  LabeledDirectory out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    if (cols.size() < (has_target ? 3u : 2u)) {
      throw FormatError("dataset: labels.csv line " + std::to_string(lineno) + " has too few columns");
    }
    try {
      out.labels.push_back(std::stoi(cols[1]));
      if (has_target) out.targets.push_back(std::stod(cols[2]));
    } catch (const std::exception&) {
      throw FormatError("dataset: labels.csv line " + std::to_string(lineno) + " is not numeric");
    }
    out.files.push_back(cols[0]);
    out.volumes.push_back(load_volume(dir / cols[0]));
  }
  if (out.volumes.empty()) throw DataError("dataset: labels.csv lists no subjects");
  return out;
}

inline void save_labeled_directory(const std::filesystem::path& dir, const std::vector<std::string>& files,
                                   const std::vector<Volume>& volumes, const std::vector<int>& labels) {
  std::filesystem::create_directories(dir);
  std::ostringstream csv;
  csv << "file,label\n";
  for (std::size_t i = 0; i < volumes.size(); ++i) {
    save_volume(volumes[i], dir / files[i]);
    csv << files[i] << ',' << labels[i] << '\n';
  }
  detail::write_file(dir / "labels.csv", csv.str());
}

/// Dataset ready for training: encoded with the run's method and seed.
inline train::Dataset encode_directory(const LabeledDirectory& d, PoolingMethod method, std::uint64_t run_seed) {
  auto ds = train::encode_dataset(d.volumes, d.labels, method, run_seed);
  ds.targets = d.targets;
  return ds;
}

struct SavedModel {
  net::Model<float> model;
  PoolingMethod encoding = PoolingMethod::arp;
  std::uint64_t seed = 0;
  train::Task task = train::Task::classification;
};

inline void save_model(const net::Model<float>& model, const std::filesystem::path& manifest_path,
                       PoolingMethod encoding, std::uint64_t seed, train::Task task) {
  const nlohmann::json extra = {{"model", net::to_json(model.spec())},
                                {"encoding", std::string(to_string(encoding))},
                                {"seed", seed},
                                {"task", train::to_string(task)}};
  ad::save_checkpoint(model.checkpoint_tensors(), manifest_path, extra);
}

inline SavedModel load_model(const std::filesystem::path& manifest_path) {
  try {
    auto [manifest, tensors] = ad::load_checkpoint<float>(manifest_path);
    if (!manifest.contains("model")) throw FormatError("model: checkpoint has no model spec");
    SavedModel out{net::build_model<float>(net::model_spec_from_json(manifest.at("model")), 0),
                   parse_pooling_method(manifest.value("encoding", std::string("arp"))),
                   manifest.value("seed", std::uint64_t{0}),
                   train::parse_task(manifest.value("task", std::string("classification")))};
    out.model.load_parameters(tensors);
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
}

}  // namespace dase::io
