#pragma once

// Checkpoint layout: a JSON manifest listing {name, shape, offset} per tensor
// plus a raw little-endian f32 blob stored next to it. Offsets are in bytes.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dase/autodiff/tensor.hpp"
#include "dase/error.hpp"
#include "dase/volume_io.hpp"

namespace dase::ad {

template <class T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

struct CheckpointFiles {
  nlohmann::json manifest;
  std::string blob;
};

template <class T>
CheckpointFiles encode_checkpoint(const NamedTensors<T>& tensors, const std::string& blob_name) {
  CheckpointFiles out;
  nlohmann::json list = nlohmann::json::array();
  for (const auto& [name, t] : tensors) {
    list.push_back({{"name", name}, {"shape", t.shape()}, {"offset", out.blob.size()}});
    for (T v : t.data()) dase::detail::write_f32_le(out.blob, static_cast<float>(v));
  }
  out.manifest = {{"format", "dase-checkpoint"}, {"version", 1}, {"dtype", "f32le"},
                  {"blob", blob_name},           {"tensors", list}};
  return out;
}

/// Writes <manifest_path> and its blob (same stem, .bin). `extra` keys are
/// merged into the manifest.
template <class T>
void save_checkpoint(const NamedTensors<T>& tensors, const std::filesystem::path& manifest_path,
                     const nlohmann::json& extra = nlohmann::json::object()) {
  auto blob_path = manifest_path;
  blob_path.replace_extension(".bin");
  auto files = encode_checkpoint(tensors, blob_path.filename().string());
  for (auto it = extra.begin(); it != extra.end(); ++it) files.manifest[it.key()] = it.value();
  dase::detail::write_file(blob_path, files.blob);
  dase::detail::write_file(manifest_path, files.manifest.dump(2) + "\n");
}

template <class T>
NamedTensors<T> decode_checkpoint(const nlohmann::json& manifest, const std::string& blob) {
  if (manifest.value("format", "") != "dase-checkpoint") throw FormatError("checkpoint: unknown format");
  NamedTensors<T> out;
  for (const auto& e : manifest.at("tensors")) {
    const auto shape = e.at("shape").get<Shape>();
    const auto offset = e.at("offset").get<std::size_t>();
    const std::size_t n = numel_of(shape);
    if (offset + 4 * n > blob.size()) throw CorruptError("checkpoint: tensor " + e.at("name").get<std::string>() + " overruns blob");
    std::vector<T> data(n);
    const auto* p = reinterpret_cast<const unsigned char*>(blob.data()) + offset;
    for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<T>(dase::detail::read_f32_le(p + 4 * i));
    out.emplace_back(e.at("name").get<std::string>(), Tensor<T>(shape, std::move(data)));
  }
  return out;
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(dase::detail::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

/// Returns the manifest and its tensors.
template <class T>
std::pair<nlohmann::json, NamedTensors<T>> load_checkpoint(const std::filesystem::path& manifest_path) {
  auto manifest = read_json(manifest_path);
  const auto blob_path = manifest_path.parent_path() / manifest.at("blob").get<std::string>();
  auto tensors = decode_checkpoint<T>(manifest, dase::detail::read_file(blob_path));
  return {std::move(manifest), std::move(tensors)};
}

}  // namespace dase::ad
