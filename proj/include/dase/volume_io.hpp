#pragma once

// File formats for volumes and planar images.
//
// DASE volume: "DASE" | u8 version (=1) | u32 T | u32 H | u32 W | T*H*W f32,
// all little-endian, t-major then row-major within a slice.
// PGM stack: directory of binary P5 files (8- or 16-bit), sorted by file name.
// PFM: portable float map, little-endian (negative scale), rows bottom to top.

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dase/error.hpp"
#include "dase/volume.hpp"

namespace dase {

inline constexpr std::array<char, 4> kDaseMagic = {'D', 'A', 'S', 'E'};
inline constexpr std::uint8_t kDaseVersion = 1;
inline constexpr std::size_t kDaseHeaderBytes = 17;

namespace detail {

inline std::uint32_t read_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void write_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline float read_f32_le(const unsigned char* p) {
  return std::bit_cast<float>(read_u32_le(p));
}

inline void write_f32_le(std::string& out, float v) { write_u32_le(out, std::bit_cast<std::uint32_t>(v)); }

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw WriteError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw WriteError("write failed: " + path.string());
}

// Reads the next whitespace-delimited header token of a netpbm-style file,
// skipping '#' comments. Advances pos past the token.
inline std::string next_token(const std::string& bytes, std::size_t& pos) {
  for (;;) {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (pos < bytes.size() && bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  return bytes.substr(start, pos - start);
}

inline std::size_t parse_size(const std::string& tok, const std::string& what) {
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw FormatError("bad " + what + " field '" + tok + "'");
  }
  return static_cast<std::size_t>(std::stoull(tok));
}

}  // namespace detail

inline std::string encode_dase(const Volume& v) {
  std::string out;
  out.reserve(kDaseHeaderBytes + 4 * v.voxels().size());
  out.append(kDaseMagic.data(), kDaseMagic.size());
  out.push_back(static_cast<char>(kDaseVersion));
  detail::write_u32_le(out, static_cast<std::uint32_t>(v.t_len()));
  detail::write_u32_le(out, static_cast<std::uint32_t>(v.height()));
  detail::write_u32_le(out, static_cast<std::uint32_t>(v.width()));
  for (float x : v.voxels()) detail::write_f32_le(out, x);
  return out;
}

inline Volume decode_dase(const std::string& bytes) {
  if (bytes.size() < kDaseHeaderBytes) throw FormatError("DASE: truncated header");
  if (!std::equal(kDaseMagic.begin(), kDaseMagic.end(), bytes.begin())) throw FormatError("DASE: bad magic");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (p[4] != kDaseVersion) throw FormatError("DASE: unsupported version " + std::to_string(p[4]));
  const std::uint64_t t = detail::read_u32_le(p + 5);
  const std::uint64_t h = detail::read_u32_le(p + 9);
  const std::uint64_t w = detail::read_u32_le(p + 13);
  if (t == 0 || h == 0 || w == 0) throw CorruptError("DASE: zero dimension");
  const std::uint64_t count = t * h * w;
  const std::uint64_t payload = bytes.size() - kDaseHeaderBytes;
  if (payload != count * 4) {
    throw CorruptError("DASE: header requires " + std::to_string(count) + " floats, payload holds " +
                       std::to_string(payload / 4) + (payload % 4 ? " plus partial bytes" : ""));
  }
  std::vector<float> vox(count);
  for (std::uint64_t i = 0; i < count; ++i) vox[i] = detail::read_f32_le(p + kDaseHeaderBytes + 4 * i);
  return Volume(t, h, w, std::move(vox));
}

inline void save_volume(const Volume& v, const std::filesystem::path& path) {
  detail::write_file(path, encode_dase(v));
}

/// Single P5 image, returned as raw sample values (not rescaled).
inline PlanarImage read_pgm(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  std::size_t pos = 0;
  if (detail::next_token(bytes, pos) != "P5") throw FormatError("PGM: " + path.string() + " is not binary P5");
  const std::size_t w = detail::parse_size(detail::next_token(bytes, pos), "width");
  const std::size_t h = detail::parse_size(detail::next_token(bytes, pos), "height");
  const std::size_t maxval = detail::parse_size(detail::next_token(bytes, pos), "maxval");
  if (maxval == 0 || maxval > 65535) throw FormatError("PGM: maxval out of range");
  ++pos;  // single whitespace after maxval
  const std::size_t bps = maxval < 256 ? 1 : 2;
  if (bytes.size() < pos + w * h * bps) throw CorruptError("PGM: truncated payload in " + path.string());
  std::vector<float> vals(w * h);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + pos;
  for (std::size_t i = 0; i < w * h; ++i) {
    vals[i] = bps == 1 ? static_cast<float>(p[i]) : static_cast<float>((p[2 * i] << 8) | p[2 * i + 1]);
  }
  return PlanarImage(h, w, 1, std::move(vals));
}

/// Writes a P5 PGM; values are rounded and clamped to [0, maxval].
inline void write_pgm(const PlanarImage& img, const std::filesystem::path& path, unsigned maxval = 255) {
  std::ostringstream hdr;
  hdr << "P5\n" << img.width() << ' ' << img.height() << '\n' << maxval << '\n';
  std::string out = hdr.str();
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    const double v = std::clamp(std::round(static_cast<double>(img.values()[i])), 0.0, static_cast<double>(maxval));
    const auto u = static_cast<unsigned>(v);
    if (maxval < 256) {
      out.push_back(static_cast<char>(u));
    } else {
      out.push_back(static_cast<char>(u >> 8));
      out.push_back(static_cast<char>(u & 0xffu));
    }
  }
  detail::write_file(path, out);
}

inline Volume load_pgm_stack(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
  }
  if (files.empty()) throw FormatError("PGM stack: no .pgm files in " + dir.string());
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
  std::vector<PlanarImage> imgs;
  imgs.reserve(files.size());
  for (const auto& f : files) {
    imgs.push_back(read_pgm(f));
    if (!imgs.back().same_dims(imgs.front())) {
      throw ShapeError("PGM stack: " + f.filename().string() + " has different dimensions");
    }
  }
  return assemble(imgs);
}

/// Loads a DASE file or a directory of PGM slices.
inline Volume load_volume(const std::filesystem::path& path) {
  if (std::filesystem::is_directory(path)) return load_pgm_stack(path);
  return decode_dase(detail::read_file(path));
}

inline void write_pfm(const PlanarImage& img, const std::filesystem::path& path) {
  if (img.channels() != 1 && img.channels() != 3) throw ShapeError("PFM: only 1 or 3 channels");
  std::ostringstream hdr;
  hdr << (img.channels() == 1 ? "Pf" : "PF") << '\n' << img.width() << ' ' << img.height() << "\n-1.0\n";
  std::string out = hdr.str();
  for (std::size_t row = img.height(); row-- > 0;) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      for (std::size_t c = 0; c < img.channels(); ++c) detail::write_f32_le(out, img.at(c, row, x));
    }
  }
  detail::write_file(path, out);
}

inline PlanarImage read_pfm(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  std::size_t pos = 0;
  const std::string magic = detail::next_token(bytes, pos);
  if (magic != "Pf" && magic != "PF") throw FormatError("PFM: bad magic in " + path.string());
  const std::size_t channels = magic == "Pf" ? 1 : 3;
  const std::size_t w = detail::parse_size(detail::next_token(bytes, pos), "width");
  const std::size_t h = detail::parse_size(detail::next_token(bytes, pos), "height");
  const double scale = std::stod(detail::next_token(bytes, pos));
  if (scale >= 0) throw FormatError("PFM: big-endian maps are not supported");
  ++pos;
  if (bytes.size() < pos + 4 * w * h * channels) throw CorruptError("PFM: truncated payload");
  PlanarImage img(h, w, channels);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + pos;
  std::size_t i = 0;
  for (std::size_t row = h; row-- > 0;) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < channels; ++c, ++i) img.at(c, row, x) = detail::read_f32_le(p + 4 * i);
    }
  }
  return img;
}

/// {bins, range, correlation} report for a histogram comparison.
inline nlohmann::json histogram_report(std::span<const float> a, std::span<const float> b,
                                       const HistogramSpec& spec = {}) {
  return nlohmann::json{{"bins", spec.bins},
                        {"range", {spec.range_lo, spec.range_hi}},
                        {"correlation", histogram_correlation(a, b, spec)}};
}

}  // namespace dase
