#include <catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "dase/volume.hpp"
#include "dase/volume_io.hpp"

using namespace dase;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("dase_test_volume_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Volume random_volume(std::size_t T, std::size_t H, std::size_t W, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(-3.0f, 3.0f);
  std::vector<float> v(T * H * W);
  for (auto& x : v) x = d(rng);
  return Volume(T, H, W, std::move(v));
}

std::string dase_header(std::uint32_t T, std::uint32_t H, std::uint32_t W) {
  std::string s = "DASE";
  s.push_back(1);
  for (std::uint32_t v : {T, H, W})
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  return s;
}

}  // namespace

TEST_CASE("DASE round trip is bit exact") {
  const auto dir = scratch_dir("roundtrip");
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto v = random_volume(1 + seed, 3 + seed, 2 + seed, seed);
    save_volume(v, dir / "v.dase");
    const auto back = load_volume(dir / "v.dase");
    REQUIRE(back == v);
  }
}

TEST_CASE("DASE single voxel file is 21 bytes") {
  const auto dir = scratch_dir("bytes");
  save_volume(Volume(1, 1, 1, {0.5f}), dir / "one.dase");
  CHECK(fs::file_size(dir / "one.dase") == 21);
  const std::string bytes = detail::read_file(dir / "one.dase");
  CHECK(bytes.substr(0, 4) == "DASE");
  CHECK(bytes[4] == 1);
  CHECK(bytes.substr(0, 17) == dase_header(1, 1, 1));
  // 0.5f = 0x3F000000, little-endian
  CHECK(static_cast<unsigned char>(bytes[17]) == 0x00);
  CHECK(static_cast<unsigned char>(bytes[20]) == 0x3F);
}

TEST_CASE("DASE decode errors") {
  std::string bad_magic = dase_header(1, 1, 1) + std::string(4, '\0');
  bad_magic.replace(0, 4, "XXXX");
  CHECK_THROWS_AS(decode_dase(bad_magic), FormatError);

  std::string bad_version = dase_header(1, 1, 1) + std::string(4, '\0');
  bad_version[4] = 2;
  CHECK_THROWS_AS(decode_dase(bad_version), FormatError);

  // T=2,H=3,W=3 needs 18 floats; give 17.
  CHECK_THROWS_AS(decode_dase(dase_header(2, 3, 3) + std::string(17 * 4, '\0')), CorruptError);
  CHECK_THROWS_AS(decode_dase(dase_header(2, 3, 3) + std::string(19 * 4, '\0')), CorruptError);
  CHECK_THROWS_AS(decode_dase("DAS"), FormatError);
  CHECK_NOTHROW(decode_dase(dase_header(2, 3, 3) + std::string(18 * 4, '\0')));
}

TEST_CASE("save_volume to an unwritable path raises a write error") {
  CHECK_THROWS_AS(save_volume(Volume(1, 1, 1), "/nonexistent_dir_for_dase/x.dase"), WriteError);
}

TEST_CASE("PGM stacks load in lexicographic order") {
  const auto dir = scratch_dir("pgm");
  for (int t : {2, 0, 1}) {
    PlanarImage img(2, 3, 1);
    for (auto& x : img.values()) x = static_cast<float>(10 * t + 1);
    write_pgm(img, dir / ("slice_" + std::to_string(t) + ".pgm"));
  }
  const auto v = load_volume(dir);
  REQUIRE(v.t_len() == 3);
  CHECK(v.height() == 2);
  CHECK(v.width() == 3);
  CHECK(v.at(0, 0, 0) == 1.0f);
  CHECK(v.at(1, 1, 2) == 11.0f);
  CHECK(v.at(2, 0, 1) == 21.0f);
}

TEST_CASE("16-bit PGM samples are read big-endian") {
  const auto dir = scratch_dir("pgm16");
  PlanarImage img(1, 2, 1, {300.0f, 65535.0f});
  write_pgm(img, dir / "a.pgm", 65535);
  const auto back = read_pgm(dir / "a.pgm");
  CHECK(back.values()[0] == 300.0f);
  CHECK(back.values()[1] == 65535.0f);
}

TEST_CASE("PGM stack with mismatched slice sizes is a shape error") {
  const auto dir = scratch_dir("pgm_mismatch");
  write_pgm(PlanarImage(2, 2, 1), dir / "a.pgm");
  write_pgm(PlanarImage(2, 3, 1), dir / "b.pgm");
  CHECK_THROWS_AS(load_volume(dir), ShapeError);
}

TEST_CASE("PFM round trip") {
  const auto dir = scratch_dir("pfm");
  PlanarImage img(3, 2, 1, {1.5f, -2.0f, 0.0f, 3.25f, 7.0f, -0.125f});
  write_pfm(img, dir / "d.pfm");
  const auto back = read_pfm(dir / "d.pfm");
  CHECK(back.height() == 3);
  CHECK(back.width() == 2);
  CHECK(std::vector<float>(back.values().begin(), back.values().end()) ==
        std::vector<float>(img.values().begin(), img.values().end()));
}

TEST_CASE("normalize_volume") {
  const auto n = normalize_volume(Volume(1, 1, 3, {2.0f, 4.0f, 6.0f}));
  CHECK(n.voxels()[0] == 0.0f);
  CHECK(n.voxels()[1] == 0.5f);
  CHECK(n.voxels()[2] == 1.0f);

  const auto c = normalize_volume(Volume(2, 2, 2, std::vector<float>(8, 7.3f)));
  for (float x : c.voxels()) CHECK(x == 0.0f);

  const Volume full(1, 2, 2, {0.0f, 0.25f, 0.75f, 1.0f});
  CHECK(normalize_volume(full) == full);

  const auto r = normalize_volume(random_volume(4, 5, 6, 9));
  for (float x : r.voxels()) {
    CHECK(x >= 0.0f);
    CHECK(x <= 1.0f);
  }
  CHECK(normalize_volume(r) == r);
}

TEST_CASE("slices and assemble are inverse") {
  const auto v = random_volume(3, 4, 5, 1);
  const auto s = slices(v);
  REQUIRE(s.size() == 3);
  for (std::size_t i = 0; i < 20; ++i) CHECK(s[0].values()[i] == v.voxels()[i]);
  CHECK(assemble(s) == v);
  CHECK(slices(random_volume(1, 2, 2, 3)).size() == 1);
}

TEST_CASE("histogram correlation") {
  const auto a = normalize_volume(random_volume(2, 8, 8, 4));
  CHECK(histogram_correlation(a, a) == Catch::Approx(1.0).margin(1e-12));

  auto vals = std::vector<float>(a.voxels().begin(), a.voxels().end());
  std::mt19937_64 rng(5);
  std::shuffle(vals.begin(), vals.end(), rng);
  const Volume perm(2, 8, 8, vals);
  CHECK(histogram_correlation(a, perm) == Catch::Approx(1.0).margin(1e-12));

  const auto b = normalize_volume(random_volume(2, 8, 8, 6));
  CHECK(histogram_correlation(a, b) == Catch::Approx(histogram_correlation(b, a)).margin(1e-15));

  HistogramSpec two{2, 0.0, 1.0};
  const PlanarImage lo(1, 4, 1, {0.0f, 0.1f, 0.2f, 0.49f});
  const PlanarImage hi(1, 4, 1, {0.5f, 0.6f, 0.9f, 1.0f});
  CHECK(histogram_correlation(lo, hi, two) == Catch::Approx(-1.0).margin(1e-12));

  // Out-of-range values clamp into the edge bins.
  const PlanarImage clamped(1, 4, 1, {-5.0f, -1.0f, 0.1f, 0.2f});
  CHECK(histogram_correlation(lo, clamped, two) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("histogram correlation of a constant histogram is undefined") {
  HistogramSpec two{2, 0.0, 1.0};
  // Both bins equally filled: zero variance.
  const PlanarImage flat(1, 2, 1, {0.1f, 0.9f});
  const PlanarImage other(1, 2, 1, {0.1f, 0.2f});
  CHECK_THROWS_AS(histogram_correlation(flat, other, two), UndefinedError);
  CHECK_THROWS_AS(HistogramSpec({1, 0.0, 1.0}).validate(), UsageError);
  CHECK_THROWS_AS(HistogramSpec({4, 1.0, 1.0}).validate(), UsageError);
}

TEST_CASE("histogram report JSON") {
  const auto a = normalize_volume(random_volume(1, 4, 4, 2));
  const auto j = histogram_report(a.voxels(), a.voxels());
  CHECK(j.at("bins") == 64);
  CHECK(j.at("range").size() == 2);
  CHECK(j.at("correlation").get<double>() == Catch::Approx(1.0));
}
