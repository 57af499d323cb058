#include <catch_amalgamated.hpp>

#include <random>

#include "dase/curriculum.hpp"

using namespace dase;
using namespace dase::curriculum;
using ad::TensorD;

namespace {

TensorD random_map(ad::Shape s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-2.0, 2.0);
  std::vector<double> v(ad::numel_of(s));
  for (auto& x : v) x = d(rng);
  return TensorD(std::move(s), std::move(v));
}

// Independent stencil: every horizontal and vertical neighbour pair counted once.
double neighbour_pairs(const TensorD& x) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  auto at = [&](std::size_t c, std::size_t y, std::size_t a) { return x.data()[(c * H + y) * W + a]; };
  double s = 0.0;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t a = 0; a + 1 < W; ++a) s += std::abs(at(c, y, a + 1) - at(c, y, a));
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t b = 0; b + 1 < H; ++b)
      for (std::size_t a = 0; a < W; ++a) s += std::abs(at(c, b + 1, a) - at(c, b, a));
  return s;
}

}  // namespace

TEST_CASE("complexity fixtures") {
  CHECK(complexity(TensorD({1, 2, 2}, {0, 1, 0, 1})) == 2.0);
  CHECK(complexity(TensorD({1, 2, 2}, {0, 3, 0, 3})) == 6.0);
  CHECK(complexity(TensorD::filled({3, 5, 4}, 0.7)) == 0.0);
  CHECK(complexity(TensorD({1, 1, 1}, {4.0})) == 0.0);
}

TEST_CASE("complexity properties") {
  std::mt19937_64 rng(21);
  for (int k = 0; k < 50; ++k) {
    const auto x = random_map({3, 6, 5}, rng);
    const double l = complexity(x);
    CHECK(l == Catch::Approx(neighbour_pairs(x)).epsilon(1e-12));
    for (double a : {-3.5, 0.25, 7.0}) {
      std::vector<double> v(x.data().begin(), x.data().end());
      for (auto& e : v) e *= a;
      CHECK(std::abs(complexity(TensorD(x.shape(), v)) - std::abs(a) * l) <= 1e-10 * std::abs(a) * l);
    }
    // Dyadic values keep the shift exact.
    std::vector<double> base(x.data().begin(), x.data().end());
    for (auto& e : base) e = std::round(e * 1024.0) / 1024.0;
    std::vector<double> base_shift = base;
    for (auto& e : base_shift) e += 0.5;
    CHECK(complexity(TensorD(x.shape(), base)) == complexity(TensorD(x.shape(), base_shift)));
    CHECK(complexity(x) >= 0.0);
  }
}

TEST_CASE("batch complexity averages samples") {
  std::mt19937_64 rng(22);
  const auto a = random_map({2, 4, 4}, rng), b = random_map({2, 4, 4}, rng);
  std::vector<double> v(a.data().begin(), a.data().end());
  v.insert(v.end(), b.data().begin(), b.data().end());
  CHECK(complexity(TensorD({2, 2, 4, 4}, v)) == Catch::Approx((complexity(a) + complexity(b)) / 2).epsilon(1e-14));
  CHECK_THROWS_AS(complexity(TensorD::zeros({4, 4})), ShapeError);
}

TEST_CASE("threshold calibration") {
  std::vector<double> s(100);
  for (int i = 0; i < 100; ++i) s[i] = i + 1;
  const std::vector<double> q = {0.5};
  CHECK(calibrate_thresholds(s, q)[0] == 50.5);
  const std::vector<double> q3 = {0.25, 0.5, 0.75};
  const auto t = calibrate_thresholds(s, q3);
  CHECK(t[0] == Catch::Approx(25.75));
  CHECK(t[2] == Catch::Approx(75.25));
  CHECK(std::is_sorted(t.begin(), t.end()));
  const std::vector<double> same(7, 3.25);
  for (double v : calibrate_thresholds(same, q3)) CHECK(v == 3.25);
  const std::vector<double> bad = {0.9, 0.5};
  CHECK_THROWS_AS(calibrate_thresholds(s, bad), UsageError);
  const std::vector<double> edge = {1.0};
  CHECK_THROWS_AS(calibrate_thresholds(s, edge), UsageError);
  CHECK_THROWS_AS(calibrate_thresholds({}, q), DataError);
}

TEST_CASE("advance fixtures") {
  const std::vector<std::string> names = {"S1", "S4", "S6", "Conv1"};
  CurriculumState st(names, {1.0, 2.0, 3.0, 4.0});
  CHECK_FALSE(st.advance({1.0, "S1", 0}));
  CHECK(st.stage_index() == 1);
  CHECK(st.advance({1.5, "S1", 1}));
  CHECK(st.stage_index() == 2);
  CHECK(st.advance({2.5, "S4", 2}));
  CHECK(st.stage_index() == 3);
  CHECK_THROWS_AS(st.advance({9.0, "S1", 3}), UsageError);
  CHECK(st.advance({3.5, "S6", 4}));
  CHECK(st.advance({9.0, "Conv1", 5}));
  CHECK(st.stage_index() == 4);
  CHECK(st.recalibration_events().size() == 3);
  CHECK(st.history().size() == 5);

  auto [next, recal] = advance(CurriculumState(names, {1, 2, 3, 4}), {5.0, "S1", 0});
  CHECK(recal);
  CHECK(next.active_stage() == "S4");

  CHECK_THROWS_AS(CurriculumState(names, {1.0}), ConfigError);
  CHECK_THROWS_AS(CurriculumState({}, {}), ConfigError);
}

TEST_CASE("trace CSV") {
  CurriculumState st({"A", "B"}, {0.5, 0.5});
  st.advance({1.0, "A", 3});
  st.advance({0.25, "B", 4});
  CHECK(st.trace_csv() == "step,stage,lambda,tau_active,advanced\n3,A,1,0.5,1\n4,B,0.25,0.5,0\n");
}

TEST_CASE("fusion") {
  std::mt19937_64 rng(23);
  const auto f = random_map({2, 3, 4, 4}, rng);
  const auto w = random_map({3, 5}, rng), b = random_map({5}, rng);
  std::map<std::string, TensorD> feats{{"S1", f}};
  std::map<std::string, StageProjection<double>> proj{{"S1", {w, b}}};
  const auto single = fuse_stages(feats, FusionWeights<double>{{"S1"}, TensorD({1}, {0.3})}, proj);
  const auto direct = ad::linear(ad::reshape(ad::pool2d(f, ad::PoolKind::global_avg), {2, 3}), w, b);
  for (std::size_t i = 0; i < 10; ++i) CHECK(single.data()[i] == Catch::Approx(direct.data()[i]).epsilon(1e-14));

  feats["S4"] = f;
  proj["S4"] = {w, b};
  const auto pair = fuse_stages(feats, FusionWeights<double>{{"S1", "S4"}, TensorD({2}, {-2.0, 1.5})}, proj);
  for (std::size_t i = 0; i < 10; ++i) CHECK(pair.data()[i] == Catch::Approx(direct.data()[i]).epsilon(1e-12));

  const auto g = random_map({2, 6, 2, 2}, rng);
  feats["S4"] = g;
  proj["S4"] = {random_map({6, 5}, rng), random_map({5}, rng)};
  const auto ab = fuse_stages(feats, FusionWeights<double>{{"S1", "S4"}, TensorD({2}, {0.1, 0.7})}, proj);
  const auto ba = fuse_stages(feats, FusionWeights<double>{{"S4", "S1"}, TensorD({2}, {0.7, 0.1})}, proj);
  for (std::size_t i = 0; i < 10; ++i) CHECK(ab.data()[i] == Catch::Approx(ba.data()[i]).epsilon(1e-14));

  const auto sm = FusionWeights<double>{{"a", "b", "c"}, TensorD({3}, {5.0, -3.0, 0.2})}.normalized();
  double total = 0.0;
  for (double v : sm.data()) {
    CHECK(v > 0.0);
    total += v;
  }
  CHECK(std::abs(total - 1.0) <= 1e-9);

  CHECK_THROWS_AS(fuse_stages(feats, FusionWeights<double>{{"S1", "S9"}, TensorD({2}, {0.0, 0.0})}, proj), DataError);
}
