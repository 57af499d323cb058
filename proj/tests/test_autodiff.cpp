#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <random>

#include "dase/autodiff/checkpoint.hpp"
#include "dase/autodiff/conv.hpp"
#include "dase/autodiff/gradcheck.hpp"
#include "dase/autodiff/gradcheck_suite.hpp"
#include "dase/autodiff/ops.hpp"
#include "dase/autodiff/optim.hpp"
#include "dase/autodiff/tensor.hpp"

using namespace dase;
using namespace dase::ad;

namespace {

template <class T = double>
Tensor<T> rnd(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<T> v(numel_of(s));
  for (auto& x : v) x = static_cast<T>(d(rng));
  return Tensor<T>(std::move(s), std::move(v));
}

std::vector<double> vec(const TensorD& t) { return {t.data().begin(), t.data().end()}; }

// Naive grouped cross-correlation straight from the definition.
std::vector<double> naive_conv(const TensorD& x, const TensorD& w, const TensorD& b, const ConvSpec& s) {
  const std::size_t N = x.dim(0), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = (H + 2 * s.padding - s.kernel) / s.stride + 1;
  const std::size_t Wo = (W + 2 * s.padding - s.kernel) / s.stride + 1;
  const std::size_t cin_g = s.in_channels / s.groups, cout_g = s.out_channels / s.groups;
  std::vector<double> y(N * s.out_channels * Ho * Wo, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t co = 0; co < s.out_channels; ++co) {
      const std::size_t g = co / cout_g;
      for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          double acc = b.defined() ? b.data()[co] : 0.0;
          for (std::size_t ci = 0; ci < cin_g; ++ci)
            for (std::size_t ky = 0; ky < s.kernel; ++ky)
              for (std::size_t kx = 0; kx < s.kernel; ++kx) {
                const long iy = static_cast<long>(oy * s.stride + ky) - static_cast<long>(s.padding);
                const long ix = static_cast<long>(ox * s.stride + kx) - static_cast<long>(s.padding);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
                const double xv = x.data()[((n * s.in_channels + g * cin_g + ci) * H + iy) * W + ix];
                const double wv = w.data()[((co * cin_g + ci) * s.kernel + ky) * s.kernel + kx];
                acc += xv * wv;
              }
          y[((n * s.out_channels + co) * Ho + oy) * Wo + ox] = acc;
        }
    }
  return y;
}

}  // namespace

TEST_CASE("tensor construction invariants") {
  CHECK_THROWS_AS(TensorF({2, 2}, {1.0f, 2.0f, 3.0f}), ShapeError);
  auto t = TensorF::zeros({2, 3});
  CHECK(t.numel() == 6);
  CHECK_FALSE(t.has_grad());
}

TEST_CASE("backward requires a single-element root") {
  auto x = rnd({2, 2}, 1);
  x.set_requires_grad(true);
  CHECK_THROWS_AS(relu(x).backward(), ShapeError);
}

TEST_CASE("gradients accumulate over shared subexpressions") {
  TensorD x({3}, {1.0, -2.0, 0.5}, true);
  auto y = sum(add(hadamard(x, x), x));  // sum(x^2 + x)
  y.backward();
  for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == Catch::Approx(2.0 * x.data()[i] + 1.0));
}

TEST_CASE("conv2d fixtures") {
  const ConvSpec depthwise{3, 3, 1, 1, 0, 3};
  const auto x = rnd({2, 3, 4, 4}, 2);
  const auto y = conv2d(x, TensorD::filled({3, 1, 1, 1}, 1.0), TensorD::zeros({3}), depthwise);
  CHECK(vec(y) == vec(x));

  const ConvSpec full{1, 1, 3, 1, 0, 1};
  const auto s = conv2d(TensorD::filled({1, 1, 3, 3}, 1.0), TensorD::filled({1, 1, 3, 3}, 1.0), TensorD{}, full);
  REQUIRE(s.numel() == 1);
  CHECK(s.item() == 9.0);
}

TEST_CASE("conv2d matches the naive grouped definition") {
  const std::vector<ConvSpec> specs = {
      {4, 6, 3, 1, 1, 2}, {4, 4, 3, 2, 1, 4}, {6, 3, 1, 1, 0, 3}, {2, 4, 3, 2, 0, 1}, {8, 8, 3, 1, 1, 1}};
  std::uint64_t seed = 10;
  for (const auto& s : specs) {
    const auto x = rnd({2, s.in_channels, 6, 5}, ++seed);
    const auto w = rnd(s.weight_shape(), ++seed);
    const auto b = rnd({s.out_channels}, ++seed);
    const auto y = vec(conv2d(x, w, b, s));
    const auto ref = naive_conv(x, w, b, s);
    REQUIRE(y.size() == ref.size());
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == Catch::Approx(ref[i]).margin(1e-12));
  }
}

TEST_CASE("grouped conv equals independent convs on channel partitions") {
  const ConvSpec grouped{4, 6, 3, 1, 1, 2};
  const auto x = rnd({1, 4, 5, 5}, 30);
  const auto w = rnd(grouped.weight_shape(), 31);
  const auto y = vec(conv2d(x, w, TensorD{}, grouped));
  const ConvSpec single{2, 3, 3, 1, 1, 1};
  for (std::size_t g = 0; g < 2; ++g) {
    std::vector<double> xs(x.data().begin() + g * 50, x.data().begin() + (g + 1) * 50);
    std::vector<double> ws(w.data().begin() + g * 54, w.data().begin() + (g + 1) * 54);
    const auto part = vec(conv2d(TensorD({1, 2, 5, 5}, xs), TensorD({3, 2, 3, 3}, ws), TensorD{}, single));
    for (std::size_t i = 0; i < part.size(); ++i) CHECK(y[g * 75 + i] == part[i]);
  }
}

TEST_CASE("conv spec validation and output extent") {
  CHECK_THROWS_AS(ConvSpec({6, 4, 3, 1, 1, 4}).validate(), ConfigError);
  CHECK_THROWS_AS(ConvSpec({4, 6, 3, 1, 1, 4}).validate(), ConfigError);
  CHECK_THROWS_AS(ConvSpec({4, 4, 0, 1, 0, 1}).validate(), ConfigError);
  CHECK_THROWS_AS(ConvSpec({4, 4, 3, 0, 0, 1}).validate(), ConfigError);
  CHECK(ConvSpec({1, 1, 3, 2, 1, 1}).output_extent(32) == 16);
  CHECK(ConvSpec({1, 1, 3, 1, 0, 1}).output_extent(3) == 1);
  CHECK_THROWS_AS(ConvSpec({1, 1, 5, 1, 0, 1}).output_extent(3), ShapeError);
  CHECK_THROWS_AS(conv2d(rnd({1, 3, 4, 4}, 1), rnd({4, 1, 1, 1}, 2), TensorD{}, ConvSpec{4, 4, 1, 1, 0, 4}),
                  ShapeError);
}

TEST_CASE("param_count") {
  CHECK(param_count({8, 8, 3, 1, 1, 1}) == 576);
  CHECK(param_count({8, 8, 3, 1, 1, 4}) == 144);
  CHECK(param_count({16, 32, 1, 1, 0, 4}) == 128);
  for (const ConvSpec& s : {ConvSpec{8, 8, 3, 1, 1, 4}, ConvSpec{12, 6, 1, 1, 0, 3}, ConvSpec{5, 10, 5, 1, 2, 5}})
    CHECK(param_count(s) == numel_of(s.weight_shape()));
}

TEST_CASE("elementwise fixtures") {
  TensorD x({3}, {-1.0, 0.0, 2.0}, true);
  const auto r = relu(x);
  CHECK(vec(r) == std::vector<double>{0.0, 0.0, 2.0});
  sum(r).backward();
  CHECK(x.grad()[2] == 1.0);
  CHECK(x.grad()[0] == 0.0);

  TensorD z({1}, {0.0}, true);
  const auto s = sigmoid(z);
  CHECK(s.item() == 0.5);
  s.backward();
  CHECK(z.grad()[0] == 0.25);

  const auto big = sigmoid(TensorF({4}, {-200.0f, -30.0f, 30.0f, 200.0f}));
  for (float v : big.data()) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }

  const auto h = rnd({2, 3}, 5);
  CHECK(vec(hadamard(h, TensorD::filled({2, 3}, 1.0))) == vec(h));
  CHECK_THROWS_AS(hadamard(h, rnd({3, 2}, 6)), ShapeError);
}

TEST_CASE("pooling fixtures") {
  const TensorD g({1, 1, 2, 2}, {1.0, 3.0, 5.0, 7.0});
  CHECK(pool2d(g, PoolKind::global_avg).item() == 4.0);
  CHECK(pool2d(TensorD({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0}), PoolKind::max, 2).item() == 4.0);

  TensorD x = rnd({1, 2, 4, 4}, 7);
  x.set_requires_grad(true);
  sum(pool2d(x, PoolKind::mean, 2)).backward();
  for (double v : x.grad()) CHECK(v == 0.25);
  CHECK_THROWS_AS(pool2d(rnd({1, 1, 3, 4}, 1), PoolKind::max, 2), ShapeError);
}

TEST_CASE("loss fixtures") {
  const auto logits = TensorD::zeros({2, 3});
  const std::vector<int> labels = {0, 2};
  CHECK(softmax_cross_entropy(logits, std::span(labels)).item() == Catch::Approx(std::log(3.0)).epsilon(1e-12));
  const std::vector<int> bad = {0, 3};
  CHECK_THROWS_AS(softmax_cross_entropy(logits, std::span(bad)), DataError);

  TensorD l = rnd({2, 3}, 8);
  l.set_requires_grad(true);
  softmax_cross_entropy(l, std::span(labels)).backward();
  for (std::size_t n = 0; n < 2; ++n) {
    double z = 0.0;
    for (std::size_t m = 0; m < 3; ++m) z += std::exp(l.data()[n * 3 + m]);
    for (std::size_t m = 0; m < 3; ++m) {
      const double p = std::exp(l.data()[n * 3 + m]) / z;
      const double onehot = static_cast<int>(m) == labels[n] ? 1.0 : 0.0;
      CHECK(l.grad()[n * 3 + m] == Catch::Approx((p - onehot) / 2.0).margin(1e-12));
    }
  }
  const std::vector<int> fd_labels = {1, 0};
  const double err = grad_check([&](const TensorD& v) { return softmax_cross_entropy(v, std::span(fd_labels)); },
                                rnd({2, 3}, 9));
  CHECK(err < 1e-5);

  const auto a = rnd({5}, 10);
  CHECK(l1_loss(a, a).item() == 0.0);
  CHECK(l1_loss(TensorD({2}, {1.0, 3.0}), TensorD({2}, {2.0, 5.0})).item() == 1.5);
}

TEST_CASE("linear layer") {
  const TensorD x({1, 2}, {1.0, 2.0});
  const TensorD w({2, 2}, {1.0, 0.0, 0.5, -1.0});
  const TensorD b({2}, {0.25, 0.0});
  CHECK(vec(linear(x, w, b)) == std::vector<double>{2.25, -2.0});
  CHECK_THROWS_AS(linear(x, rnd({3, 2}, 1), b), ShapeError);
}

TEST_CASE("softmax weights sum to one") {
  const auto s = softmax(rnd({7}, 11, -5.0, 5.0));
  double total = 0.0;
  for (double v : s.data()) {
    CHECK(v > 0.0);
    total += v;
  }
  CHECK(total == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("grad_check fixtures") {
  std::vector<double> ints = {-3.0, 0.0, 2.0, 7.0, 11.0, -5.0};
  const TensorD xi({6}, ints);
  CHECK(grad_check([](const TensorD& v) { return sum(v); }, xi, std::ldexp(1.0, -16)) == 0.0);
  CHECK(grad_check([](const TensorD& v) { return sum(sigmoid(v)); }, rnd({8}, 12, -3.0, 3.0)) < 1e-6);
  const TensorD away({4}, {-0.5, -0.1, 0.2, 0.9});
  CHECK(grad_check([](const TensorD& v) { return sum(relu(v)); }, away) < 1e-6);
  CHECK_THROWS_AS(grad_check([](const TensorD&) { return TensorD({1}, {std::nan("")}); }, away), NumericError);
}

TEST_CASE("full gradcheck suite passes for several seeds") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    for (const auto& r : run_gradcheck_suite(seed)) {
      INFO(r.name << " seed " << seed);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("AdamW fixtures") {
  {
    std::vector<TensorD> p = {TensorD({2}, {1.0, -2.0}, true)};
    auto st = OptimState::for_params(p, {1e-3, 0.9, 0.999, 1e-8, 0.0});
    p[0].zero_grad();
    adamw_step(p, st, 1e-3);
    CHECK(vec(p[0]) == std::vector<double>{1.0, -2.0});
    CHECK(st.step == 1);
  }
  {
    std::vector<TensorD> p = {TensorD({1}, {1.0}, true)};
    auto st = OptimState::for_params(p);
    adamw_step(p, st, 1e-3);
    CHECK(p[0].item() == Catch::Approx(0.99999).epsilon(1e-15));
  }
  {
    std::vector<TensorD> p = {TensorD({1}, {0.0}, true)};
    auto st = OptimState::for_params(p);
    p[0].zero_grad();
    p[0].grad_buffer()[0] = 1.0;
    adamw_step(p, st, 1e-3);
    // m_hat = 1, v_hat = 1: update = lr / (1 + eps)
    CHECK(p[0].item() == Catch::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-12));
  }
  {
    std::vector<TensorD> p = {TensorD({1}, {0.0}, true)};
    auto st = OptimState::for_params(p);
    p[0].zero_grad();
    p[0].grad_buffer()[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(adamw_step(p, st, 1e-3), NumericError);
  }
  {
    std::vector<TensorD> p = {TensorD({1}, {0.5}, true), TensorD({1}, {0.5}, true)};
    auto st = OptimState::for_params(p);
    for (auto& t : p) {
      t.zero_grad();
      t.grad_buffer()[0] = 1.0;
    }
    adamw_step(p, st, 1e-3, {true, false});
    CHECK(p[0].item() == 0.5);
    CHECK(p[1].item() < 0.5);
  }
}

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0, 1e-3, 0.0, 50) == 1e-3);
  CHECK(cosine_lr(25, 1e-3, 1e-5, 50) == Catch::Approx((1e-3 + 1e-5) / 2).epsilon(1e-12));
  CHECK(cosine_lr(50, 1e-3, 0.0, 50) == 1e-3);
  CHECK(cosine_lr(49, 1e-3, 0.0, 50) < cosine_lr(48, 1e-3, 0.0, 50));
  CHECK_THROWS_AS(cosine_lr(0, 1e-3, 0.0, 0), UsageError);
}

TEST_CASE("forward and backward are bit-reproducible") {
  const ConvSpec s{4, 8, 3, 2, 1, 2};
  auto run = [&] {
    TensorF x = rnd<float>({2, 4, 8, 8}, 40);
    TensorF w = rnd<float>(s.weight_shape(), 41);
    w.set_requires_grad(true);
    auto y = sum(sigmoid(conv2d(x, w, TensorF{}, s)));
    y.backward();
    return std::make_pair(y.item(), std::vector<float>(w.grad().begin(), w.grad().end()));
  };
  CHECK(run() == run());
}

TEST_CASE("checkpoint round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "dase_test_checkpoint";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  NamedTensors<float> tensors = {{"a", rnd<float>({2, 3}, 50)}, {"b", rnd<float>({4}, 51)}};
  save_checkpoint(tensors, dir / "ckpt.json", {{"note", "x"}});
  const auto [manifest, back] = load_checkpoint<float>(dir / "ckpt.json");
  CHECK(manifest.at("format") == "dase-checkpoint");
  CHECK(manifest.at("dtype") == "f32le");
  CHECK(manifest.at("note") == "x");
  CHECK(manifest.at("tensors")[1].at("offset") == 24);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].first == tensors[i].first);
    CHECK(back[i].second.shape() == tensors[i].second.shape());
    CHECK(std::vector<float>(back[i].second.data().begin(), back[i].second.data().end()) ==
          std::vector<float>(tensors[i].second.data().begin(), tensors[i].second.data().end()));
  }
  CHECK(std::filesystem::file_size(dir / "ckpt.bin") == 40);
  auto truncated = manifest;
  truncated["tensors"][1]["offset"] = 40;
  CHECK_THROWS_AS(decode_checkpoint<float>(truncated, std::string(40, '\0')), CorruptError);
}
