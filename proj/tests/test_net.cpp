#include <filesystem>

#include "doctest.h"
#include "omla/binio.hpp"
#include "omla/error.hpp"
#include "omla/net.hpp"
#include "test_support.hpp"

using namespace omla;
using omla::testing::check_gradient;
using omla::testing::random_frame;
using omla::testing::random_tensor;
using omla::testing::weighted_sum;

namespace {

// Independent two-pass per-channel mean and biased variance.
void two_pass(const Tensor<double>& x, std::vector<double>& mean, std::vector<double>& var) {
  const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  mean.assign(static_cast<std::size_t>(C), 0.0);
  var.assign(static_cast<std::size_t>(C), 0.0);
  for (int c = 0; c < C; ++c) {
    double s = 0.0;
    for (int n = 0; n < N; ++n)
      for (int i = 0; i < HW; ++i) s += x[static_cast<std::size_t>((n * C + c) * HW + i)];
    const double mu = s / (N * HW);
    double q = 0.0;
    for (int n = 0; n < N; ++n)
      for (int i = 0; i < HW; ++i) {
        const double d = x[static_cast<std::size_t>((n * C + c) * HW + i)] - mu;
        q += d * d;
      }
    mean[static_cast<std::size_t>(c)] = mu;
    var[static_cast<std::size_t>(c)] = q / (N * HW);
  }
}

BNLayer<double> layer_of(std::vector<double> gamma, std::vector<double> beta, double eps) {
  const int C = static_cast<int>(gamma.size());
  return {Tensor<double>(Shape{C}, std::move(gamma)), Tensor<double>(Shape{C}, std::move(beta)), eps};
}

}  // namespace

TEST_CASE("bn_partial_stats") {
  SUBCASE("constant map") {
    const auto ps = bn_partial_stats(Tensor<double>::full({1, 1, 3, 3}, 3.0));
    CHECK(ps.mean[0] == 3.0);
    CHECK(ps.var[0] == 0.0);
    CHECK(ps.count == 9);
  }
  SUBCASE("two points") {
    const auto ps = bn_partial_stats(Tensor<double>(Shape{1, 1, 1, 2}, {1.0, 3.0}));
    CHECK(ps.mean[0] == 2.0);
    CHECK(ps.var[0] == 1.0);
  }
  SUBCASE("matches a two-pass oracle") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed);
      const auto x = random_tensor(rng, {1, 4, 6, 6}, -3.0, 5.0);
      std::vector<double> m, v;
      two_pass(x, m, v);
      const auto ps = bn_partial_stats(x);
      for (int c = 0; c < 4; ++c) {
        CHECK(std::abs(ps.mean[c] - m[c]) <= 1e-12);
        CHECK(std::abs(ps.var[c] - v[c]) <= 1e-12);
      }
    }
  }
  SUBCASE("degenerate batch") {
    CHECK_THROWS_AS(bn_partial_stats(Tensor<double>::full({1, 2, 1, 1}, 1.0)), ContractError);
  }
}

TEST_CASE("bn_blend") {
  const BNStats prev{{0.0}, {1.0}};
  const std::vector<double> mu{2.0}, var{0.75};
  SUBCASE("a = 0 keeps the previous statistics") { CHECK(bn_blend(prev, mu, var, 0.0, 4) == prev); }
  SUBCASE("a = 1 takes the unbiased current statistics") {
    const auto s = bn_blend(prev, mu, var, 1.0, 4);
    CHECK(s.mean[0] == 2.0);
    CHECK(s.var[0] == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("a = 0.5") {
    const auto s = bn_blend(prev, mu, var, 0.5, 4);
    CHECK(s.mean[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(s.var[0] == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(bn_blend(prev, mu, var, -0.1, 4), ContractError);
    CHECK_THROWS_AS(bn_blend(prev, mu, var, 1.5, 4), ContractError);
    CHECK_THROWS_AS(bn_blend(prev, mu, var, 0.5, 1), ContractError);
  }
  SUBCASE("variance stays non-negative") {
    Rng rng(4);
    for (int i = 0; i < 1000; ++i) {
      const BNStats p{{rng.uniform(-5, 5)}, {rng.uniform(0, 3)}};
      const std::vector<double> m{rng.uniform(-5, 5)}, v{rng.uniform(0, 3)};
      CHECK(bn_blend(p, m, v, rng.uniform(), 2 + static_cast<std::size_t>(rng.uniform_int(0, 100))).var[0] >= 0.0);
    }
  }
}

TEST_CASE("streamed standard-normal features converge to zero mean and unit variance") {
  // a = 1 keeps only the last batch, whose sampling error (sd of the variance
  // ≈ 0.044 at m = 1024) is comparable to the bound, so it is not in the grid.
  for (double a : {0.02, 0.1, 0.25, 0.5}) {
    Rng rng(derive_seed(77, static_cast<std::uint64_t>(a * 1000)));
    BNStats s{{0.5, -0.5}, {2.0, 0.3}};
    std::vector<double> feats(2 * 1024);
    for (int step = 0; step < 500; ++step) {
      for (double& f : feats) f = rng.normal();
      const auto ps = bn_partial_stats(Tensor<double>(Shape{1, 2, 32, 32}, feats));
      s = bn_blend(s, ps.mean, ps.var, a, ps.count);
    }
    CAPTURE(a);
    for (int c = 0; c < 2; ++c) {
      CHECK(std::abs(s.mean[c]) <= 0.05);
      CHECK(std::abs(s.var[c] - 1.0) <= 0.05);
    }
  }
}

TEST_CASE("bn_normalize") {
  Rng rng(8);
  const auto x = random_tensor(rng, {2, 3, 2, 2});
  SUBCASE("unit stats and affine identity pass through") {
    const auto y = bn_normalize(x, BNStats{{0, 0, 0}, {1, 1, 1}}, layer_of({1, 1, 1}, {0, 0, 0}, 1e-300));
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == doctest::Approx(x[i]).epsilon(1e-15));
  }
  SUBCASE("input at the mean maps to beta") {
    const BNStats s{{0.3, -1.0, 2.0}, {0.5, 2.0, 1.0}};
    Tensor<double> at_mean = Tensor<double>::zeros({1, 3, 2, 2});
    std::vector<double> v(12);
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 4; ++i) v[static_cast<std::size_t>(c * 4 + i)] = s.mean[static_cast<std::size_t>(c)];
    const auto y = bn_normalize(Tensor<double>(Shape{1, 3, 2, 2}, v), s, layer_of({2, 3, 4}, {0.1, 0.2, 0.3}, 1e-5));
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 4; ++i) CHECK(y[static_cast<std::size_t>(c * 4 + i)] == doctest::Approx(0.1 * (c + 1)));
  }
  SUBCASE("matches the scalar formula") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng r(seed);
      const auto in = random_tensor(r, {2, 3, 3, 2}, -2, 2);
      BNStats s{{r.uniform(-1, 1), r.uniform(-1, 1), r.uniform(-1, 1)}, {r.uniform(0.1, 2), r.uniform(0.1, 2), r.uniform(0.1, 2)}};
      const std::vector<double> g{r.uniform(0.5, 2), r.uniform(0.5, 2), r.uniform(0.5, 2)};
      const std::vector<double> b{r.uniform(-1, 1), r.uniform(-1, 1), r.uniform(-1, 1)};
      const auto y = bn_normalize(in, s, layer_of(g, b, 1e-5));
      for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c)
          for (int i = 0; i < 6; ++i) {
            const std::size_t idx = static_cast<std::size_t>((n * 3 + c) * 6 + i);
            const std::size_t cc = static_cast<std::size_t>(c);
            const double want = g[cc] * (in[idx] - s.mean[cc]) / std::sqrt(s.var[cc] + 1e-5) + b[cc];
            CHECK(std::abs(y[idx] - want) <= 1e-12);
          }
    }
  }
  SUBCASE("gradients with respect to x, gamma and beta") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng r(500 + seed);
      const auto in = random_tensor(r, {1, 3, 2, 2}, -2, 2);
      const BNStats s{{0.1, -0.2, 0.3}, {0.5, 1.5, 0.9}};
      const auto g = random_tensor(r, {3}, 0.5, 2.0);
      const auto b = random_tensor(r, {3});
      CAPTURE(seed);
      CHECK(check_gradient([&](const auto& t) { return weighted_sum(bn_normalize(t, s, BNLayer<double>{g, b, 1e-5}), seed); }, in).ok());
      CHECK(check_gradient([&](const auto& t) { return weighted_sum(bn_normalize(in, s, BNLayer<double>{t, b, 1e-5}), seed); }, g).ok());
      CHECK(check_gradient([&](const auto& t) { return weighted_sum(bn_normalize(in, s, BNLayer<double>{g, t, 1e-5}), seed); }, b).ok());
    }
  }
}

TEST_CASE("parameter layout") {
  const DispNetTiny net(NetConfig{});
  const auto theta = net.init_params(1);
  CHECK(theta.size() == net.layout().total());
  const auto tensors = net.layout().unflatten(theta);
  CHECK(net.layout().flatten(tensors) == theta);
  CHECK(net.layout().at("enc0.conv.w").shape == Shape{16, 6, 3, 3});
  CHECK_THROWS_AS(net.layout().at("nope"), ContractError);
  CHECK_THROWS_AS(net.layout().unflatten(std::vector<double>(3)), ContractError);
  CHECK(net.init_params(1) == net.init_params(1));
  CHECK(net.init_params(1) != net.init_params(2));
}

TEST_CASE("forward") {
  const DispNetTiny net(NetConfig{});
  const auto theta_v = net.init_params(3);
  const Tensor<double> theta(Shape{static_cast<int>(theta_v.size())}, theta_v);
  Rng rng(5);
  const StereoFrame f = random_frame(rng, 32, 64);
  const StereoFrame* fp = &f;
  const auto input = make_input<double>(std::span<const StereoFrame* const>(&fp, 1));
  CHECK(input.shape() == Shape{1, 6, 32, 64});
  const auto stats = net.init_stats();

  const auto a = net.forward(theta, stats, input, BNMode::frozen());
  CHECK(a.disp_left.shape() == Shape{1, 1, 32, 64});
  CHECK(a.disp_right.shape() == Shape{1, 1, 32, 64});
  for (double v : a.disp_left.data()) CHECK((v >= 0.0 && v <= 48.0));
  for (double v : a.disp_right.data()) CHECK((v >= 0.0 && v <= 48.0));
  CHECK(a.stats == stats);

  const auto b = net.forward(theta, stats, input, BNMode::frozen());
  CHECK(std::equal(a.disp_left.data().begin(), a.disp_left.data().end(), b.disp_left.data().begin()));

  const auto c = net.forward(theta, stats, input, BNMode::blend(0.0));
  CHECK(std::equal(a.disp_left.data().begin(), a.disp_left.data().end(), c.disp_left.data().begin()));
  CHECK(std::equal(a.disp_right.data().begin(), a.disp_right.data().end(), c.disp_right.data().begin()));
  CHECK(c.stats == stats);

  const auto d = net.forward(theta, stats, input, BNMode::blend(0.3));
  CHECK(d.stats != stats);
  const auto e = net.forward(theta, stats, input, BNMode::collect());
  CHECK(e.stats != stats);
  for (const auto& s : e.stats)
    for (double v : s.var) CHECK(v >= 0.0);

  CHECK_THROWS_AS(net.forward(Tensor<double>::zeros({5}), stats, input, BNMode::frozen()), ContractError);
  CHECK_THROWS_AS(net.forward(theta, BNStatsSet{}, input, BNMode::frozen()), ContractError);
}

TEST_CASE("checkpoint round trip and errors") {
  const DispNetTiny net(NetConfig{});
  Checkpoint ck{"standard", net.layout(), net.init_params(2), {}, net.init_stats()};
  ck.lambda.assign(ck.theta.size(), 1e-4);
  ck.stats[1].mean[3] = 0.25;
  const std::string bytes = encode_checkpoint(ck);
  CHECK(decode_checkpoint(bytes) == ck);

  const auto dir = std::filesystem::temp_directory_path() / "omla_test_net";
  const std::string path = (dir / "c.omlc").string();
  save_checkpoint(path, ck);
  CHECK(load_checkpoint(path) == ck);
  CHECK_NOTHROW(check_compatible(ck, net));

  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  std::string ver = bytes;
  ver[4] = 9;
  CHECK_THROWS_AS(decode_checkpoint(ver), UnsupportedVersionError);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 5)), FormatError);
  CHECK_THROWS_AS(load_checkpoint((dir / "missing.omlc").string()), IoError);

  NetConfig other;
  other.channels = {16, 32, 48, 32};
  CHECK_THROWS_AS(check_compatible(ck, DispNetTiny(other)), LayoutError);
  std::filesystem::remove_all(dir);
}
