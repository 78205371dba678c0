#include "doctest.h"
#include "omla/error.hpp"
#include "omla/ops.hpp"
#include "test_support.hpp"

using namespace omla;
using omla::testing::check_gradient;
using omla::testing::random_tensor;
using omla::testing::weighted_sum;

namespace {

Tensor<double> vec(std::vector<double> v) {
  const int n = static_cast<int>(v.size());
  return Tensor<double>(Shape{n}, std::move(v));
}

std::vector<double> values(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

// Values in [lo, hi] kept at least `gap` away from every multiple of `step`,
// so central differences never straddle a kink.
Tensor<double> away_from_kinks(Rng& rng, Shape shape, double lo, double hi, double step, double gap) {
  Tensor<double> t = random_tensor(rng, shape, lo, hi);
  std::vector<double> v = values(t);
  for (double& x : v) {
    const double r = x / step - std::floor(x / step);
    if (r < gap / step) x += gap;
    if (r > 1.0 - gap / step) x -= gap;
  }
  return Tensor<double>(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("elementwise examples") {
  CHECK(values(add(vec({1, 2}), vec({3, 4}))) == std::vector<double>{4, 6});
  CHECK(values(sub(vec({1, 2}), vec({3, 5}))) == std::vector<double>{-2, -3});
  CHECK(values(mul(vec({1, 2}), vec({3, 4}))) == std::vector<double>{3, 8});
  CHECK(values(div(vec({3, 8}), vec({3, 4}))) == std::vector<double>{1, 2});

  SUBCASE("abs has zero gradient at the kink") {
    Tape<double> tape;
    const auto x = tape.leaf(vec({0.0, -2.0, 3.0}));
    tape.backward(sum(abs(x)));
    CHECK(tape.grad(x) == std::vector<double>{0.0, -1.0, 1.0});
  }
  SUBCASE("clamp passes gradient only strictly inside the bounds") {
    Tape<double> tape;
    const auto x = tape.leaf(vec({-2.0, 0.0, 0.5, 1.0, 3.0}));
    tape.backward(sum(clamp(x, 0.0, 1.0)));
    CHECK(tape.grad(x) == std::vector<double>{0.0, 0.0, 1.0, 0.0, 0.0});
  }
  SUBCASE("mean of a 2x2 tensor of fives") {
    Tape<double> tape;
    const auto x = tape.leaf(Tensor<double>::full({2, 2}, 5.0));
    const auto m = mean(x);
    CHECK(m.item() == 5.0);
    tape.backward(m);
    CHECK(tape.grad(x) == std::vector<double>(4, 0.25));
  }
}

TEST_CASE("broadcasting is limited to scalars and per-channel vectors") {
  const auto fm = Tensor<double>::full({1, 2, 2, 2}, 1.0);
  const auto per_channel = vec({10.0, 20.0});
  const auto r = add(fm, per_channel);
  CHECK(r[0] == 11.0);
  CHECK(r[4] == 21.0);
  CHECK(values(mul(vec({1, 2, 3}), Tensor<double>::scalar(2.0))) == std::vector<double>{2, 4, 6});
  CHECK_THROWS_AS(add(vec({1, 2, 3}), vec({1, 2})), ShapeError);
  CHECK_THROWS_AS(mul(Tensor<double>::zeros({2, 3}), Tensor<double>::zeros({3, 2})), ShapeError);
}

TEST_CASE("backward examples") {
  SUBCASE("sum gives ones") {
    Tape<double> tape;
    const auto x = tape.leaf(Tensor<double>::full({2, 3}, 0.7));
    tape.backward(sum(x));
    CHECK(tape.grad(x) == std::vector<double>(6, 1.0));
  }
  SUBCASE("sum of squares") {
    Tape<double> tape;
    const auto x = tape.leaf(vec({1.0, -2.0}));
    tape.backward(sum(mul(x, x)));
    CHECK(tape.grad(x) == std::vector<double>{2.0, -4.0});
  }
  SUBCASE("non-scalar loss is a contract error") {
    Tape<double> tape;
    const auto x = tape.leaf(vec({1.0, 2.0}));
    CHECK_THROWS_AS(tape.backward(mul(x, x)), ContractError);
  }
  SUBCASE("tape is consumed") {
    Tape<double> tape;
    const auto x = tape.leaf(vec({1.0, 2.0}));
    tape.backward(sum(x));
    CHECK(tape.consumed());
    CHECK_THROWS_AS(sum(x), ContractError);
  }
  SUBCASE("untracked tensors get no gradient") {
    Tape<double> tape;
    const auto x = tape.leaf(vec({1.0, 2.0}));
    const auto c = vec({3.0, 4.0});
    const auto y = mul(x, c);
    CHECK_FALSE(c.recorded());
    CHECK(y.recorded());
    tape.backward(sum(y));
    CHECK(tape.grad(x) == std::vector<double>{3.0, 4.0});
  }
}

TEST_CASE("conv2d examples") {
  Rng rng(3);
  const auto x = random_tensor(rng, {1, 1, 3, 3});
  const auto id = conv2d(x, Tensor<double>::full({1, 1, 1, 1}, 1.0), Tensor<double>::zeros({1}), 1, 0);
  CHECK(values(id) == values(x));
  const auto y = conv2d(random_tensor(rng, {1, 1, 4, 4}), random_tensor(rng, {1, 1, 3, 3}), Tensor<double>::zeros({1}),
                        1, 1);
  CHECK(y.shape() == Shape{1, 1, 4, 4});
  const auto s = conv2d(random_tensor(rng, {2, 3, 8, 6}), random_tensor(rng, {4, 3, 3, 3}), Tensor<double>::zeros({4}),
                        2, 1);
  CHECK(s.shape() == Shape{2, 4, 4, 3});
  CHECK_THROWS_AS(conv2d(random_tensor(rng, {1, 2, 4, 4}), random_tensor(rng, {1, 3, 3, 3}),
                         Tensor<double>::zeros({1}), 1, 1),
                  ShapeError);
  CHECK_THROWS_AS(conv2d(random_tensor(rng, {1, 1, 2, 2}), random_tensor(rng, {1, 1, 5, 5}),
                         Tensor<double>::zeros({1}), 1, 0),
                  ShapeError);
}

TEST_CASE("upsample examples") {
  const auto c = upsample_bilinear2x(Tensor<double>::full({1, 2, 2, 3}, 0.4));
  CHECK(c.shape() == Shape{1, 2, 4, 6});
  for (double v : c.data()) CHECK(v == doctest::Approx(0.4).epsilon(1e-15));
  const auto r = upsample_bilinear2x(Tensor<double>(Shape{1, 1, 1, 2}, {0.0, 1.0}));
  REQUIRE(r.shape() == Shape{1, 1, 2, 4});
  for (int i = 0; i < 3; ++i) CHECK(r[static_cast<std::size_t>(i)] <= r[static_cast<std::size_t>(i + 1)]);
  CHECK(r[0] == 0.0);
  CHECK(r[3] == 1.0);
}

TEST_CASE("finite_diff_grad examples") {
  Rng rng(5);
  const auto x = random_tensor(rng, {3, 2});
  const auto g = finite_diff_grad([](const Tensor<double>& t) { return sum(t).item(); }, x, 1e-5);
  for (double v : g.data()) CHECK(std::abs(v - 1.0) <= 1e-8);
  const auto q = finite_diff_grad([](const Tensor<double>& t) { return t[0] * t[0]; }, Tensor<double>::scalar(3.0), 1e-5);
  CHECK(std::abs(q[0] - 6.0) <= 1e-6);
}

TEST_CASE("elementwise gradients match finite differences over 100 seeds") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const auto a = random_tensor(rng, {2, 3, 2});
    const auto b = random_tensor(rng, {2, 3, 2});
    const auto pos = random_tensor(rng, {2, 3, 2}, 0.2, 2.0);
    const auto away = away_from_kinks(rng, {2, 3, 2}, -2.0, 2.0, 10.0, 0.01);
    CAPTURE(seed);
    CHECK(check_gradient([&](const auto& x) { return weighted_sum(add(x, b), seed); }, a).ok());
    CHECK(check_gradient([&](const auto& x) { return weighted_sum(sub(b, x), seed); }, a).ok());
    CHECK(check_gradient([&](const auto& x) { return weighted_sum(mul(x, b), seed); }, a).ok());
    CHECK(check_gradient([&](const auto& x) { return weighted_sum(div(b, x), seed); }, pos).ok());
    CHECK(check_gradient([&](const auto& x) { return weighted_sum(div(x, pos), seed); }, a).ok());
    CHECK(check_gradient([&](const auto& x) { return weighted_sum(pow(x, 2.5), seed); }, pos).ok());
    CHECK(check_gradient([&](const auto& x) { return weighted_sum(sqrt(x), seed); }, pos).ok());
    CHECK(check_gradient([&](const auto& x) { return weighted_sum(log(x), seed); }, pos).ok());
    CHECK(check_gradient([&](const auto& x) { return weighted_sum(sigmoid(x), seed); }, a).ok());
    CHECK(check_gradient([&](const auto& x) { return weighted_sum(relu(x), seed); }, away).ok());
    CHECK(check_gradient([&](const auto& x) { return weighted_sum(abs(x), seed); }, away).ok());
    CHECK(check_gradient([&](const auto& x) { return weighted_sum(clamp(x, -0.5, 0.5), seed); },
                         away_from_kinks(rng, {2, 3, 2}, -1.0, 1.0, 0.5, 0.01))
              .ok());
    CHECK(check_gradient([&](const auto& x) { return mean(mul(x, x)); }, a).ok());
    CHECK(check_gradient([&](const auto& x) { return weighted_sum(add_scalar(mul_scalar(x, 1.7), -0.3), seed); }, a)
              .ok());
    CHECK(check_gradient([&](const auto& x) { return weighted_sum(rsub_scalar(x, 2.0), seed); }, a).ok());
    // per-channel broadcast, gradient reduced back onto the [C] operand
    const auto fm = random_tensor(rng, {2, 3, 2, 2});
    CHECK(check_gradient([&](const auto& x) { return weighted_sum(mul(fm, x), seed); },
                         random_tensor(rng, {3}))
              .ok());
  }
}

TEST_CASE("layer gradients match finite differences over 100 seeds") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(1000 + seed);
    CAPTURE(seed);
    const auto x = random_tensor(rng, {1, 2, 5, 5});
    const auto k = random_tensor(rng, {3, 2, 3, 3});
    const auto b = random_tensor(rng, {3});
    CHECK(check_gradient([&](const auto& t) { return weighted_sum(conv2d(t, k, b, 1, 1), seed); }, x).ok());
    CHECK(check_gradient([&](const auto& t) { return weighted_sum(conv2d(x, t, b, 1, 1), seed); }, k).ok());
    CHECK(check_gradient([&](const auto& t) { return weighted_sum(conv2d(x, k, t, 1, 1), seed); }, b).ok());
    CHECK(check_gradient([&](const auto& t) { return weighted_sum(conv2d(t, k, b, 2, 1), seed); }, x).ok());

    const auto u = random_tensor(rng, {1, 1, 2, 3});
    CHECK(check_gradient([&](const auto& t) { return weighted_sum(upsample_bilinear2x(t), seed); }, u).ok());

    const auto p = random_tensor(rng, {1, 3, 2, 2});
    CHECK(check_gradient(
              [&](const auto& t) {
                const Tensor<double> parts[] = {t, p};
                return weighted_sum(concat_channels<double>(parts), seed);
              },
              random_tensor(rng, {1, 2, 2, 2}))
              .ok());
    CHECK(check_gradient([&](const auto& t) { return weighted_sum(slice_channels(t, 1, 2), seed); }, p).ok());
    CHECK(check_gradient([&](const auto& t) { return weighted_sum(box_filter(t, 3), seed); },
                         random_tensor(rng, {1, 2, 4, 5}))
              .ok());

    // composite conv -> sigmoid -> mean
    CHECK(check_gradient([&](const auto& t) { return mean(sigmoid(conv2d(t, k, b, 1, 1))); }, x).ok());
  }
}

TEST_CASE("backward is deterministic and seeded data is reproducible") {
  auto run = [] {
    Rng rng(42);
    const auto x = random_tensor(rng, {1, 2, 6, 6});
    const auto k = random_tensor(rng, {2, 2, 3, 3});
    Tape<double> tape;
    const auto leaf = tape.leaf(k);
    tape.backward(mean(sigmoid(conv2d(x, leaf, Tensor<double>::zeros({2}), 1, 1))));
    return tape.grad(leaf);
  };
  CHECK(run() == run());
  Rng a(9), b(9);
  CHECK(values(random_tensor(a, {4, 4})) == values(random_tensor(b, {4, 4})));
}

TEST_CASE("forward-mode tangents flow through reverse-mode gradients") {
  // f(x) = sum(x^3) → ∂f/∂x = 3x², and its directional derivative along v is 6x·v.
  const std::vector<double> x0{0.5, -1.5, 2.0};
  const std::vector<double> v{1.0, 0.5, -2.0};
  std::vector<Dual> xd;
  for (std::size_t i = 0; i < 3; ++i) xd.emplace_back(x0[i], v[i]);
  Tape<Dual> tape;
  const auto x = tape.leaf(Tensor<Dual>(Shape{3}, xd));
  tape.backward(sum(mul(x, mul(x, x))));
  const auto g = tape.grad(x);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(g[i].v == doctest::Approx(3.0 * x0[i] * x0[i]));
    CHECK(g[i].d == doctest::Approx(6.0 * x0[i] * v[i]));
  }
}
