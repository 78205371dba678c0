#include <cmath>

#include "doctest.h"
#include "omla/adapt.hpp"
#include "omla/data.hpp"
#include "omla/error.hpp"
#include "test_support.hpp"

using namespace omla;
using omla::testing::ScalarModel;
using omla::testing::toy_stereo_model;
using omla::testing::engine_lr_grad;
using omla::testing::fd_lr_grad;
using omla::testing::tolerance_ratio;

namespace {

// Scalar Adam written out longhand.
struct ScalarAdam {
  double m = 0, v = 0;
  int t = 0;
  double direction(double g) {
    ++t;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    return mh / (std::sqrt(vh) + 1e-8);
  }
};

std::vector<StereoFrame> constant_stream(double x, double y, int n) {
  return std::vector<StereoFrame>(static_cast<std::size_t>(n), ScalarModel::sample(x, y));
}

OnlineOptions options_for(AdaptMethod m, double meta_lr = 1e-7) {
  OnlineOptions o;
  o.method = m;
  o.meta_lr = meta_lr;
  return o;
}

std::vector<StereoFrame> toy_video(int length, std::uint64_t seed) {
  return generate_video(target_domain(), length, 8, 16, seed).frames;
}

}  // namespace

TEST_CASE("adam_step") {
  SUBCASE("zero gradient is a fixed point") {
    const std::vector<double> th{1.0, -2.0}, g{0.0, 0.0}, lr{0.1, 0.1};
    const auto r = adam_step<double>(th, g, lr, AdamState<double>::fresh(2));
    CHECK(r.theta == th);
    CHECK(r.state.m1 == std::vector<double>{0.0, 0.0});
    CHECK(r.state.m2 == std::vector<double>{0.0, 0.0});
    CHECK(r.state.step == 1);
  }
  SUBCASE("first scalar step") {
    const std::vector<double> th{1.0}, g{2.0}, lr{0.1};
    const auto r = adam_step<double>(th, g, lr, AdamState<double>::fresh(1));
    ScalarAdam ref;
    CHECK(r.theta[0] == doctest::Approx(1.0 - 0.1 * ref.direction(2.0)).epsilon(1e-15));
    CHECK(r.theta[0] == doctest::Approx(0.9).epsilon(1e-8));
  }
  SUBCASE("doubling lr doubles the first update") {
    const std::vector<double> th{0.3, 0.7}, g{1.5, -0.2};
    const auto a = adam_step<double>(th, g, std::vector<double>{0.01, 0.02}, AdamState<double>::fresh(2));
    const auto b = adam_step<double>(th, g, std::vector<double>{0.02, 0.04}, AdamState<double>::fresh(2));
    for (std::size_t i = 0; i < 2; ++i) CHECK((b.theta[i] - th[i]) == doctest::Approx(2 * (a.theta[i] - th[i])).epsilon(1e-14));
  }
  SUBCASE("matches the scalar oracle over a gradient sequence") {
    Rng rng(3);
    AdamState<double> st = AdamState<double>::fresh(1);
    ScalarAdam ref;
    double theta = 0.4, want = 0.4;
    for (int k = 0; k < 50; ++k) {
      const double g = rng.uniform(-3, 3);
      const std::vector<double> th{theta}, gv{g}, lr{0.05};
      auto r = adam_step<double>(th, gv, lr, std::move(st));
      st = std::move(r.state);
      theta = r.theta[0];
      want -= 0.05 * ref.direction(g);
      CHECK(std::abs(theta - want) <= 1e-14);
    }
    CHECK(st.step == 50);
  }
  SUBCASE("length mismatch") {
    const std::vector<double> a{1.0, 2.0}, b{1.0};
    CHECK_THROWS_AS(adam_step<double>(a, b, a, AdamState<double>::fresh(2)), ContractError);
    CHECK_THROWS_AS(adam_step<double>(a, a, b, AdamState<double>::fresh(2)), ContractError);
    AdamState<double> st = AdamState<double>::fresh(3);
    CHECK_THROWS_AS(adam_direction<double>(st, a), ContractError);
  }
}

TEST_CASE("AdaptMethod names") {
  for (const char* n : {"naive", "meta", "ofda", "omla"}) CHECK(AdaptMethod::parse(n).name() == n);
  CHECK(AdaptMethod::parse("omla").use_ofda);
  CHECK(AdaptMethod::parse("meta").use_meta_lr);
  CHECK_FALSE(AdaptMethod::parse("naive").use_meta_lr);
  CHECK_THROWS_AS(AdaptMethod::parse("sgd"), ContractError);
}

TEST_CASE("scalar model traces") {
  const ScalarModel model;
  const auto frames = constant_stream(1.0, 2.0, 3);
  SUBCASE("naive is plain Adam descent") {
    const auto tr = omla::omla(model, frames, std::vector<double>{0.5}, {}, std::vector<double>{0.1}, options_for(AdaptMethod::naive()));
    ScalarAdam ref;
    double th = 0.5;
    REQUIRE(tr.frames.size() == 3);
    for (int t = 0; t < 3; ++t) {
      const double r = th - 2.0;
      CHECK(tr.frames[static_cast<std::size_t>(t)].loss == doctest::Approx(r * r).epsilon(1e-15));
      CHECK(tr.frames[static_cast<std::size_t>(t)].disp_left[0] == doctest::Approx(th).epsilon(1e-15));
      th -= 0.1 * ref.direction(2.0 * r);
    }
    CHECK(std::abs(tr.final_theta[0] - th) <= 1e-15);
    CHECK(tr.final_lambda[0] == 0.1);
  }
  SUBCASE("learned step size follows the one-step hypergradient") {
    const double meta_lr = 1e-3;
    const auto tr = omla::omla(model, frames, std::vector<double>{0.5}, {}, std::vector<double>{0.1},
                         options_for(AdaptMethod::meta(), meta_lr));
    ScalarAdam adam, meta;
    double th = 0.5, lam = 0.1, prev_u = 0.0;
    for (int t = 0; t < 3; ++t) {
      const double g = 2.0 * (th - 2.0);
      if (t > 0) lam -= meta_lr * meta.direction(-g * prev_u);
      CHECK(std::abs(tr.frames[static_cast<std::size_t>(t)].lr_mean - lam) <= 1e-15);
      prev_u = adam.direction(g);
      th -= lam * prev_u;
    }
    CHECK(std::abs(tr.final_theta[0] - th) <= 1e-15);
    CHECK(std::abs(tr.final_lambda[0] - lam) <= 1e-15);
    CHECK(tr.final_lambda[0] > 0.1);  // still far from the optimum, so the step grows
  }
  SUBCASE("zero loss leaves everything unchanged") {
    const auto tr = omla::omla(model, frames, std::vector<double>{2.0}, {}, std::vector<double>{0.1},
                         options_for(AdaptMethod::omla(), 1e-2));
    for (const auto& f : tr.frames) {
      CHECK(f.loss == 0.0);
      CHECK(f.lr_min == 0.1);
    }
    CHECK(tr.final_theta[0] == 2.0);
    CHECK(tr.final_lambda[0] == 0.1);
  }
  SUBCASE("lambda never drops below the floor") {
    OnlineOptions o = options_for(AdaptMethod::meta(), 0.05);
    o.lr_floor = 0.02;
    // Alternating targets make the hypergradient push λ down.
    std::vector<StereoFrame> fr;
    for (int t = 0; t < 40; ++t) fr.push_back(ScalarModel::sample(1.0, t % 2 ? 3.0 : -3.0));
    const auto tr = omla::omla(model, fr, std::vector<double>{0.0}, {}, std::vector<double>{0.5}, o);
    bool touched = false;
    for (const auto& f : tr.frames) {
      CHECK(f.lr_min >= 0.02);
      touched |= f.lr_min == 0.02;
    }
    CHECK(touched);
  }
  SUBCASE("empty video and bad options") {
    CHECK_THROWS_AS(omla::omla(model, {}, std::vector<double>{0.0}, {}, std::vector<double>{0.1}, options_for(AdaptMethod::naive())),
                    ContractError);
    CHECK_THROWS_AS(omla::omla(model, frames, std::vector<double>{0.0}, {}, std::vector<double>{0.1}, options_for(AdaptMethod::meta(), -1.0)),
                    ContractError);
    CHECK_THROWS_AS(omla::omla(model, frames, std::vector<double>{0.0, 1.0}, {}, std::vector<double>{0.1}, options_for(AdaptMethod::naive())),
                    ContractError);
  }
}

TEST_CASE("method equivalences on the toy network") {
  const StereoModel model = toy_stereo_model();
  const auto frames = toy_video(6, 4);
  Checkpoint ck{"standard", model.net().layout(), model.net().init_params(7), {}, model.net().init_stats()};
  ck.lambda.assign(ck.theta.size(), 1e-3);

  SUBCASE("meta with meta_lr = 0 is bit-identical to naive") {
    OnlineOptions naive = options_for(AdaptMethod::naive(1e-3));
    OnlineOptions meta = options_for(AdaptMethod::meta(1e-3), 0.0);
    const auto a = run_method(model, frames, ck, naive);
    const auto b = run_method(model, frames, ck, meta);
    CHECK(a.final_theta == b.final_theta);
    for (std::size_t t = 0; t < a.frames.size(); ++t) {
      CHECK(a.frames[t].loss == b.frames[t].loss);
      CHECK(a.frames[t].disp_left == b.frames[t].disp_left);
    }
  }
  SUBCASE("ofda with a = 0 is bit-identical to naive") {
    OnlineOptions ofda = options_for(AdaptMethod::ofda(1e-3));
    ofda.blend_a = 0.0;
    const auto a = run_method(model, frames, ck, options_for(AdaptMethod::naive(1e-3)));
    const auto b = run_method(model, frames, ck, ofda);
    CHECK(a.final_theta == b.final_theta);
    CHECK(a.final_stats == b.final_stats);
    for (std::size_t t = 0; t < a.frames.size(); ++t) CHECK(a.frames[t].disp_left == b.frames[t].disp_left);
  }
  SUBCASE("all methods give full traces with finite losses") {
    for (const char* n : {"naive", "meta", "ofda", "omla"}) {
      const auto tr = run_method(model, frames, ck, options_for(AdaptMethod::parse(n, 1e-3)));
      CHECK(tr.frames.size() == frames.size());
      for (const auto& f : tr.frames) CHECK(std::isfinite(f.loss));
    }
  }
  SUBCASE("checkpoint with the wrong learning-rate length") {
    Checkpoint bad = ck;
    bad.lambda.pop_back();
    CHECK_THROWS_AS(run_method(model, frames, bad, options_for(AdaptMethod::omla())), LayoutError);
  }
  SUBCASE("identical inputs give identical traces") {
    const auto a = run_method(model, frames, ck, options_for(AdaptMethod::omla(), 1e-4));
    const auto b = run_method(model, frames, ck, options_for(AdaptMethod::omla(), 1e-4));
    CHECK(a.final_theta == b.final_theta);
    CHECK(a.final_lambda == b.final_lambda);
    for (std::size_t t = 0; t < a.frames.size(); ++t) {
      CHECK(a.frames[t].loss == b.frames[t].loss);
      CHECK(a.frames[t].disp_left == b.frames[t].disp_left);
      CHECK(a.frames[t].lr_mean == b.frames[t].lr_mean);
    }
  }
}

TEST_CASE("learning-rate gradient against finite differences on the toy network") {
  const StereoModel model = toy_stereo_model();
  REQUIRE(model.parameter_count() <= 50);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto frames = toy_video(3, 100 + seed);
    const auto theta0 = model.net().init_params(seed);
    const auto stats0 = model.net().init_stats();
    const std::vector<double> lambda(theta0.size(), 1e-2);
    CAPTURE(seed);

    auto fd = [&](int t) { return fd_lr_grad(model, frames, theta0, stats0, lambda, t); };
    auto agree = [](const std::vector<double>& a, const std::vector<double>& b) { return tolerance_ratio(a, b, 1e-3, 1e-9); };

    // One-step unroll at t = 1, where it is the whole history.
    const auto closed = engine_lr_grad(model, frames, theta0, stats0, lambda, 1, 1);
    const auto fd1 = fd(1);
    CHECK(agree(closed, fd1) <= 1.0);
    // A two-step window collapses to the closed form at t = 1.
    const auto replay1 = engine_lr_grad(model, frames, theta0, stats0, lambda, 1, 2);
    for (std::size_t i = 0; i < closed.size(); ++i) CHECK(std::abs(closed[i] - replay1[i]) <= 1e-12 * (1 + std::abs(closed[i])));
    // At t = 2 the two-step replay differentiates through both updates.
    CHECK(agree(engine_lr_grad(model, frames, theta0, stats0, lambda, 2, 2), fd(2)) <= 1.0);
  }
}

TEST_CASE("stored pre-update state reproduces each prediction") {
  const StereoModel model = toy_stereo_model();
  const auto frames = toy_video(8, 12);
  Checkpoint ck{"meta", model.net().layout(), model.net().init_params(3), {}, model.net().init_stats()};
  ck.lambda.assign(ck.theta.size(), 1e-3);
  for (const char* n : {"naive", "omla"}) {
    OnlineOptions o = options_for(AdaptMethod::parse(n, 1e-3), 1e-4);
    o.keep_states = true;
    const auto tr = run_method(model, frames, ck, o);
    const BNMode mode = o.method.use_ofda ? BNMode::blend(o.blend_a) : BNMode::frozen();
    for (std::size_t t = 0; t < frames.size(); ++t) {
      const auto ev = model.evaluate_frame<double>(tr.frames[t].theta, tr.frames[t].stats, frames[t], mode, false);
      CHECK(ev.disp_left == tr.frames[t].disp_left);
      CHECK(ev.disp_right == tr.frames[t].disp_right);
      CHECK(ev.loss == tr.frames[t].loss);
    }
  }
}

TEST_CASE("adaptation lowers the loss on a stationary video") {
  const StereoModel model(NetConfig{}, LossConfig{});
  DomainSpec spec = target_domain();
  spec.motion = 0.0;
  int wins = 0;
  const int seeds = 10;
  for (int s = 0; s < seeds; ++s) {
    const auto frames = generate_video(spec, 21, 32, 64, 900 + static_cast<std::uint64_t>(s)).frames;
    Checkpoint ck{"standard", model.net().layout(), model.net().init_params(static_cast<std::uint64_t>(s)), {},
                  model.net().init_stats()};
    ck.lambda.assign(ck.theta.size(), 1e-4);
    OnlineOptions o = options_for(AdaptMethod::omla());
    o.keep_predictions = false;
    const auto tr = run_method(model, frames, ck, o);
    wins += tr.frames[20].loss < tr.frames[0].loss;
  }
  CHECK(wins >= 9);
}
