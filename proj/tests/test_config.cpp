#include "doctest.h"
#include "omla/config.hpp"
#include "omla/error.hpp"

using namespace omla;

TEST_CASE("defaults") {
  const ExperimentConfig c;
  CHECK(c.get_int("height") == 32);
  CHECK(c.get_int("width") == 64);
  CHECK(c.get_double("meta_lr") == 1e-7);
  CHECK(c.get_int("pretrain_epochs") == 200);
  CHECK(c.get_int("meta_K") == 8);
  CHECK(c.get_int("meta_T_eval") == 3);
  CHECK(c.get_double("depth_cap") == 50.0);
  CHECK(c.get_string("method") == "omla");
  CHECK(c.get_int_list("channels") == std::vector<int>{16, 32, 48, 64});
  for (const ConfigKey& k : config_keys()) CHECK_NOTHROW(c.raw(k.name));
  CHECK(config_help().find("meta_lambda_theta") != std::string::npos);
}

TEST_CASE("parsing") {
  const auto c = ExperimentConfig::parse("# comment\nseed = 9\n  width=32 # trailing\n\nmethod = ofda\nverbose = true\n", "t.cfg");
  CHECK(c.get_uint("seed") == 9);
  CHECK(c.get_int("width") == 32);
  CHECK(c.get_string("method") == "ofda");
  CHECK(c.get_bool("verbose"));
  CHECK(ExperimentConfig::parse(c.dump()).dump() == c.dump());

  try {
    ExperimentConfig::parse("seed = 1\nbogus = 2\n", "t.cfg");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("t.cfg:2") != std::string::npos);
  }
  CHECK_THROWS_AS(ExperimentConfig::parse("width = wide\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("just a line\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("channels = 1,x\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::load("/nonexistent/omla.cfg"), ConfigError);
  ExperimentConfig d;
  CHECK_THROWS_AS(d.set("nope", "1"), ConfigError);
  CHECK_THROWS_AS(d.set("seed", "-1"), ConfigError);
}

TEST_CASE("builders") {
  ExperimentConfig c;
  CHECK(net_config(c).d_max == 48.0);
  c.set("d_max", "20");
  CHECK(net_config(c).d_max == 20.0);
  c.set("width", "30");
  CHECK_THROWS_AS(net_config(c), ConfigError);
  c.set("width", "64");

  const auto o = online_options(c, "meta");
  CHECK(o.method.use_meta_lr);
  CHECK_FALSE(o.method.use_ofda);
  CHECK(o.meta_lr == 1e-7);
  CHECK_THROWS(online_options(c, "sgd"));

  const auto m = meta_config(c);
  CHECK(m.K == 8);
  CHECK(m.N_adapt == 4);
  CHECK(m.lambda_theta == 1e-5);
  CHECK(m.lambda_lambda == 1e-5);
  CHECK(m.gradient_mode == MetaGradientMode::kFirstOrder);
  CHECK(meta_config(c).seed != standard_config(c).seed);
  c.set("meta_gradient", "full_unroll");
  CHECK(meta_config(c).gradient_mode == MetaGradientMode::kFullUnroll);

  const auto s = standard_config(c);
  CHECK(s.lr1 == 1e-4);
  CHECK(s.lr2 == 5e-5);
  CHECK(domain_config(c, "source") != domain_config(c, "target"));
  CHECK_THROWS(domain_config(c, "other"));
}
