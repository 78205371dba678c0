#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "omla/omla.h"

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Config {
  omla_config* ptr = nullptr;
  Config() { REQUIRE(omla_config_new(&ptr) == OMLA_OK); }
  ~Config() { omla_config_free(ptr); }
  void set(const char* k, const char* v) { REQUIRE(omla_config_set(ptr, k, v) == OMLA_OK); }
};

}  // namespace

TEST_CASE("status names and version") {
  CHECK(std::strlen(omla_version()) > 0);
  CHECK(std::string(omla_status_name(OMLA_OK)) == "ok");
  CHECK(std::string(omla_status_name(OMLA_ERR_CONFIG)) == "config");
  CHECK(std::string(omla_status_name(OMLA_ERR_UNSUPPORTED_VERSION)) == "unsupported-version");
  CHECK(std::strstr(omla_config_help(), "seed") != nullptr);
}

TEST_CASE("configuration handles") {
  Config c;
  char buf[8];
  size_t needed = 0;
  CHECK(omla_config_get(c.ptr, "method", buf, sizeof buf, &needed) == OMLA_OK);
  CHECK(std::string(buf) == "omla");
  CHECK(needed == 4);
  CHECK(omla_config_get(c.ptr, "channels", buf, 4, &needed) == OMLA_OK);
  CHECK(std::string(buf) == "16,");
  CHECK(needed == std::strlen("16,32,48,64"));
  CHECK(omla_config_get(c.ptr, "channels", nullptr, 0, &needed) == OMLA_OK);

  CHECK(omla_config_set(c.ptr, "nope", "1") == OMLA_ERR_CONFIG);
  CHECK(std::string(omla_last_error()).find("nope") != std::string::npos);
  CHECK(omla_config_set(c.ptr, "width", "x") == OMLA_ERR_CONFIG);
  CHECK(omla_config_set(nullptr, "width", "1") == OMLA_ERR_INVALID_ARGUMENT);
  CHECK(omla_config_get(c.ptr, "method", nullptr, 4, &needed) == OMLA_ERR_INVALID_ARGUMENT);

  omla_config* out = nullptr;
  CHECK(omla_config_load("/nonexistent/x.cfg", &out) == OMLA_ERR_CONFIG);
  CHECK(out == nullptr);
  CHECK(omla_config_new(nullptr) == OMLA_ERR_INVALID_ARGUMENT);
}

TEST_CASE("pipeline through the C API") {
  const fs::path dir = fs::temp_directory_path() / "omla_test_capi";
  fs::remove_all(dir);
  const std::string d = dir.string();
  Config c;
  for (auto [k, v] : {std::pair{"height", "8"}, {"width", "16"}, {"channels", "4,8"}, {"source_videos", "2"},
                      {"source_length", "8"}, {"target_videos", "2"}, {"target_length", "6"},
                      {"pretrain_epochs", "1"}, {"meta_epochs", "1"}, {"meta_K", "2"}})
    c.set(k, v);

  REQUIRE(omla_gen_data(c.ptr, (d + "/data").c_str()) == OMLA_OK);
  CHECK(fs::exists(dir / "data/source/src_000.omld"));
  CHECK(fs::exists(dir / "data/target/tgt_001.omld"));

  REQUIRE(omla_pretrain(c.ptr, "standard", (d + "/data").c_str(), nullptr, (d + "/std.omlc").c_str()) == OMLA_OK);
  REQUIRE(omla_pretrain(c.ptr, "meta", (d + "/data").c_str(), (d + "/std.omlc").c_str(), (d + "/meta.omlc").c_str()) ==
          OMLA_OK);
  CHECK(omla_pretrain(c.ptr, "sideways", (d + "/data").c_str(), nullptr, (d + "/x.omlc").c_str()) != OMLA_OK);

  const std::string video = d + "/data/target/tgt_000.omld";
  REQUIRE(omla_adapt(c.ptr, (d + "/meta.omlc").c_str(), video.c_str(), "omla", (d + "/trace.csv").c_str()) == OMLA_OK);
  CHECK(fs::exists(dir / "trace.csv.pred"));
  REQUIRE(fs::create_directories(dir / "reports"));
  REQUIRE(omla_eval(c.ptr, (d + "/trace.csv").c_str(), video.c_str(), (d + "/reports/r.csv").c_str()) == OMLA_OK);
  REQUIRE(omla_report(c.ptr, (d + "/reports").c_str(), (d + "/out").c_str()) == OMLA_OK);
  CHECK(slurp(dir / "out/summary.csv").find("meta,omla") != std::string::npos);

  CHECK(omla_adapt(c.ptr, (d + "/missing.omlc").c_str(), video.c_str(), "omla", (d + "/t2.csv").c_str()) == OMLA_ERR_IO);
  CHECK(omla_adapt(c.ptr, (d + "/meta.omlc").c_str(), video.c_str(), "sgd", (d + "/t2.csv").c_str()) == OMLA_ERR_CONFIG);
  std::ofstream(dir / "bad.omlc") << "garbage";
  CHECK(omla_adapt(c.ptr, (d + "/bad.omlc").c_str(), video.c_str(), "omla", (d + "/t2.csv").c_str()) == OMLA_ERR_FORMAT);
  c.set("channels", "4,4");
  CHECK(omla_adapt(c.ptr, (d + "/meta.omlc").c_str(), video.c_str(), "omla", (d + "/t2.csv").c_str()) == OMLA_ERR_LAYOUT);
  fs::remove_all(dir);
}
