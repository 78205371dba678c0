#include "omla/omla.h"

#include <algorithm>
#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "omla/config.hpp"
#include "omla/error.hpp"
#include "omla/pipeline.hpp"

struct omla_config {
  omla::ExperimentConfig cfg;
};

namespace {

thread_local std::string g_last_error;

omla_status code_of(omla::ErrorKind k) {
  switch (k) {
    case omla::ErrorKind::kShape: return OMLA_ERR_SHAPE;
    case omla::ErrorKind::kContract: return OMLA_ERR_CONTRACT;
    case omla::ErrorKind::kFormat: return OMLA_ERR_FORMAT;
    case omla::ErrorKind::kUnsupportedVersion: return OMLA_ERR_UNSUPPORTED_VERSION;
    case omla::ErrorKind::kConfig: return OMLA_ERR_CONFIG;
    case omla::ErrorKind::kIo: return OMLA_ERR_IO;
    case omla::ErrorKind::kLayout: return OMLA_ERR_LAYOUT;
  }
  return OMLA_ERR_INTERNAL;
}

template <class F>
omla_status guard(F&& f) {
  try {
    f();
    g_last_error.clear();
    return OMLA_OK;
  } catch (const omla::Error& e) {
    g_last_error = e.what();
    return code_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return OMLA_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return OMLA_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return OMLA_ERR_INTERNAL;
  }
}

omla_status invalid(const char* what) {
  g_last_error = std::string(what) + " must not be NULL";
  return OMLA_ERR_INVALID_ARGUMENT;
}

std::string opt(const char* s) { return s ? s : ""; }

}  // namespace

extern "C" {

const char* omla_version(void) { return "1.0.0"; }

const char* omla_status_name(omla_status s) {
  switch (s) {
    case OMLA_OK: return "ok";
    case OMLA_ERR_CONFIG: return "config";
    case OMLA_ERR_IO: return "io";
    case OMLA_ERR_FORMAT: return "format";
    case OMLA_ERR_UNSUPPORTED_VERSION: return "unsupported-version";
    case OMLA_ERR_LAYOUT: return "layout";
    case OMLA_ERR_CONTRACT: return "contract";
    case OMLA_ERR_SHAPE: return "shape";
    case OMLA_ERR_INVALID_ARGUMENT: return "invalid-argument";
    case OMLA_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* omla_last_error(void) { return g_last_error.c_str(); }

omla_status omla_config_new(omla_config** out) {
  if (!out) return invalid("out");
  *out = nullptr;
  return guard([&] { *out = new omla_config{}; });
}

omla_status omla_config_load(const char* path, omla_config** out) {
  if (!out) return invalid("out");
  *out = nullptr;
  if (!path) return invalid("path");
  return guard([&] { *out = new omla_config{omla::ExperimentConfig::load(path)}; });
}

omla_status omla_config_set(omla_config* config, const char* key, const char* value) {
  if (!config) return invalid("config");
  if (!key) return invalid("key");
  if (!value) return invalid("value");
  return guard([&] { config->cfg.set(key, value); });
}

omla_status omla_config_get(const omla_config* config, const char* key, char* buf, size_t buflen, size_t* needed) {
  if (!config) return invalid("config");
  if (!key) return invalid("key");
  if (!buf && buflen > 0) return invalid("buf");
  return guard([&] {
    const std::string& v = config->cfg.raw(key);
    if (needed) *needed = v.size();
    if (buflen > 0) {
      const std::size_t n = std::min(v.size(), buflen - 1);
      std::memcpy(buf, v.data(), n);
      buf[n] = '\0';
    }
  });
}

void omla_config_free(omla_config* config) { delete config; }

const char* omla_config_help(void) {
  static const std::string help = omla::config_help();
  return help.c_str();
}

omla_status omla_gen_data(const omla_config* config, const char* out_dir) {
  if (!config) return invalid("config");
  if (!out_dir) return invalid("out_dir");
  return guard([&] { omla::cmd_gen_data(config->cfg, out_dir); });
}

omla_status omla_pretrain(const omla_config* config, const char* mode, const char* data_dir,
                          const char* init_checkpoint, const char* out_checkpoint) {
  if (!config) return invalid("config");
  if (!mode) return invalid("mode");
  if (!data_dir) return invalid("data_dir");
  if (!out_checkpoint) return invalid("out_checkpoint");
  return guard([&] { omla::cmd_pretrain(config->cfg, mode, data_dir, opt(init_checkpoint), out_checkpoint); });
}

omla_status omla_adapt(const omla_config* config, const char* checkpoint, const char* video, const char* method,
                       const char* out_trace) {
  if (!config) return invalid("config");
  if (!checkpoint) return invalid("checkpoint");
  if (!video) return invalid("video");
  if (!method) return invalid("method");
  if (!out_trace) return invalid("out_trace");
  return guard([&] { omla::cmd_adapt(config->cfg, checkpoint, video, method, out_trace); });
}

omla_status omla_eval(const omla_config* config, const char* trace, const char* video, const char* out_report) {
  if (!config) return invalid("config");
  if (!trace) return invalid("trace");
  if (!video) return invalid("video");
  if (!out_report) return invalid("out_report");
  return guard([&] { omla::cmd_eval(config->cfg, trace, video, out_report); });
}

omla_status omla_report(const omla_config* config, const char* report_dir, const char* out_dir) {
  if (!config) return invalid("config");
  if (!report_dir) return invalid("report_dir");
  if (!out_dir) return invalid("out_dir");
  return guard([&] { omla::cmd_report(config->cfg, report_dir, out_dir); });
}

}  // extern "C"
