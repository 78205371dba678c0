// Command-line front end over the C API.
#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "omla/omla.h"

namespace {

int fail(omla_status s) {
  std::fprintf(stderr, "omla: error[%s]: %s\n", omla_status_name(s), omla_last_error());
  return static_cast<int>(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online stereo adaptation testbed: data generation, pre-training, adaptation, evaluation, reports"};
  app.footer(std::string("\n") + omla_config_help());
  app.require_subcommand(1);

  std::string config_path;
  long long seed = -1;
  int threads = 0;
  app.add_option("--config", config_path, "experiment config file (key = value)")->required();
  app.add_option("--seed", seed, "overrides the config seed")->check(CLI::NonNegativeNumber);
  app.add_option("--threads", threads, "overrides the config thread count")->check(CLI::PositiveNumber);

  std::string out, data, mode = "standard", init, checkpoint, video, method, trace, reports;

  auto* gen = app.add_subcommand("gen-data", "render the source and target video sets");
  gen->add_option("--out", out, "output directory (default: config data_dir)");

  auto* pre = app.add_subcommand("pretrain", "standard or meta pre-training on the source videos");
  pre->add_option("--mode", mode, "standard or meta")->check(CLI::IsMember({"standard", "meta"}));
  pre->add_option("--data", data, "dataset directory (default: config data_dir)");
  pre->add_option("--init", init, "starting checkpoint for meta mode (default: run standard pre-training first)");
  pre->add_option("--out", out, "output checkpoint")->required();

  auto* adapt = app.add_subcommand("adapt", "online adaptation of a checkpoint on one video");
  adapt->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  adapt->add_option("--video", video, "video file (.omld)")->required();
  adapt->add_option("--method", method, "naive, meta, ofda or omla (default: config method)");
  adapt->add_option("--out", out, "trace CSV; predictions go to <out>.pred")->required();

  auto* eval = app.add_subcommand("eval", "score an adaptation trace against ground truth");
  eval->add_option("--trace", trace, "trace CSV written by adapt")->required();
  eval->add_option("--video", video, "video file the trace was produced on")->required();
  eval->add_option("--out", out, "report CSV")->required();

  auto* report = app.add_subcommand("report", "summary table, curves and plots over report CSVs");
  report->add_option("--reports", reports, "directory of report CSVs")->required();
  report->add_option("--out", out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  omla_config* cfg = nullptr;
  omla_status s = omla_config_load(config_path.c_str(), &cfg);
  if (s != OMLA_OK) return fail(s);
  if (seed >= 0 && (s = omla_config_set(cfg, "seed", std::to_string(seed).c_str())) != OMLA_OK) {
    omla_config_free(cfg);
    return fail(s);
  }
  if (threads > 0 && (s = omla_config_set(cfg, "threads", std::to_string(threads).c_str())) != OMLA_OK) {
    omla_config_free(cfg);
    return fail(s);
  }
  auto config_value = [&](const char* key) {
    char buf[4096];
    size_t needed = 0;
    omla_config_get(cfg, key, buf, sizeof buf, &needed);
    return std::string(buf);
  };

  if (*gen) {
    s = omla_gen_data(cfg, (out.empty() ? config_value("data_dir") : out).c_str());
  } else if (*pre) {
    s = omla_pretrain(cfg, mode.c_str(), (data.empty() ? config_value("data_dir") : data).c_str(), init.c_str(),
                      out.c_str());
  } else if (*adapt) {
    s = omla_adapt(cfg, checkpoint.c_str(), video.c_str(), (method.empty() ? config_value("method") : method).c_str(),
                   out.c_str());
  } else if (*eval) {
    s = omla_eval(cfg, trace.c_str(), video.c_str(), out.c_str());
  } else if (*report) {
    s = omla_report(cfg, reports.c_str(), out.c_str());
  }
  omla_config_free(cfg);
  return s == OMLA_OK ? 0 : fail(s);
}
