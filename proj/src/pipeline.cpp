#include "omla/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <tuple>

#include "omla/binio.hpp"
#include "omla/error.hpp"
#include "omla/parallel.hpp"
#include "omla/random.hpp"

namespace fs = std::filesystem;

namespace omla {

namespace {

void log(const ExperimentConfig& c, const std::string& msg) {
  if (c.get_bool("verbose")) std::cerr << "[omla] " << msg << "\n";
}

std::string stem(const std::string& path) { return fs::path(path).stem().string(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

StereoModel make_model(const ExperimentConfig& c) { return StereoModel(net_config(c), loss_config(c)); }

std::vector<StereoVideo> load_videos(const std::string& dir) {
  const auto files = list_files(dir, ".omld");
  if (files.empty()) throw IoError("no .omld videos in '" + dir + "'");
  std::vector<StereoVideo> videos;
  for (const auto& f : files) videos.push_back(load_video(f));
  return videos;
}

void check_video_size(const ExperimentConfig& c, const StereoVideo& v, const std::string& what) {
  if (v.height() != c.get_int("height") || v.width() != c.get_int("width")) {
    throw ConfigError(what + " is " + std::to_string(v.height()) + "x" + std::to_string(v.width()) +
                      " but the config expects " + c.raw("height") + "x" + c.raw("width"));
  }
}

Checkpoint fresh_checkpoint(const ExperimentConfig& c, const StereoModel& model) {
  Checkpoint ck;
  ck.origin = "init";
  ck.layout = model.net().layout();
  ck.theta = model.net().init_params(derive_seed_for(c.get_uint("seed"), "init"));
  ck.lambda.assign(ck.theta.size(), c.get_double("lambda_init"));
  ck.stats = model.net().init_stats();
  return ck;
}

Checkpoint run_standard(const ExperimentConfig& c, const StereoModel& model, const std::vector<StereoVideo>& videos) {
  std::vector<StereoFrame> frames;
  for (const auto& v : videos) frames.insert(frames.end(), v.frames.begin(), v.frames.end());
  const StandardConfig sc = standard_config(c);
  log(c, "standard pre-training: " + std::to_string(frames.size()) + " frames, " + std::to_string(sc.epochs) +
             " epochs");
  StandardResult r = standard_pretrain(model, frames, fresh_checkpoint(c, model), sc);
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
    log(c, "  epoch " + std::to_string(e) + " loss " + format_double(r.epoch_loss[e]));
  }
  r.checkpoint.origin = "standard";
  return r.checkpoint;
}

}  // namespace

std::vector<std::string> list_files(const std::string& dir, const std::string& extension) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("'" + dir + "' is not a directory");
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir, ec)) {
    if (e.is_regular_file() && e.path().extension() == extension) out.push_back(e.path().string());
  }
  if (ec) throw IoError("cannot list '" + dir + "': " + ec.message());
  std::sort(out.begin(), out.end());
  return out;
}

void cmd_gen_data(const ExperimentConfig& c, const std::string& out_dir) {
  const int H = static_cast<int>(c.get_int("height"));
  const int W = static_cast<int>(c.get_int("width"));
  net_config(c);  // validates the size against the network depth
  const double fB = c.get_double("focal_times_baseline");
  const std::uint64_t seed = c.get_uint("seed");
  struct Job {
    std::string path;
    DomainSpec spec;
    int length;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& [prefix, dir, tag] : {std::tuple{"source", "source", "src"}, std::tuple{"target", "target", "tgt"}}) {
    const int count = static_cast<int>(c.get_int(std::string(prefix) + "_videos"));
    const int length = static_cast<int>(c.get_int(std::string(prefix) + "_length"));
    if (count < 0 || length < 1) throw ConfigError(std::string(prefix) + "_videos/_length out of range");
    const DomainSpec spec = domain_config(c, prefix);
    const std::uint64_t base = derive_seed_for(seed, prefix);
    for (int i = 0; i < count; ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "%s_%03d.omld", tag, i);
      jobs.push_back({(fs::path(out_dir) / dir / name).string(), spec, length, derive_seed(base, static_cast<std::uint64_t>(i))});
    }
  }
  parallel_for(jobs.size(), static_cast<int>(c.get_int("threads")), [&](std::size_t i) {
    const Job& j = jobs[i];
    save_video(j.path, generate_video(j.spec, j.length, H, W, j.seed, fB));
  });
  log(c, "wrote " + std::to_string(jobs.size()) + " videos to " + out_dir);
}

void cmd_pretrain(const ExperimentConfig& c, const std::string& mode, const std::string& data_dir,
                  const std::string& init_checkpoint, const std::string& out_checkpoint) {
  if (mode != "standard" && mode != "meta") {
    throw ConfigError("unknown pre-training mode '" + mode + "' (expected standard or meta)");
  }
  const StereoModel model = make_model(c);
  const std::vector<StereoVideo> videos = load_videos((fs::path(data_dir) / "source").string());
  for (const auto& v : videos) check_video_size(c, v, "source video");

  Checkpoint ck;
  if (mode == "standard") {
    ck = run_standard(c, model, videos);
  } else {
    Checkpoint init;
    if (init_checkpoint.empty()) {
      init = run_standard(c, model, videos);
    } else {
      init = load_checkpoint(init_checkpoint);
      check_compatible(init, model.net());
    }
    const MetaConfig mc = meta_config(c);
    log(c, "meta pre-training: " + std::to_string(videos.size()) + " videos, " + std::to_string(mc.epochs) + " epochs");
    MetaPretrainResult r = meta_pretrain(model, videos, init, mc);
    for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
      log(c, "  epoch " + std::to_string(e) + " eval loss " + format_double(r.epoch_loss[e]));
    }
    ck = std::move(r.checkpoint);
    ck.origin = "meta";
  }
  save_checkpoint(out_checkpoint, ck);
  log(c, "wrote " + out_checkpoint);
}

void cmd_adapt(const ExperimentConfig& c, const std::string& checkpoint, const std::string& video_file,
               const std::string& method, const std::string& out_trace) {
  const StereoModel model = make_model(c);
  const Checkpoint ck = load_checkpoint(checkpoint);
  check_compatible(ck, model.net());
  const StereoVideo video = load_video(video_file);
  check_video_size(c, video, "video '" + video_file + "'");
  OnlineOptions opts = online_options(c, method);
  opts.keep_predictions = true;
  const OnlineTrace trace = run_method(model, video.frames, ck, opts);

  std::map<std::string, std::string> meta{{"method", opts.method.name()}, {"pretrain", ck.origin},
                                          {"video", stem(video_file)}};
  PredictionFile pred;
  pred.meta = meta;
  pred.height = video.height();
  pred.width = video.width();
  for (const FrameRecord& f : trace.frames) pred.disparity.push_back(f.disp_left);
  write_file_atomic(out_trace + ".pred", encode_predictions(pred));
  write_file_atomic(out_trace, trace_csv(trace_rows(trace), meta));
  log(c, "adapted " + stem(video_file) + " with " + opts.method.name() + ": final loss " +
             format_double(trace.frames.back().loss));
}

void cmd_eval(const ExperimentConfig& c, const std::string& trace, const std::string& video_file,
              const std::string& out_report) {
  const std::string text = read_file(trace);
  const ParsedCsv parsed = parse_csv(text, trace);
  const std::vector<FrameRow> rows = parse_trace_csv(text, trace);
  const PredictionFile pred = decode_predictions(read_file(trace + ".pred"), trace + ".pred");
  const StereoVideo video = load_video(video_file);
  if (pred.height != video.height() || pred.width != video.width()) {
    throw ContractError("predictions are " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                        " but the video is " + std::to_string(video.height()) + "x" + std::to_string(video.width()));
  }
  SequenceReport rep = build_report(rows, pred.disparity, video, eval_config(c));
  rep.meta = parsed.meta;
  rep.meta["video"] = stem(video_file);
  write_file_atomic(out_report, report_csv(rep));
}

// ---------------------------------------------------------------------------
// Report

std::vector<double> moving_average(const std::vector<double>& x, int w) {
  if (w <= 1 || static_cast<std::size_t>(w) > x.size()) return x;
  std::vector<double> out;
  out.reserve(x.size() - static_cast<std::size_t>(w) + 1);
  for (std::size_t i = 0; i + static_cast<std::size_t>(w) <= x.size(); ++i) {
    double s = 0.0;
    for (std::size_t k = i; k < i + static_cast<std::size_t>(w); ++k) s += x[k];
    out.push_back(s / w);
  }
  return out;
}

std::string svg_line_plot(const std::string& title, const std::string& ylabel, const std::vector<PlotSeries>& series) {
  const double Wd = 640, Ht = 400, L = 64, R = 150, T = 36, B = 44;
  std::size_t n = 0;
  double lo = 1e300, hi = -1e300;
  for (const auto& s : series) {
    n = std::max(n, s.y.size());
    for (double v : s.y) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (n == 0) lo = 0.0, hi = 1.0;
  if (hi - lo < 1e-12) hi = lo + 1.0;
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  auto X = [&](std::size_t i) { return L + (Wd - L - R) * (n > 1 ? static_cast<double>(i) / (n - 1) : 0.5); };
  auto Y = [&](double v) { return T + (Ht - T - B) * (1.0 - (v - lo) / (hi - lo)); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" viewBox=\"0 0 640 400\">\n";
  s += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  s += "<text x=\"" + fmt("%.1f", Wd / 2 - 40) + "\" y=\"22\" font-family=\"sans-serif\" font-size=\"14\">" + title +
       "</text>\n";
  s += "<rect x=\"" + fmt("%.1f", L) + "\" y=\"" + fmt("%.1f", T) + "\" width=\"" + fmt("%.1f", Wd - L - R) +
       "\" height=\"" + fmt("%.1f", Ht - T - B) + "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    s += "<text x=\"4\" y=\"" + fmt("%.1f", Y(v) + 4) + "\" font-family=\"sans-serif\" font-size=\"10\">" +
         fmt("%.3f", v) + "</text>\n";
  }
  s += "<text x=\"" + fmt("%.1f", L) + "\" y=\"" + fmt("%.1f", Ht - 12) +
       "\" font-family=\"sans-serif\" font-size=\"11\">frame (1.." + std::to_string(n) + ")  y: " + ylabel +
       "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* col = colors[k % 6];
    std::string pts;
    for (std::size_t i = 0; i < series[k].y.size(); ++i) {
      pts += fmt("%.2f", X(i)) + "," + fmt("%.2f", Y(series[k].y[i])) + " ";
    }
    if (!pts.empty()) pts.pop_back();
    s += "<polyline fill=\"none\" stroke=\"" + std::string(col) + "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    const double ly = T + 14 + 16 * static_cast<double>(k);
    s += "<line x1=\"" + fmt("%.1f", Wd - R + 10) + "\" y1=\"" + fmt("%.1f", ly) + "\" x2=\"" + fmt("%.1f", Wd - R + 30) +
         "\" y2=\"" + fmt("%.1f", ly) + "\" stroke=\"" + col + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + fmt("%.1f", Wd - R + 34) + "\" y=\"" + fmt("%.1f", ly + 4) +
         "\" font-family=\"sans-serif\" font-size=\"11\">" + series[k].name + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

namespace {

struct Entry {
  std::string video;
  SequenceReport report;
};

int method_rank(const std::string& m) {
  static const char* order[] = {"naive", "meta", "ofda", "omla"};
  for (int i = 0; i < 4; ++i) {
    if (m == order[i]) return i;
  }
  return 4;
}

int pretrain_rank(const std::string& p) {
  if (p == "standard") return 0;
  if (p == "meta") return 1;
  return 2;
}

using CellKey = std::pair<std::string, std::string>;  // (pretrain, method)

struct CellOrder {
  bool operator()(const CellKey& a, const CellKey& b) const {
    const auto ka = std::tuple(pretrain_rank(a.first), a.first, method_rank(a.second), a.second);
    const auto kb = std::tuple(pretrain_rank(b.first), b.first, method_rank(b.second), b.second);
    return ka < kb;
  }
};

std::vector<double> metric_values(const MetricsRecord& m) {
  return {m.rmse, m.abs_rel, m.sq_rel, m.rmse_log, m.delta1, m.delta2, m.delta3, m.d1_all, m.epe};
}
const char* const kMetricNames[] = {"rmse", "abs_rel", "sq_rel", "rmse_log", "delta1",
                                    "delta2", "delta3", "d1_all", "epe"};

std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.insert(0, w - s.size(), ' ');
  return s;
}

}  // namespace

void cmd_report(const ExperimentConfig& c, const std::string& report_dir, const std::string& out_dir) {
  const int window = static_cast<int>(c.get_int("smooth_window"));
  std::map<CellKey, std::vector<Entry>, CellOrder> cells;
  for (const auto& path : list_files(report_dir, ".csv")) {
    SequenceReport rep = parse_report_csv(read_file(path), path);
    const auto get = [&](const char* k) {
      const auto it = rep.meta.find(k);
      if (it == rep.meta.end()) throw FormatError(path + ": metadata line lacks '" + k + "'");
      return it->second;
    };
    CellKey key{get("pretrain"), get("method")};
    const std::string video = get("video");
    cells[key].push_back({video, std::move(rep)});
  }
  if (cells.empty()) throw IoError("no report CSVs in '" + report_dir + "'");
  for (auto& [key, entries] : cells) {
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.video < b.video; });
  }

  // Summary table.
  std::string csv = "pretrain,method,videos,all_loss";
  for (const char* m : kMetricNames) csv += std::string(",all_") + m;
  csv += ",last20_loss";
  for (const char* m : kMetricNames) csv += std::string(",last20_") + m;
  csv += "\n";
  std::string txt =
      "Online adaptation on held-out target videos (means over videos; ALL = full sequence, LAST20 = trailing 20%)\n\n";
  txt += pad("pretrain", 10) + pad("method", 8) + pad("videos", 8) + pad("RMSE", 9) + pad("AbsRel", 9) +
         pad("d<1.25", 9) + pad("D1-all", 9) + pad("EPE", 9) + " |" + pad("RMSE", 9) + pad("AbsRel", 9) +
         pad("d<1.25", 9) + pad("D1-all", 9) + pad("EPE", 9) + "\n";
  for (const auto& [key, entries] : cells) {
    std::vector<MetricsRecord> all, last;
    double all_loss = 0.0, last_loss = 0.0;
    for (const Entry& e : entries) {
      all.push_back(e.report.all.metrics);
      last.push_back(e.report.last20.metrics);
      all_loss += e.report.all.loss;
      last_loss += e.report.last20.loss;
    }
    const double n = static_cast<double>(entries.size());
    const MetricsRecord ma = mean_metrics(all), ml = mean_metrics(last);
    csv += key.first + "," + key.second + "," + std::to_string(entries.size()) + "," + format_double(all_loss / n);
    for (double v : metric_values(ma)) csv += "," + format_double(v);
    csv += "," + format_double(last_loss / n);
    for (double v : metric_values(ml)) csv += "," + format_double(v);
    csv += "\n";
    txt += pad(key.first, 10) + pad(key.second, 8) + pad(std::to_string(entries.size()), 8);
    for (const MetricsRecord* m : {&ma, &ml}) {
      txt += pad(fmt("%.4f", m->rmse), 9) + pad(fmt("%.4f", m->abs_rel), 9) + pad(fmt("%.4f", m->delta1), 9) +
             pad(fmt("%.3f", m->d1_all), 9) + pad(fmt("%.4f", m->epe), 9);
      if (m == &ma) txt += " |";
    }
    txt += "\n";
  }

  // Mean per-frame RMSE per cell, truncated to the shortest video.
  std::size_t frames = SIZE_MAX;
  for (const auto& [key, entries] : cells) {
    for (const Entry& e : entries) frames = std::min(frames, e.report.frames.size());
  }
  std::map<CellKey, std::vector<double>, CellOrder> mean_curve;
  for (const auto& [key, entries] : cells) {
    std::vector<double> curve(frames, 0.0);
    for (const Entry& e : entries) {
      for (std::size_t t = 0; t < frames; ++t) curve[t] += e.report.frames[t].metrics.rmse / entries.size();
    }
    mean_curve[key] = std::move(curve);
  }
  std::string curves = "frame_idx";
  for (const auto& [key, curve] : mean_curve) curves += "," + key.first + "_" + key.second;
  curves += "\n";
  for (std::size_t t = 0; t < frames; ++t) {
    curves += std::to_string(t);
    for (const auto& [key, curve] : mean_curve) curves += "," + format_double(curve[t]);
    curves += "\n";
  }

  // Median video of each cell (by full-sequence RMSE, lower median) with its
  // smoothed per-frame RMSE.
  std::string median = "# smooth_window=" + std::to_string(window) + "\n";
  median += "pretrain,method,video,frame_idx,rmse,rmse_smooth\n";
  std::map<std::string, std::vector<PlotSeries>> median_plots;
  for (const auto& [key, entries] : cells) {
    std::vector<const Entry*> sorted;
    for (const Entry& e : entries) sorted.push_back(&e);
    std::stable_sort(sorted.begin(), sorted.end(), [](const Entry* a, const Entry* b) {
      return a->report.all.metrics.rmse < b->report.all.metrics.rmse;
    });
    const Entry& med = *sorted[(sorted.size() - 1) / 2];
    std::vector<double> raw;
    for (const FrameRow& r : med.report.frames) raw.push_back(r.metrics.rmse);
    const std::vector<double> smooth = moving_average(raw, window);
    for (std::size_t t = 0; t < raw.size(); ++t) {
      median += key.first + "," + key.second + "," + med.video + "," + std::to_string(t) + "," + format_double(raw[t]) +
                "," + (t < smooth.size() ? format_double(smooth[t]) : std::string()) + "\n";
    }
    if (key.second == "omla") {
      median_plots[key.first] = {{med.video + " raw", raw},
                                 {med.video + " MA" + std::to_string(window), smooth}};
    }
  }

  const fs::path out(out_dir);
  write_file_atomic((out / "summary.csv").string(), csv);
  write_file_atomic((out / "summary.txt").string(), txt);
  write_file_atomic((out / "curves.csv").string(), curves);
  write_file_atomic((out / "median_curves.csv").string(), median);

  std::map<std::string, std::vector<PlotSeries>> plots;
  for (const auto& [key, curve] : mean_curve) plots[key.first].push_back({key.second, moving_average(curve, window)});
  for (const auto& [pretrain, series] : plots) {
    write_file_atomic((out / ("curves_" + pretrain + ".svg")).string(),
                      svg_line_plot("Mean per-frame RMSE, " + pretrain + " pre-training", "RMSE (m), moving average",
                                    series));
  }
  for (const auto& [pretrain, series] : median_plots) {
    write_file_atomic((out / ("median_" + pretrain + "_omla.svg")).string(),
                      svg_line_plot("Median video under OMLA, " + pretrain + " pre-training", "RMSE (m)", series));
  }
  log(c, "report over " + std::to_string(cells.size()) + " cells written to " + out_dir);
}

}  // namespace omla
