#include "omla/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "omla/binio.hpp"
#include "omla/error.hpp"

namespace omla {

std::vector<double> disparity_to_depth(std::span<const double> disparity, double fB, double cap, double d_min_eps) {
  if (!(fB > 0.0)) throw ContractError("disparity_to_depth: fB must be > 0");
  if (!(cap > 0.0)) throw ContractError("disparity_to_depth: cap must be > 0");
  std::vector<double> depth(disparity.size());
  for (std::size_t i = 0; i < disparity.size(); ++i) {
    depth[i] = std::min(fB / std::max(disparity[i], d_min_eps), cap);
  }
  return depth;
}

std::vector<std::uint8_t> valid_mask(std::span<const float> gt_disparity, double fB, double cap) {
  std::vector<std::uint8_t> mask(gt_disparity.size());
  for (std::size_t i = 0; i < gt_disparity.size(); ++i) {
    const double d = gt_disparity[i];
    mask[i] = d > 0.0 && fB / d <= cap ? 1 : 0;
  }
  return mask;
}

namespace {

void check_sizes(std::size_t a, std::size_t b, std::size_t m, const char* what) {
  if (a != b || a != m) {
    throw ShapeError(std::string(what) + ": sizes disagree (" + std::to_string(a) + ", " + std::to_string(b) + ", mask " +
                     std::to_string(m) + ")");
  }
}

}  // namespace

MetricsRecord depth_metrics(std::span<const double> pred, std::span<const double> gt,
                            std::span<const std::uint8_t> mask) {
  check_sizes(pred.size(), gt.size(), mask.size(), "depth_metrics");
  double abs_rel = 0.0, sq_rel = 0.0, se = 0.0, se_log = 0.0;
  std::size_t d1 = 0, d2 = 0, d3 = 0, n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    const double p = pred[i];
    const double g = gt[i];
    const double e = p - g;
    abs_rel += std::abs(e) / g;
    sq_rel += e * e / g;
    se += e * e;
    const double el = std::log(p) - std::log(g);
    se_log += el * el;
    const double ratio = std::max(p / g, g / p);
    d1 += ratio < 1.25;
    d2 += ratio < 1.25 * 1.25;
    d3 += ratio < 1.25 * 1.25 * 1.25;
    ++n;
  }
  if (n == 0) throw ContractError("depth_metrics: mask selects no pixels");
  const double dn = static_cast<double>(n);
  MetricsRecord r;
  r.abs_rel = abs_rel / dn;
  r.sq_rel = sq_rel / dn;
  r.rmse = std::sqrt(se / dn);
  r.rmse_log = std::sqrt(se_log / dn);
  r.delta1 = static_cast<double>(d1) / dn;
  r.delta2 = static_cast<double>(d2) / dn;
  r.delta3 = static_cast<double>(d3) / dn;
  return r;
}

StereoMetrics stereo_metrics(std::span<const double> pred, std::span<const double> gt,
                             std::span<const std::uint8_t> mask) {
  check_sizes(pred.size(), gt.size(), mask.size(), "stereo_metrics");
  double err_sum = 0.0;
  std::size_t outliers = 0, n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    const double err = std::abs(pred[i] - gt[i]);
    err_sum += err;
    outliers += err > 3.0 && err > 0.05 * std::abs(gt[i]);
    ++n;
  }
  if (n == 0) throw ContractError("stereo_metrics: mask selects no pixels");
  return {100.0 * static_cast<double>(outliers) / static_cast<double>(n), err_sum / static_cast<double>(n)};
}

MetricsRecord frame_metrics(std::span<const double> pred_disp, const StereoFrame& frame, const EvalConfig& config) {
  const double fB = frame.focal_times_baseline;
  const std::vector<double> gt_disp(frame.gt_disparity.begin(), frame.gt_disparity.end());
  const auto mask = valid_mask(frame.gt_disparity, fB, config.depth_cap);
  std::vector<double> gt_depth(gt_disp.size(), 0.0);
  for (std::size_t i = 0; i < gt_disp.size(); ++i) {
    if (mask[i]) gt_depth[i] = fB / gt_disp[i];
  }
  const auto pred_depth = disparity_to_depth(pred_disp, fB, config.depth_cap, config.d_min_eps);
  MetricsRecord r = depth_metrics(pred_depth, gt_depth, mask);
  const StereoMetrics s = stereo_metrics(pred_disp, gt_disp, mask);
  r.d1_all = s.d1_all;
  r.epe = s.epe;
  return r;
}

MetricsRecord mean_metrics(std::span<const MetricsRecord> records) {
  MetricsRecord m;
  if (records.empty()) return m;
  for (const MetricsRecord& r : records) {
    m.abs_rel += r.abs_rel;
    m.sq_rel += r.sq_rel;
    m.rmse += r.rmse;
    m.rmse_log += r.rmse_log;
    m.delta1 += r.delta1;
    m.delta2 += r.delta2;
    m.delta3 += r.delta3;
    m.d1_all += r.d1_all;
    m.epe += r.epe;
  }
  const double n = static_cast<double>(records.size());
  m.abs_rel /= n;
  m.sq_rel /= n;
  m.rmse /= n;
  m.rmse_log /= n;
  m.delta1 /= n;
  m.delta2 /= n;
  m.delta3 /= n;
  m.d1_all /= n;
  m.epe /= n;
  return m;
}

std::size_t tail_count(std::size_t frames) { return (frames + 4) / 5; }

namespace {

FrameRow mean_rows(std::span<const FrameRow> rows, int idx) {
  FrameRow m;
  m.frame_idx = idx;
  std::vector<MetricsRecord> recs;
  for (const FrameRow& r : rows) {
    m.loss += r.loss;
    m.lr_min += r.lr_min;
    m.lr_mean += r.lr_mean;
    m.lr_max += r.lr_max;
    recs.push_back(r.metrics);
  }
  const double n = static_cast<double>(std::max<std::size_t>(rows.size(), 1));
  m.loss /= n;
  m.lr_min /= n;
  m.lr_mean /= n;
  m.lr_max /= n;
  m.metrics = mean_metrics(recs);
  return m;
}

void finish_report(SequenceReport& rep) {
  const std::span<const FrameRow> rows(rep.frames);
  rep.all = mean_rows(rows, -1);
  rep.last20 = mean_rows(rows.last(tail_count(rows.size())), -2);
}

}  // namespace

SequenceReport build_report(std::span<const FrameRow> trace_rows, std::span<const std::vector<double>> predictions,
                            const StereoVideo& video, const EvalConfig& config) {
  if (trace_rows.size() != video.frames.size() || predictions.size() != video.frames.size()) {
    throw ContractError("evaluation: trace has " + std::to_string(trace_rows.size()) + " rows and " +
                        std::to_string(predictions.size()) + " predictions, video has " +
                        std::to_string(video.frames.size()) + " frames");
  }
  SequenceReport rep;
  for (std::size_t t = 0; t < trace_rows.size(); ++t) {
    FrameRow row = trace_rows[t];
    row.metrics = frame_metrics(predictions[t], video.frames[t], config);
    rep.frames.push_back(row);
  }
  finish_report(rep);
  return rep;
}

std::vector<FrameRow> trace_rows(const OnlineTrace& trace) {
  std::vector<FrameRow> rows;
  for (const FrameRecord& f : trace.frames) {
    FrameRow r;
    r.frame_idx = f.index;
    r.loss = f.loss;
    r.lr_min = f.lr_min;
    r.lr_mean = f.lr_mean;
    r.lr_max = f.lr_max;
    rows.push_back(r);
  }
  return rows;
}

SequenceReport online_evaluate(const Model& model, const StereoVideo& video, const Checkpoint& checkpoint,
                               const OnlineOptions& options, const EvalConfig& config, OnlineTrace* trace_out) {
  OnlineOptions o = options;
  o.keep_predictions = true;
  OnlineTrace trace = run_method(model, video.frames, checkpoint, o);
  std::vector<std::vector<double>> preds;
  preds.reserve(trace.frames.size());
  for (const FrameRecord& f : trace.frames) preds.push_back(f.disp_left);
  SequenceReport rep = build_report(trace_rows(trace), preds, video, config);
  rep.meta["method"] = options.method.name();
  rep.meta["pretrain"] = checkpoint.origin;
  if (trace_out) *trace_out = std::move(trace);
  return rep;
}

// ---------------------------------------------------------------------------
// CSV

std::string format_double(double v) {
  if (v == 0.0) return "0";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

namespace {

const char* const kTraceColumns[] = {"frame_idx", "loss", "lr_min", "lr_mean", "lr_max"};
const char* const kMetricColumns[] = {"abs_rel", "sq_rel", "rmse", "rmse_log", "delta1",
                                      "delta2",  "delta3", "d1_all", "epe"};

std::string meta_line(const std::map<std::string, std::string>& meta) {
  std::string s = "#";
  for (const auto& [k, v] : meta) {
    if (v.find_first_of(" \n=") != std::string::npos) throw ContractError("metadata value '" + v + "' contains a space");
    s += " " + k + "=" + v;
  }
  return s + "\n";
}

std::string label(int idx) {
  if (idx == -1) return "ALL";
  if (idx == -2) return "LAST20";
  return std::to_string(idx);
}

void append_trace_cells(std::string& s, const FrameRow& r) {
  s += label(r.frame_idx);
  for (double v : {r.loss, r.lr_min, r.lr_mean, r.lr_max}) s += "," + format_double(v);
}

void append_metric_cells(std::string& s, const MetricsRecord& m) {
  for (double v : {m.abs_rel, m.sq_rel, m.rmse, m.rmse_log, m.delta1, m.delta2, m.delta3, m.d1_all, m.epe}) {
    s += "," + format_double(v);
  }
}

double to_double(const std::string& cell, const std::string& source, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw FormatError(source + ": line " + std::to_string(line) + ": '" + cell + "' is not a number");
  }
}

int to_index(const std::string& cell, const std::string& source, std::size_t line) {
  if (cell == "ALL") return -1;
  if (cell == "LAST20") return -2;
  const double v = to_double(cell, source, line);
  if (v < 0 || v != std::floor(v)) throw FormatError(source + ": line " + std::to_string(line) + ": bad frame index");
  return static_cast<int>(v);
}

void expect_header(const ParsedCsv& csv, std::span<const char* const> a, std::span<const char* const> b,
                   const std::string& source) {
  std::vector<std::string> want(a.begin(), a.end());
  want.insert(want.end(), b.begin(), b.end());
  if (csv.header != want) throw FormatError(source + ": unexpected CSV header");
}

}  // namespace

std::string trace_csv(std::span<const FrameRow> rows, const std::map<std::string, std::string>& meta) {
  std::string s = meta_line(meta);
  s += "frame_idx,loss,lr_min,lr_mean,lr_max\n";
  for (const FrameRow& r : rows) {
    append_trace_cells(s, r);
    s += "\n";
  }
  return s;
}

std::string report_csv(const SequenceReport& report) {
  std::string s = meta_line(report.meta);
  s += "frame_idx,loss,lr_min,lr_mean,lr_max,abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3,d1_all,epe\n";
  auto row = [&](const FrameRow& r) {
    append_trace_cells(s, r);
    append_metric_cells(s, r.metrics);
    s += "\n";
  };
  for (const FrameRow& r : report.frames) row(r);
  row(report.all);
  row(report.last20);
  return s;
}

ParsedCsv parse_csv(const std::string& text, const std::string& source) {
  ParsedCsv csv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(l);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!l.empty() && l.back() == ',') cells.emplace_back();
    return cells;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ms(line.substr(1));
      std::string kv;
      while (ms >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw FormatError(source + ": line " + std::to_string(lineno) + ": bad metadata");
        csv.meta[kv.substr(0, eq)] = kv.substr(eq + 1);
      }
      continue;
    }
    if (csv.header.empty()) {
      csv.header = split(line);
      continue;
    }
    auto cells = split(line);
    if (cells.size() != csv.header.size()) {
      throw FormatError(source + ": line " + std::to_string(lineno) + ": expected " +
                        std::to_string(csv.header.size()) + " columns, found " + std::to_string(cells.size()));
    }
    csv.rows.push_back(std::move(cells));
  }
  if (csv.header.empty()) throw FormatError(source + ": missing CSV header");
  return csv;
}

std::vector<FrameRow> parse_trace_csv(const std::string& text, const std::string& source) {
  const ParsedCsv csv = parse_csv(text, source);
  expect_header(csv, kTraceColumns, {}, source);
  std::vector<FrameRow> rows;
  for (std::size_t i = 0; i < csv.rows.size(); ++i) {
    const auto& c = csv.rows[i];
    FrameRow r;
    r.frame_idx = to_index(c[0], source, i + 2);
    r.loss = to_double(c[1], source, i + 2);
    r.lr_min = to_double(c[2], source, i + 2);
    r.lr_mean = to_double(c[3], source, i + 2);
    r.lr_max = to_double(c[4], source, i + 2);
    rows.push_back(r);
  }
  return rows;
}

SequenceReport parse_report_csv(const std::string& text, const std::string& source) {
  const ParsedCsv csv = parse_csv(text, source);
  expect_header(csv, kTraceColumns, kMetricColumns, source);
  SequenceReport rep;
  rep.meta = csv.meta;
  bool have_all = false, have_last = false;
  for (std::size_t i = 0; i < csv.rows.size(); ++i) {
    const auto& c = csv.rows[i];
    const std::size_t ln = i + 2;
    FrameRow r;
    r.frame_idx = to_index(c[0], source, ln);
    r.loss = to_double(c[1], source, ln);
    r.lr_min = to_double(c[2], source, ln);
    r.lr_mean = to_double(c[3], source, ln);
    r.lr_max = to_double(c[4], source, ln);
    MetricsRecord& m = r.metrics;
    double* fields[] = {&m.abs_rel, &m.sq_rel, &m.rmse, &m.rmse_log, &m.delta1,
                        &m.delta2,  &m.delta3, &m.d1_all, &m.epe};
    for (std::size_t k = 0; k < 9; ++k) *fields[k] = to_double(c[5 + k], source, ln);
    if (r.frame_idx == -1) {
      rep.all = r;
      have_all = true;
    } else if (r.frame_idx == -2) {
      rep.last20 = r;
      have_last = true;
    } else {
      rep.frames.push_back(r);
    }
  }
  if (!have_all || !have_last) throw FormatError(source + ": report lacks the ALL/LAST20 summary rows");
  return rep;
}

// ---------------------------------------------------------------------------
// Prediction sidecar

namespace {
constexpr char kPredMagic[4] = {'O', 'M', 'L', 'P'};
}

std::string encode_predictions(const PredictionFile& p) {
  ByteWriter w;
  w.bytes(std::string_view(kPredMagic, 4));
  w.u16(kPredictionFormatVersion);
  w.u32(static_cast<std::uint32_t>(p.meta.size()));
  for (const auto& [k, v] : p.meta) {
    w.str(k);
    w.str(v);
  }
  const std::size_t plane = static_cast<std::size_t>(p.height) * p.width;
  w.u32(static_cast<std::uint32_t>(p.disparity.size()));
  w.u32(static_cast<std::uint32_t>(p.height));
  w.u32(static_cast<std::uint32_t>(p.width));
  for (const auto& d : p.disparity) {
    if (d.size() != plane) throw ContractError("encode_predictions: map size does not match H×W");
    for (double v : d) w.f64(v);
  }
  return w.buffer();
}

PredictionFile decode_predictions(const std::string& bytes, const std::string& source) {
  ByteReader r(bytes, source);
  if (r.bytes(4) != std::string_view(kPredMagic, 4)) r.fail(0, "bad magic (expected OMLP)");
  const std::size_t vat = r.offset();
  const std::uint16_t version = r.u16();
  if (version != kPredictionFormatVersion) {
    throw UnsupportedVersionError(source + ": unsupported prediction file version " + std::to_string(version) +
                                  " at byte offset " + std::to_string(vat));
  }
  PredictionFile p;
  const std::uint32_t nmeta = r.u32();
  if (nmeta > 256) r.fail(vat + 2, "too many metadata entries");
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    std::string k = r.str();
    p.meta[k] = r.str();
  }
  const std::size_t hat = r.offset();
  const std::uint32_t T = r.u32();
  p.height = static_cast<int>(r.u32());
  p.width = static_cast<int>(r.u32());
  const std::size_t plane = static_cast<std::size_t>(p.height) * p.width;
  if (p.height <= 0 || p.width <= 0 || r.remaining() != plane * T * sizeof(double)) {
    r.fail(hat, "header does not match payload size " + std::to_string(r.remaining()));
  }
  p.disparity.assign(T, std::vector<double>(plane));
  for (auto& d : p.disparity) {
    for (double& v : d) v = r.f64();
  }
  return p;
}

}  // namespace omla
