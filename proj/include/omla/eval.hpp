#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "omla/adapt.hpp"

namespace omla {

struct EvalConfig {
  double depth_cap = 50.0;  // metres
  double d_min_eps = 1e-3;  // pixels, floor before inversion
};

/// depth = min(fB / max(d, d_min_eps), cap).
std::vector<double> disparity_to_depth(std::span<const double> disparity, double fB, double cap,
                                       double d_min_eps = 1e-3);

/// Pixels with positive ground-truth disparity whose depth fB / d is at most `cap`.
std::vector<std::uint8_t> valid_mask(std::span<const float> gt_disparity, double fB, double cap);

struct MetricsRecord {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
  double d1_all = 0.0;  // percent
  double epe = 0.0;

  bool operator==(const MetricsRecord&) const = default;
};

/// Fills abs_rel, sq_rel, rmse, rmse_log (natural log) and delta1..3
/// (thresholds 1.25, 1.25², 1.25³). Throws ContractError on an empty mask.
MetricsRecord depth_metrics(std::span<const double> pred_depth, std::span<const double> gt_depth,
                            std::span<const std::uint8_t> mask);

struct StereoMetrics {
  double d1_all = 0.0;  // percent of pixels with error > 3 px and > 5 % of the truth
  double epe = 0.0;     // mean absolute disparity error
};

StereoMetrics stereo_metrics(std::span<const double> pred_disp, std::span<const double> gt_disp,
                             std::span<const std::uint8_t> mask);

/// All metrics of one predicted left disparity map against a frame.
MetricsRecord frame_metrics(std::span<const double> pred_disp, const StereoFrame& frame, const EvalConfig& config);

/// Per-metric mean over records.
MetricsRecord mean_metrics(std::span<const MetricsRecord> records);

/// Number of frames in the trailing (or leading) 20 % window: ceil(0.2·T).
std::size_t tail_count(std::size_t frames);

struct FrameRow {
  int frame_idx = 0;
  double loss = 0.0;
  double lr_min = 0.0;
  double lr_mean = 0.0;
  double lr_max = 0.0;
  MetricsRecord metrics;
};

struct SequenceReport {
  std::map<std::string, std::string> meta;  // method, pretrain, video
  std::vector<FrameRow> frames;
  FrameRow all;     // mean over all frames
  FrameRow last20;  // mean over the trailing ceil(0.2·T) frames
};

/// Scores the pre-update predictions of a trace. `predictions` holds one
/// left disparity map per frame.
SequenceReport build_report(std::span<const FrameRow> trace_rows, std::span<const std::vector<double>> predictions,
                            const StereoVideo& video, const EvalConfig& config);

/// Runs run_method on the video and scores it.
SequenceReport online_evaluate(const Model& model, const StereoVideo& video, const Checkpoint& checkpoint,
                               const OnlineOptions& options, const EvalConfig& config, OnlineTrace* trace_out = nullptr);

std::vector<FrameRow> trace_rows(const OnlineTrace& trace);

// ---------------------------------------------------------------------------
// Files

/// Trace CSV: "frame_idx,loss,lr_min,lr_mean,lr_max", one row per frame,
/// preceded by one "# key=value ..." metadata line.
std::string trace_csv(std::span<const FrameRow> rows, const std::map<std::string, std::string>& meta);
/// Report CSV: trace columns plus abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,
/// delta3,d1_all,epe; per-frame rows then the ALL and LAST20 rows.
std::string report_csv(const SequenceReport& report);

struct ParsedCsv {
  std::map<std::string, std::string> meta;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};
ParsedCsv parse_csv(const std::string& text, const std::string& source);

std::vector<FrameRow> parse_trace_csv(const std::string& text, const std::string& source);
SequenceReport parse_report_csv(const std::string& text, const std::string& source);

/// Prediction sidecar written next to a trace: magic "OMLP", u16 version,
/// metadata strings, then T, H, W and the per-frame left disparities as f64.
inline constexpr std::uint16_t kPredictionFormatVersion = 1;

struct PredictionFile {
  std::map<std::string, std::string> meta;
  int height = 0;
  int width = 0;
  std::vector<std::vector<double>> disparity;

  bool operator==(const PredictionFile&) const = default;
};

std::string encode_predictions(const PredictionFile& p);
PredictionFile decode_predictions(const std::string& bytes, const std::string& source = "<memory>");

/// Fixed formatting for every floating-point value written to CSV.
std::string format_double(double v);

}  // namespace omla
