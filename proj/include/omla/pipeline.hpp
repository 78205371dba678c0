#pragma once

#include <string>
#include <vector>

#include "omla/config.hpp"

namespace omla {

/// Writes <out_dir>/source/src_NNN.omld and <out_dir>/target/tgt_NNN.omld.
void cmd_gen_data(const ExperimentConfig& config, const std::string& out_dir);

/// mode "standard": fresh initialisation, standard pre-training on the source
/// videos. mode "meta": meta pre-training starting from `init_checkpoint`, or
/// from a standard pre-training run when `init_checkpoint` is empty.
void cmd_pretrain(const ExperimentConfig& config, const std::string& mode, const std::string& data_dir,
                  const std::string& init_checkpoint, const std::string& out_checkpoint);

/// Writes the trace CSV to `out_trace` and the predictions to `out_trace`.pred.
void cmd_adapt(const ExperimentConfig& config, const std::string& checkpoint, const std::string& video_file,
               const std::string& method, const std::string& out_trace);

void cmd_eval(const ExperimentConfig& config, const std::string& trace, const std::string& video_file,
              const std::string& out_report);

/// Aggregates every report CSV in `report_dir` into `out_dir`: summary.csv,
/// summary.txt, curves.csv, median_curves.csv and one SVG plot per
/// pre-training origin.
void cmd_report(const ExperimentConfig& config, const std::string& report_dir, const std::string& out_dir);

/// Sorted paths of the files in `dir` with the given extension.
std::vector<std::string> list_files(const std::string& dir, const std::string& extension);

/// Valid-mode moving average: out[i] = mean(x[i .. i+w-1]), i <= n - w.
/// Returns x unchanged when w <= 1 or w > n.
std::vector<double> moving_average(const std::vector<double>& x, int w);

struct PlotSeries {
  std::string name;
  std::vector<double> y;
};

/// Self-contained SVG line plot; output depends only on the arguments.
std::string svg_line_plot(const std::string& title, const std::string& ylabel, const std::vector<PlotSeries>& series);

}  // namespace omla
