#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "car/experiment.hpp"

namespace car::experiment {

enum class SweepParam { kBeta, kR0, kAlpha, kGamma };

SweepParam parse_sweep_param(std::string_view name);
std::string_view sweep_param_name(SweepParam p);

struct SweepRow {
  double value = 0.0;
  double overall_accuracy = 0.0;
  double worst_class_accuracy = 0.0;
  std::string status = "ok";  // or the error message of a failed run
};

// Applies `value` to the matching TrainConfig field.
ExperimentSpec with_param(ExperimentSpec spec, SweepParam p, double value);

// One run per value, at most `threads` at a time. Each run is written to
// out_dir/runs/<param>_<index>/ like `train`. Failed runs are recorded with
// their message and the sweep continues.
std::vector<SweepRow> run_sweep(const ExperimentSpec& spec, SweepParam p,
                                const std::vector<double>& values,
                                const std::filesystem::path& out_dir, unsigned threads);

std::string sweep_csv(SweepParam p, const std::vector<SweepRow>& rows);
std::vector<SweepRow> parse_sweep_csv(std::string_view text);

// Minimal SVG line plot of y against x.
std::string line_plot_svg(const std::string& title, const std::string& x_label,
                          const std::string& y_label, const std::vector<double>& xs,
                          const std::vector<double>& ys);

}  // namespace car::experiment
