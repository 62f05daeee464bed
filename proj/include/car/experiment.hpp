#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"

#include "car/analysis.hpp"
#include "car/data.hpp"
#include "car/model.hpp"
#include "car/trainer.hpp"

namespace car::experiment {

struct DatasetBlock {
  enum class Kind { kSynthetic, kCsv } kind = Kind::kSynthetic;
  // synthetic
  data::SynthParams synth;
  // Balanced held-out set drawn from the same class means; 0 disables it.
  std::size_t test_per_class = 0;
  // csv
  std::string path;
  std::string test_path;
  // When set, the ingested training set is cut to this exponential profile.
  std::optional<double> subset_imbalance_factor;
  std::uint64_t subset_seed = 0;
};

struct ModelBlock {
  std::size_t n = 3;
  std::size_t h = 32;
  std::optional<std::uint64_t> init_seed;  // defaults to the training seed
};

struct EvalBlock {
  double delta = 0.05;
  double gamma = 0.1;
  std::size_t head_min = 100;
  std::size_t tail_max = 20;
};

struct ExperimentSpec {
  DatasetBlock dataset;
  ModelBlock model;
  train::TrainConfig train;
  EvalBlock eval;
  std::string output = "run";
};

nlohmann::ordered_json to_json(const ExperimentSpec& spec);
ExperimentSpec spec_from_json(const nlohmann::ordered_json& j);
ExperimentSpec load_spec(const std::filesystem::path& path);

struct Datasets {
  data::LabeledDataset train;
  std::optional<data::LabeledDataset> test;
};
Datasets materialize(const DatasetBlock& block);

struct ExperimentResult {
  train::TrainResult run;
  analysis::MetricsReport train_metrics;
  std::optional<analysis::MetricsReport> test_metrics;
  std::optional<analysis::WorstClassReport> worst_class;
  nlohmann::ordered_json summary;
};

// Trains and evaluates in memory.
ExperimentResult run_experiment(const ExperimentSpec& spec);
ExperimentResult run_experiment(const ExperimentSpec& spec, const Datasets& data);

// Runs and writes spec.json, checkpoint.carm, history.csv, epochs.csv and
// summary.json into `dir`.
ExperimentResult run_to_directory(const ExperimentSpec& spec, const std::filesystem::path& dir);

// Dumps JSON with two-space indentation and a trailing newline.
std::string dump(const nlohmann::ordered_json& j);

}  // namespace car::experiment
