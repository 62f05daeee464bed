#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "car/confusion.hpp"
#include "car/data.hpp"
#include "car/model.hpp"

namespace car::analysis {

struct MetricsReport {
  std::vector<double> per_class_accuracy;  // NaN for classes absent from the data
  std::vector<double> per_class_error;
  double overall_accuracy = 0.0;
  double head_accuracy = 0.0;  // mean per-class accuracy over each group; NaN if empty
  double medium_accuracy = 0.0;
  double tail_accuracy = 0.0;
  double worst_class_accuracy = 0.0;
  int worst_class_index = -1;
  double wce = 0.0;  // max_j λ_j·e_j
  confusion::ConfusionMatrix confusion;
  std::vector<std::string> warnings;
};

// Metrics from hard predictions. `split` assigns classes to head/medium/tail;
// when absent it is derived from the label counts.
MetricsReport evaluate_predictions(std::span<const int> predictions, std::span<const int> labels,
                                   int k, const confusion::ClassWeighting& weights,
                                   const data::ClassSplit* split = nullptr);

MetricsReport evaluate(const model::ModelParams& model, const data::LabeledDataset& ds,
                       const confusion::ClassWeighting& weights,
                       const data::ClassSplit* split = nullptr);

// max_j λ_j Σ_i c_ij, i.e. ‖C Λ‖₁.
double weighted_worst_class_error(const Matrix& c, std::span<const double> lambdas);

struct WorstClassReport {
  double worst_train = 0.0;
  double worst_test = 0.0;
  std::optional<double> wr;  // empty when worst_train is 0
};
WorstClassReport worst_class_report(const MetricsReport& train, const MetricsReport& test);

struct BoundReport {
  double gamma = 0.0;
  double delta = 0.0;
  std::size_t k = 0;
  std::size_t m_min = 0;
  std::size_t depth = 0;
  std::size_t width = 0;
  double b_max = 0.0;
  double nu = 0.0;
  double spectral_term = 0.0;  // ‖C_{S,γ} Λ‖₂
  double l1_term = 0.0;        // ‖C_{S,γ} Λ‖₁ on the same matrix
  double psi = 0.0;
  double complexity_term = 0.0;  // universal constant set to 1
  std::vector<double> lambdas;
  std::vector<double> per_class_bounds;
  bool valid = false;
};

// B²n²h·ln(nh)·∏‖W_l‖₂²·Σ‖W_l‖_F²/‖W_l‖₂²; zero if any layer is zero.
double psi(std::span<const model::LayerNorms> norms, double b_max, std::size_t depth,
           std::size_t width);

// √( K / ((m_min − 8K)·γ²) · [Ψ + ln(n·m_min/δ)] ). Throws InvalidRegimeError
// when m_min ≤ 8K.
double complexity_term(std::size_t k, std::size_t m_min, double gamma, double delta,
                       double psi_value, std::size_t depth);

BoundReport bound_eval(const model::ModelParams& model, const data::LabeledDataset& ds,
                       double gamma, double delta, const confusion::ClassWeighting& weights);

struct HeatmapSummary {
  std::size_t shaded_cells = 0;
  double max_value = 0.0;
};

// SVG heatmap over [0, max entry] plus a CSV of the selected submatrix.
HeatmapSummary heatmap_export(const Matrix& c, std::span<const int> class_subset,
                              const std::filesystem::path& svg_path,
                              const std::filesystem::path& csv_path);

nlohmann::ordered_json to_json(const MetricsReport& r);
nlohmann::ordered_json to_json(const WorstClassReport& r);
nlohmann::ordered_json to_json(const BoundReport& r);

}  // namespace car::analysis
