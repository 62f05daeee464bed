#include "car/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "car/error.hpp"
#include "car/io.hpp"
#include "car/spectral.hpp"

namespace car::analysis {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double group_mean(const std::vector<double>& acc, const std::vector<int>& group) {
  double s = 0.0;
  std::size_t n = 0;
  for (int j : group) {
    const double a = acc[static_cast<std::size_t>(j)];
    if (std::isnan(a)) continue;
    s += a;
    ++n;
  }
  return n == 0 ? kNaN : s / static_cast<double>(n);
}

nlohmann::ordered_json number_or_null(double x) {
  return std::isfinite(x) ? nlohmann::ordered_json(x) : nlohmann::ordered_json(nullptr);
}

nlohmann::ordered_json array_of(std::span<const double> xs) {
  auto a = nlohmann::ordered_json::array();
  for (double x : xs) a.push_back(number_or_null(x));
  return a;
}

}  // namespace

double weighted_worst_class_error(const Matrix& c, std::span<const double> lambdas) {
  if (c.cols() != lambdas.size()) throw DimensionError("wce: weight count differs from K");
  double best = 0.0;
  for (std::size_t j = 0; j < c.cols(); ++j) {
    double col = 0.0;
    for (std::size_t i = 0; i < c.rows(); ++i) col += std::abs(c(i, j) * lambdas[j]);
    best = std::max(best, col);
  }
  return best;
}

MetricsReport evaluate_predictions(std::span<const int> predictions, std::span<const int> labels,
                                   int k, const confusion::ClassWeighting& weights,
                                   const data::ClassSplit* split) {
  if (weights.k() != static_cast<std::size_t>(k)) {
    throw DimensionError("evaluate: " + std::to_string(weights.k()) + " weights for k=" +
                         std::to_string(k));
  }
  MetricsReport r;
  r.confusion = confusion::hard_confusion(predictions, labels, k);

  std::size_t correct = 0;
  for (std::size_t q = 0; q < labels.size(); ++q) correct += predictions[q] == labels[q];
  r.overall_accuracy = labels.empty() ? kNaN
                                      : static_cast<double>(correct) / static_cast<double>(labels.size());

  r.worst_class_accuracy = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < static_cast<std::size_t>(k); ++j) {
    if (r.confusion.absent[j]) {
      r.per_class_error.push_back(kNaN);
      r.per_class_accuracy.push_back(kNaN);
      r.warnings.push_back("class " + std::to_string(j) +
                           " has no samples; excluded from worst-class metrics");
      continue;
    }
    // Summing c_ij = n_ij / m_j can overshoot 1 by an ulp.
    const double e = std::min(r.confusion.column_sum(j), 1.0);
    r.per_class_error.push_back(e);
    r.per_class_accuracy.push_back(1.0 - e);
    if (1.0 - e < r.worst_class_accuracy) {
      r.worst_class_accuracy = 1.0 - e;
      r.worst_class_index = static_cast<int>(j);
    }
  }
  if (r.worst_class_index < 0) r.worst_class_accuracy = kNaN;
  r.wce = weighted_worst_class_error(r.confusion.entries, weights.lambdas);

  data::ClassSplit derived;
  if (split == nullptr) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (int y : labels) ++counts[static_cast<std::size_t>(y)];
    derived = data::split_head_medium_tail(counts);
    split = &derived;
  }
  r.head_accuracy = group_mean(r.per_class_accuracy, split->head);
  r.medium_accuracy = group_mean(r.per_class_accuracy, split->medium);
  r.tail_accuracy = group_mean(r.per_class_accuracy, split->tail);
  return r;
}

MetricsReport evaluate(const model::ModelParams& model, const data::LabeledDataset& ds,
                       const confusion::ClassWeighting& weights, const data::ClassSplit* split) {
  if (model.input_dim != ds.dim() || model.num_classes != static_cast<std::size_t>(ds.k)) {
    throw DimensionError("evaluate: model is " + std::to_string(model.input_dim) + "->" +
                         std::to_string(model.num_classes) + " but data has d=" +
                         std::to_string(ds.dim()) + ", k=" + std::to_string(ds.k));
  }
  return evaluate_predictions(model::predict(model, ds.features), ds.labels, ds.k, weights, split);
}

WorstClassReport worst_class_report(const MetricsReport& train, const MetricsReport& test) {
  if (train.per_class_accuracy.size() != test.per_class_accuracy.size()) {
    throw ReportError("worst_class_report: train has K=" +
                      std::to_string(train.per_class_accuracy.size()) + ", test has K=" +
                      std::to_string(test.per_class_accuracy.size()));
  }
  WorstClassReport r;
  r.worst_train = train.worst_class_accuracy;
  r.worst_test = test.worst_class_accuracy;
  if (r.worst_train != 0.0 && std::isfinite(r.worst_train) && std::isfinite(r.worst_test)) {
    r.wr = r.worst_test / r.worst_train;
  }
  return r;
}

double psi(std::span<const model::LayerNorms> norms, double b_max, std::size_t depth,
           std::size_t width) {
  const double n = static_cast<double>(depth);
  const double h = static_cast<double>(width);
  double prod = 1.0;
  double ratio_sum = 0.0;
  for (const auto& l : norms) {
    if (l.spectral == 0.0) return 0.0;
    prod *= l.spectral * l.spectral;
    ratio_sum += (l.frobenius * l.frobenius) / (l.spectral * l.spectral);
  }
  return b_max * b_max * n * n * h * std::log(n * h) * prod * ratio_sum;
}

double complexity_term(std::size_t k, std::size_t m_min, double gamma, double delta,
                       double psi_value, std::size_t depth) {
  if (!(gamma > 0.0)) throw ParameterError("bound: gamma must be > 0");
  if (!(delta > 0.0 && delta < 1.0)) throw ParameterError("bound: delta must lie in (0, 1)");
  if (m_min <= 8 * k) {
    throw InvalidRegimeError("bound: m_min = " + std::to_string(m_min) + " must exceed 8K = " +
                             std::to_string(8 * k));
  }
  const double kk = static_cast<double>(k);
  const double mm = static_cast<double>(m_min);
  const double slack = mm - 8.0 * kk;
  const double inner = psi_value + std::log(static_cast<double>(depth) * mm / delta);
  return std::sqrt(kk / (slack * gamma * gamma) * inner);
}

BoundReport bound_eval(const model::ModelParams& model, const data::LabeledDataset& ds,
                       double gamma, double delta, const confusion::ClassWeighting& weights) {
  if (model.has_biases()) {
    throw UnsupportedModelError("bound: the bound applies to bias-free networks only");
  }
  if (!(gamma > 0.0)) throw ParameterError("bound: gamma must be > 0");
  if (!(delta > 0.0 && delta < 1.0)) throw ParameterError("bound: delta must lie in (0, 1)");
  if (model.input_dim != ds.dim() || model.num_classes != static_cast<std::size_t>(ds.k)) {
    throw DimensionError("bound: model and dataset dimensions differ");
  }
  if (weights.k() != static_cast<std::size_t>(ds.k)) {
    throw DimensionError("bound: weight count differs from K");
  }

  BoundReport r;
  r.gamma = gamma;
  r.delta = delta;
  r.k = static_cast<std::size_t>(ds.k);
  r.m_min = ds.min_class_count();
  r.depth = model.depth;
  r.width = model.width;
  r.b_max = ds.b_max;
  r.nu = std::sqrt(static_cast<double>(ds.k));
  r.lambdas = weights.lambdas;

  const auto norms = model::weight_norms(model);
  r.psi = psi(norms, ds.b_max, model.depth, model.width);
  // Throws for m_min ≤ 8K before any bound is emitted.
  r.complexity_term = complexity_term(r.k, r.m_min, gamma, delta, r.psi, model.depth);

  const Matrix logits = model::predict_logits(model, ds.features);
  const auto margin = confusion::hard_margin_confusion(logits, ds.labels, gamma, ds.k);
  const Matrix weighted = matmul(margin.entries, weights.lambda_matrix());
  r.spectral_term = spectral::power_iteration(weighted, 1000, 1e-13).sigma;
  r.l1_term = spectral::l1_operator_norm(weighted);
  for (double lambda : weights.lambdas) {
    r.per_class_bounds.push_back(r.nu / lambda * r.spectral_term + r.complexity_term);
  }
  r.valid = true;
  return r;
}

HeatmapSummary heatmap_export(const Matrix& c, std::span<const int> class_subset,
                              const std::filesystem::path& svg_path,
                              const std::filesystem::path& csv_path) {
  for (int j : class_subset) {
    if (j < 0 || static_cast<std::size_t>(j) >= c.rows() || c.rows() != c.cols()) {
      throw DimensionError("heatmap: class index " + std::to_string(j) + " out of range");
    }
  }
  const std::size_t s = class_subset.size();
  Matrix sub(s, s);
  for (std::size_t a = 0; a < s; ++a)
    for (std::size_t b = 0; b < s; ++b)
      sub(a, b) = c(static_cast<std::size_t>(class_subset[a]), static_cast<std::size_t>(class_subset[b]));

  HeatmapSummary summary;
  for (double x : sub.values()) summary.max_value = std::max(summary.max_value, x);

  constexpr int kCell = 32;
  constexpr int kMargin = 48;
  const int side = static_cast<int>(s) * kCell;
  const int width = kMargin + side + 80;
  const int height = kMargin + side + 16;
  auto ramp = [&](double x) {
    // (224,224,224) at 0 to (200,0,0) at the maximum.
    const double t = summary.max_value > 0.0 ? std::clamp(x / summary.max_value, 0.0, 1.0) : 0.0;
    const int r = static_cast<int>(std::lround(224.0 + (200.0 - 224.0) * t));
    const int g = static_cast<int>(std::lround(224.0 * (1.0 - t)));
    const int b = static_cast<int>(std::lround(224.0 * (1.0 - t)));
    char buf[16];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
    return std::string(buf);
  };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
         "\" height=\"" + std::to_string(height) + "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  svg += "<text x=\"4\" y=\"14\">rows: predicted, columns: true class</text>\n";
  for (std::size_t a = 0; a < s; ++a) {
    const int pos = kMargin + static_cast<int>(a) * kCell;
    svg += "<text x=\"" + std::to_string(pos + kCell / 2) + "\" y=\"" + std::to_string(kMargin - 4) +
           "\" text-anchor=\"middle\">" + std::to_string(class_subset[a]) + "</text>\n";
    svg += "<text x=\"" + std::to_string(kMargin - 4) + "\" y=\"" + std::to_string(pos + kCell / 2 + 4) +
           "\" text-anchor=\"end\">" + std::to_string(class_subset[a]) + "</text>\n";
  }
  for (std::size_t a = 0; a < s; ++a) {
    for (std::size_t b = 0; b < s; ++b) {
      const double x = sub(a, b);
      const bool shaded = x > 0.0;
      summary.shaded_cells += shaded;
      svg += "<rect class=\"cell" + std::string(shaded ? " shaded" : "") + "\" x=\"" +
             std::to_string(kMargin + static_cast<int>(b) * kCell) + "\" y=\"" +
             std::to_string(kMargin + static_cast<int>(a) * kCell) + "\" width=\"" +
             std::to_string(kCell) + "\" height=\"" + std::to_string(kCell) + "\" fill=\"" +
             ramp(x) + "\" data-value=\"" + io::format_double(x) + "\"/>\n";
    }
  }
  const int lx = kMargin + side + 16;
  svg += "<rect x=\"" + std::to_string(lx) + "\" y=\"" + std::to_string(kMargin) +
         "\" width=\"12\" height=\"12\" fill=\"" + ramp(summary.max_value) + "\"/>\n";
  svg += "<text class=\"legend-max\" x=\"" + std::to_string(lx + 16) + "\" y=\"" +
         std::to_string(kMargin + 10) + "\">" + io::format_double(summary.max_value) + "</text>\n";
  svg += "<rect x=\"" + std::to_string(lx) + "\" y=\"" + std::to_string(kMargin + 16) +
         "\" width=\"12\" height=\"12\" fill=\"" + ramp(0.0) + "\"/>\n";
  svg += "<text class=\"legend-min\" x=\"" + std::to_string(lx + 16) + "\" y=\"" +
         std::to_string(kMargin + 26) + "\">0</text>\n";
  svg += "</svg>\n";

  io::write_text_file(svg_path, svg);
  confusion::write_csv(sub, csv_path, class_subset);
  return summary;
}

nlohmann::ordered_json to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["overall_accuracy"] = number_or_null(r.overall_accuracy);
  j["worst_class_accuracy"] = number_or_null(r.worst_class_accuracy);
  j["worst_class_index"] = r.worst_class_index;
  j["wce"] = r.wce;
  j["head_accuracy"] = number_or_null(r.head_accuracy);
  j["medium_accuracy"] = number_or_null(r.medium_accuracy);
  j["tail_accuracy"] = number_or_null(r.tail_accuracy);
  j["per_class_accuracy"] = array_of(r.per_class_accuracy);
  j["per_class_error"] = array_of(r.per_class_error);
  auto rows = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < r.confusion.entries.rows(); ++i) {
    rows.push_back(array_of(r.confusion.entries.row(i)));
  }
  j["confusion"] = rows;
  j["warnings"] = r.warnings;
  return j;
}

nlohmann::ordered_json to_json(const WorstClassReport& r) {
  nlohmann::ordered_json j;
  j["worst_train"] = number_or_null(r.worst_train);
  j["worst_test"] = number_or_null(r.worst_test);
  j["wr"] = r.wr ? nlohmann::ordered_json(*r.wr) : nlohmann::ordered_json("undefined");
  return j;
}

nlohmann::ordered_json to_json(const BoundReport& r) {
  nlohmann::ordered_json j;
  j["note"] = "complexity term is reported up to a universal constant (set to 1)";
  j["valid"] = r.valid;
  j["gamma"] = r.gamma;
  j["delta"] = r.delta;
  j["k"] = r.k;
  j["m_min"] = r.m_min;
  j["depth"] = r.depth;
  j["width"] = r.width;
  j["b_max"] = r.b_max;
  j["nu"] = r.nu;
  j["spectral_term"] = r.spectral_term;
  j["l1_term"] = r.l1_term;
  j["psi"] = number_or_null(r.psi);
  j["complexity_term"] = number_or_null(r.complexity_term);
  j["lambdas"] = array_of(r.lambdas);
  j["per_class_bounds"] = array_of(r.per_class_bounds);
  return j;
}

}  // namespace car::analysis
