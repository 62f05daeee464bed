#include "car/confusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "car/error.hpp"
#include "car/io.hpp"
#include "car/spectral.hpp"

namespace car::confusion {

double ConfusionMatrix::column_sum(std::size_t j) const {
  double s = 0.0;
  for (std::size_t i = 0; i < entries.rows(); ++i) s += entries(i, j);
  return s;
}

bool ConfusionMatrix::any_absent() const {
  return std::find(absent.begin(), absent.end(), true) != absent.end();
}

namespace {

void require_classes(int k, std::string_view op) {
  if (k < 2) {
    throw DegenerateClassError(std::string(op) + ": need k >= 2, got " + std::to_string(k));
  }
}

void require_index(int idx, int k, std::string_view op, std::string_view what) {
  if (idx < 0 || idx >= k) {
    throw DimensionError(std::string(op) + ": " + std::string(what) + " " +
                         std::to_string(idx) + " outside [0, " + std::to_string(k) + ")");
  }
}

std::vector<std::size_t> class_histogram(std::span<const int> labels, int k,
                                         std::string_view op) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
  for (int y : labels) {
    require_index(y, k, op, "label");
    ++counts[static_cast<std::size_t>(y)];
  }
  return counts;
}

// Divides column j by m_j and marks classes with m_j = 0 as absent.
ConfusionMatrix finish(Matrix tallies, const std::vector<std::size_t>& counts) {
  ConfusionMatrix c;
  c.absent.assign(counts.size(), false);
  for (std::size_t j = 0; j < counts.size(); ++j) {
    tallies(j, j) = 0.0;
    if (counts[j] == 0) {
      c.absent[j] = true;
      continue;
    }
    const double inv = 1.0 / static_cast<double>(counts[j]);
    for (std::size_t i = 0; i < counts.size(); ++i) tallies(i, j) *= inv;
  }
  c.entries = std::move(tallies);
  return c;
}

}  // namespace

ConfusionMatrix hard_confusion(std::span<const int> predictions,
                               std::span<const int> labels, int k) {
  require_classes(k, "hard_confusion");
  if (predictions.size() != labels.size()) {
    throw DimensionError("hard_confusion: predictions and labels differ in length");
  }
  const auto counts = class_histogram(labels, k, "hard_confusion");
  Matrix tallies(static_cast<std::size_t>(k), static_cast<std::size_t>(k));
  for (std::size_t q = 0; q < labels.size(); ++q) {
    require_index(predictions[q], k, "hard_confusion", "prediction");
    if (predictions[q] != labels[q]) {
      tallies(static_cast<std::size_t>(predictions[q]), static_cast<std::size_t>(labels[q])) += 1.0;
    }
  }
  return finish(std::move(tallies), counts);
}

ConfusionMatrix hard_margin_confusion(const Matrix& logits, std::span<const int> labels,
                                      double gamma, int k) {
  require_classes(k, "hard_margin_confusion");
  if (!(gamma >= 0.0)) throw ParameterError("hard_margin_confusion: gamma must be >= 0");
  if (logits.cols() != static_cast<std::size_t>(k) || logits.rows() != labels.size()) {
    throw DimensionError("hard_margin_confusion: logits " + logits.shape_string() +
                         " do not match " + std::to_string(labels.size()) +
                         " labels and k=" + std::to_string(k));
  }
  const auto counts = class_histogram(labels, k, "hard_margin_confusion");
  Matrix tallies(static_cast<std::size_t>(k), static_cast<std::size_t>(k));
  for (std::size_t q = 0; q < labels.size(); ++q) {
    const auto row = logits.row(q);
    const auto y = static_cast<std::size_t>(labels[q]);
    std::size_t rival = y == 0 ? 1 : 0;
    for (std::size_t i = rival + 1; i < row.size(); ++i) {
      if (i != y && row[i] > row[rival]) rival = i;
    }
    if (row[y] <= gamma + row[rival]) tallies(rival, y) += 1.0;
  }
  return finish(std::move(tallies), counts);
}

SoftConfusion soft_confusion(const ad::Tensor& logits, std::span<const int> labels,
                             double gamma, int k, SoftmaxMode mode) {
  require_classes(k, "soft_confusion");
  if (!(gamma >= 0.0)) throw ParameterError("soft_confusion: gamma must be >= 0");
  const Matrix& f = logits.value();
  if (f.cols() != static_cast<std::size_t>(k) || f.rows() != labels.size()) {
    throw DimensionError("soft_confusion: logits " + f.shape_string() +
                         " do not match " + std::to_string(labels.size()) +
                         " labels and k=" + std::to_string(k));
  }
  if (labels.empty()) throw EmptyBatchError("soft_confusion: empty batch");
  const auto counts = class_histogram(labels, k, "soft_confusion");
  const auto kk = static_cast<std::size_t>(k);

  ad::Graph& g = *logits.graph();
  const ad::Tensor shifted = ad::subtract_label_logit(logits, labels);
  const ad::Tensor gate = ad::sigmoid(ad::add_scalar(shifted, gamma));

  std::vector<int> excluded(labels.begin(), labels.end());
  if (mode == SoftmaxMode::kFull) std::fill(excluded.begin(), excluded.end(), ad::kNoExclusion);
  const ad::Tensor rival = ad::masked_softmax_rows(shifted, excluded);
  const ad::Tensor per_sample = ad::mul(gate, rival);

  // Class-averaging operator: avg[q, j] = 1/m_j when y_q = j.
  Matrix avg(labels.size(), kk);
  for (std::size_t q = 0; q < labels.size(); ++q) {
    const auto y = static_cast<std::size_t>(labels[q]);
    avg(q, y) = 1.0 / static_cast<double>(counts[y]);
  }
  Matrix off_diagonal(kk, kk, 1.0);
  for (std::size_t j = 0; j < kk; ++j) off_diagonal(j, j) = 0.0;

  const ad::Tensor averaged = ad::matmul(ad::transpose(per_sample), g.constant(std::move(avg)));
  SoftConfusion out;
  out.matrix = ad::mul(averaged, g.constant(std::move(off_diagonal)));
  out.absent.assign(kk, false);
  for (std::size_t j = 0; j < kk; ++j) out.absent[j] = counts[j] == 0;
  return out;
}

ClassWeighting class_weights(std::span<const double> frequencies, double r0) {
  if (!(r0 > 0.0)) throw ParameterError("class_weights: r0 must be > 0");
  if (frequencies.empty()) throw ParameterError("class_weights: no classes");
  double total = 0.0;
  for (double m : frequencies) {
    if (!(m >= 0.0) || !std::isfinite(m)) {
      throw ParameterError("class_weights: frequencies must be finite and non-negative");
    }
    total += m;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ParameterError("class_weights: frequencies sum to " + io::format_double(total) +
                         ", expected 1");
  }
  ClassWeighting w;
  w.r0 = r0;
  w.masses.assign(frequencies.begin(), frequencies.end());
  for (double m : frequencies) w.lambdas.push_back(1.0 / std::sqrt(m + r0));
  return w;
}

ClassWeighting class_weights_from_counts(std::span<const std::size_t> counts, double r0,
                                         WeightMode mode) {
  if (!(r0 > 0.0)) throw ParameterError("class_weights: r0 must be > 0");
  std::size_t total = 0;
  for (std::size_t c : counts) total += c;
  if (total == 0) throw ParameterError("class_weights: no samples");

  std::vector<double> masses;
  masses.reserve(counts.size());
  for (std::size_t c : counts) {
    masses.push_back(mode == WeightMode::kFrequency
                         ? static_cast<double>(c) / static_cast<double>(total)
                         : static_cast<double>(c));
  }
  if (mode == WeightMode::kFrequency) return class_weights(masses, r0);

  ClassWeighting w;
  w.r0 = r0;
  w.masses = masses;
  for (double m : masses) w.lambdas.push_back(1.0 / std::sqrt(m + r0));
  return w;
}

EmaState EmaState::zeros(std::size_t k, double beta) {
  if (!(beta >= 0.0 && beta < 1.0)) throw ParameterError("ema: beta must lie in [0, 1)");
  EmaState s;
  s.c_hat = Matrix(k, k);
  s.beta = beta;
  return s;
}

EmaUpdate ema_update(const EmaState& state, const ad::Tensor& batch_soft,
                     const std::vector<bool>& absent, AbsentColumnMode mode) {
  if (!(state.beta >= 0.0 && state.beta < 1.0)) {
    throw ParameterError("ema_update: beta must lie in [0, 1)");
  }
  const Matrix& batch = batch_soft.value();
  if (!batch.same_shape(state.c_hat)) {
    throw DimensionError("ema_update: batch " + batch.shape_string() + " vs state " +
                         state.c_hat.shape_string());
  }
  ad::Graph& g = *batch_soft.graph();
  ad::Tensor node = ad::add(g.constant(state.c_hat * state.beta),
                            ad::scale(batch_soft, 1.0 - state.beta));

  const bool hold = mode == AbsentColumnMode::kHold &&
                    std::find(absent.begin(), absent.end(), true) != absent.end();
  if (hold) {
    if (absent.size() != batch.cols()) {
      throw DimensionError("ema_update: absent mask has wrong length");
    }
    const std::size_t k = batch.cols();
    Matrix keep(k, k, 1.0);
    Matrix held(k, k);
    for (std::size_t j = 0; j < k; ++j) {
      if (!absent[j]) continue;
      for (std::size_t i = 0; i < k; ++i) {
        keep(i, j) = 0.0;
        held(i, j) = state.c_hat(i, j);
      }
    }
    node = ad::add(ad::mul(node, g.constant(std::move(keep))), g.constant(std::move(held)));
  }

  EmaUpdate out{state, node};
  out.state.c_hat = node.value();
  out.state.step = state.step + 1;
  return out;
}

ad::Tensor regularizer(const ad::Tensor& ema_node, const ClassWeighting& weights) {
  if (ema_node.cols() != weights.k()) {
    throw DimensionError("regularizer: " + std::to_string(weights.k()) +
                         " weights for " + ema_node.value().shape_string() + " confusion");
  }
  for (double l : weights.lambdas) {
    if (!(l > 0.0)) throw ParameterError("regularizer: weights must be positive");
  }
  ad::Graph& g = *ema_node.graph();
  return spectral::spectral_norm(ad::matmul(ema_node, g.constant(weights.lambda_matrix())));
}

void write_csv(const Matrix& m, const std::filesystem::path& path,
               std::span<const int> header) {
  if (!header.empty() && header.size() != m.cols()) {
    throw DimensionError("write_csv: header length does not match column count");
  }
  std::string text;
  for (std::size_t c = 0; c < m.cols(); ++c) {
    if (c) text += ',';
    text += std::to_string(header.empty() ? static_cast<int>(c) : header[c]);
  }
  text += '\n';
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c) text += ',';
      text += io::format_double(m(r, c));
    }
    text += '\n';
  }
  io::write_text_file(path, text);
}

Matrix read_csv(const std::filesystem::path& path, std::vector<int>* header) {
  const std::string text = io::read_text_file(path);
  std::vector<std::string_view> lines;
  for (auto line : io::split(text, '\n')) {
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.empty()) throw FormatError("read_csv: empty file " + path.string());

  const auto head = io::split(lines[0]);
  const std::size_t cols = head.size();
  if (header) {
    header->clear();
    for (auto h : head) header->push_back(static_cast<int>(io::parse_int(h)));
  }
  Matrix m(lines.size() - 1, cols);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto fields = io::split(lines[r]);
    if (fields.size() != cols) {
      throw FormatError("read_csv: line " + std::to_string(r + 1) + " of " + path.string() +
                        " has " + std::to_string(fields.size()) + " fields, expected " +
                        std::to_string(cols));
    }
    for (std::size_t c = 0; c < cols; ++c) m(r - 1, c) = io::parse_double(fields[c]);
  }
  return m;
}

}  // namespace car::confusion
