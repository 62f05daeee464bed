#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "car/autodiff.hpp"
#include "car/matrix.hpp"

namespace car::confusion {

// Off-diagonal confusion matrix: entry (i, j) is the rate at which true class
// j is predicted (or margin-confused) as class i. Diagonal is exactly zero.
struct ConfusionMatrix {
  Matrix entries;
  // absent[j] is set when class j had no samples; its column is all zero.
  std::vector<bool> absent;

  std::size_t k() const noexcept { return entries.rows(); }
  double column_sum(std::size_t j) const;
  bool any_absent() const;
};

ConfusionMatrix hard_confusion(std::span<const int> predictions,
                               std::span<const int> labels, int k);

// Counts sample q against rival i when f[y] ≤ γ + f[i] and i is the argmax of
// f over indices ≠ y (ties toward the smallest index).
ConfusionMatrix hard_margin_confusion(const Matrix& logits,
                                      std::span<const int> labels, double gamma,
                                      int k);

// How the "softmax over non-j" factor of the surrogate is formed.
enum class SoftmaxMode {
  kMasked,  // true class removed from the normalization
  kFull,    // softmax over all K, entry i read off
};

struct SoftConfusion {
  ad::Tensor matrix;  // K×K, differentiable w.r.t. the logits
  std::vector<bool> absent;
};

// Differentiable surrogate of hard_margin_confusion: the indicator pair is
// replaced by σ(γ + f[i] − f[y]) · softmax(f − f[y])[i], averaged per class.
SoftConfusion soft_confusion(const ad::Tensor& logits, std::span<const int> labels,
                             double gamma, int k,
                             SoftmaxMode mode = SoftmaxMode::kMasked);

// What m_j means in λ_j = (m_j + r0)^(−1/2).
enum class WeightMode { kFrequency, kCount };

struct ClassWeighting {
  double r0 = 0.2;
  // The m_j values the weights were computed from.
  std::vector<double> masses;
  std::vector<double> lambdas;

  std::size_t k() const noexcept { return lambdas.size(); }
  Matrix lambda_matrix() const { return Matrix::diag(lambdas); }
};

// λ_j = (m_j + r0)^(−1/2) from relative frequencies that sum to one.
ClassWeighting class_weights(std::span<const double> frequencies, double r0);

// Weights from per-class sample counts, as relative frequencies or raw counts.
ClassWeighting class_weights_from_counts(std::span<const std::size_t> counts,
                                         double r0,
                                         WeightMode mode = WeightMode::kFrequency);

// Treatment of classes missing from a batch during the EMA update.
enum class AbsentColumnMode {
  kLiteral,  // plain recursion; absent columns decay toward zero
  kHold,     // absent columns keep their previous value
};

struct EmaState {
  Matrix c_hat;
  double beta = 0.5;
  std::size_t step = 0;

  static EmaState zeros(std::size_t k, double beta);
};

struct EmaUpdate {
  EmaState state;   // detached numeric Ĉ_t
  ad::Tensor node;  // β·const(Ĉ_{t−1}) + (1−β)·batch, gradient via batch only
};

EmaUpdate ema_update(const EmaState& state, const ad::Tensor& batch_soft,
                     const std::vector<bool>& absent = {},
                     AbsentColumnMode mode = AbsentColumnMode::kLiteral);

// ‖Ĉ Λ‖₂ as a graph node; Λ enters as a constant.
ad::Tensor regularizer(const ad::Tensor& ema_node, const ClassWeighting& weights);

// CSV: one header row of class ids (0..cols−1 unless given), then one row per
// matrix row of %.17g values.
void write_csv(const Matrix& m, const std::filesystem::path& path,
               std::span<const int> header = {});
Matrix read_csv(const std::filesystem::path& path,
                std::vector<int>* header = nullptr);

}  // namespace car::confusion
