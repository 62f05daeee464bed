#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "car/autodiff.hpp"
#include "car/confusion.hpp"
#include "car/data.hpp"
#include "car/error.hpp"
#include "car/model.hpp"

namespace car::train {

enum class LrSchedule { kConstant, kCosine };

struct TrainConfig {
  double alpha = 0.5;
  double gamma = 0.1;
  double beta = 0.5;
  double r0 = 0.2;
  double learning_rate = 1e-4;
  double weight_decay = 5e-4;
  std::size_t epochs = 1;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  bool regularizer_on = true;
  confusion::WeightMode weight_mode = confusion::WeightMode::kFrequency;
  confusion::SoftmaxMode softmax_mode = confusion::SoftmaxMode::kMasked;
  confusion::AbsentColumnMode absent_column_mode = confusion::AbsentColumnMode::kLiteral;
  LrSchedule lr_schedule = LrSchedule::kConstant;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  // α ≥ 0, γ ≥ 0, β ∈ [0,1), r0 > 0, batch_size ≥ 1, lr > 0, wd ≥ 0.
  void validate() const;
  // Whether the regularizer feeds the gradient.
  bool regularizer_active() const noexcept { return regularizer_on && alpha > 0.0; }
};

nlohmann::ordered_json to_json(const TrainConfig& cfg);
// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::ordered_json& j);

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double ce_loss = 0.0;
  double reg_value = 0.0;
  double total_loss = 0.0;
  double grad_norm = 0.0;
  // ‖∂R/∂θ‖ for the regularizer alone (before α).
  double reg_grad_norm = 0.0;
  double learning_rate = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::vector<double> per_class_accuracy;
  double train_accuracy = 0.0;
  double reg_snapshot = 0.0;  // ‖Ĉ_t Λ‖₂ at the end of the epoch
};

struct RunHistory {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;

  static std::string csv_header();
  std::string steps_csv() const;
};

struct LossTerms {
  ad::Tensor total;
  ad::Tensor ce;
  ad::Tensor reg;
  confusion::EmaState state;
};

// CE + α·‖Ĉ_t Λ‖₂ on one batch. The EMA always advances; when the
// regularizer is inactive `total` is the CE node itself.
LossTerms total_loss(const ad::Tensor& logits, std::span<const int> labels,
                     const confusion::EmaState& ema,
                     const confusion::ClassWeighting& weights, const TrainConfig& cfg);

struct AdamWOptions {
  double lr = 1e-4;
  double weight_decay = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamWState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::size_t t = 0;
};

// Decoupled weight decay θ ← θ(1 − lr·wd), then the bias-corrected Adam step.
void adamw_step(std::span<Matrix> params, std::span<const Matrix> grads, AdamWState& state,
                const AdamWOptions& opts);

// Raised when the loss turns non-finite mid-run.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& what, std::size_t last_good_step, RunHistory history)
      : NumericError(what), last_good_step_(last_good_step), history_(std::move(history)) {}
  std::size_t last_good_step() const noexcept { return last_good_step_; }
  const RunHistory& history() const noexcept { return history_; }

 private:
  std::size_t last_good_step_;
  RunHistory history_;
};

struct TrainResult {
  model::ModelParams model;
  RunHistory history;
  confusion::EmaState ema;
  confusion::ClassWeighting weights;
};

// Shuffle seed of `epoch` for a run seeded with `seed`.
std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch);

confusion::ClassWeighting weights_for(const data::LabeledDataset& ds, const TrainConfig& cfg);

TrainResult train(const TrainConfig& cfg, model::ModelParams model,
                  const data::LabeledDataset& ds);

}  // namespace car::train
