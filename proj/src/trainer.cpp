#include "car/trainer.hpp"

#include <cmath>
#include <numbers>

#include "car/io.hpp"
#include "car/spectral.hpp"

namespace car::train {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ParameterError("train config: " + msg); };
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) fail("alpha must be >= 0");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) fail("gamma must be >= 0");
  if (!(beta >= 0.0 && beta < 1.0)) fail("beta must lie in [0, 1)");
  if (!(r0 > 0.0) || !std::isfinite(r0)) fail("r0 must be > 0");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be > 0");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) fail("weight_decay must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) fail("adam_beta1 must lie in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) fail("adam_beta2 must lie in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be > 0");
}

nlohmann::ordered_json to_json(const TrainConfig& cfg) {
  nlohmann::ordered_json j;
  j["alpha"] = cfg.alpha;
  j["gamma"] = cfg.gamma;
  j["beta"] = cfg.beta;
  j["r0"] = cfg.r0;
  j["learning_rate"] = cfg.learning_rate;
  j["weight_decay"] = cfg.weight_decay;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["seed"] = cfg.seed;
  j["regularizer_on"] = cfg.regularizer_on;
  j["weight_mode"] = cfg.weight_mode == confusion::WeightMode::kFrequency ? "frequency" : "count";
  j["softmax_mode"] = cfg.softmax_mode == confusion::SoftmaxMode::kMasked ? "masked" : "full";
  j["absent_column_mode"] =
      cfg.absent_column_mode == confusion::AbsentColumnMode::kLiteral ? "literal" : "hold";
  j["lr_schedule"] = cfg.lr_schedule == LrSchedule::kConstant ? "constant" : "cosine";
  j["adam_beta1"] = cfg.adam_beta1;
  j["adam_beta2"] = cfg.adam_beta2;
  j["adam_eps"] = cfg.adam_eps;
  return j;
}

namespace {

template <typename Enum>
Enum pick(const nlohmann::ordered_json& j, const char* key, Enum current,
          std::initializer_list<std::pair<const char*, Enum>> choices) {
  if (!j.contains(key)) return current;
  const std::string v = j.at(key).get<std::string>();
  for (const auto& [name, value] : choices)
    if (v == name) return value;
  throw ParameterError(std::string("train config: bad value '") + v + "' for " + key);
}

}  // namespace

TrainConfig train_config_from_json(const nlohmann::ordered_json& j) {
  if (!j.is_object()) throw ParameterError("train config: expected a JSON object");
  static const char* kKnown[] = {"alpha",        "gamma",          "beta",
                                 "r0",           "learning_rate",  "weight_decay",
                                 "epochs",       "batch_size",     "seed",
                                 "regularizer_on", "weight_mode",  "softmax_mode",
                                 "absent_column_mode", "lr_schedule", "adam_beta1",
                                 "adam_beta2",   "adam_eps"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(std::begin(kKnown), std::end(kKnown), key) == std::end(kKnown)) {
      throw ParameterError("train config: unknown key '" + key + "'");
    }
  }
  TrainConfig c;
  try {
    c.alpha = j.value("alpha", c.alpha);
    c.gamma = j.value("gamma", c.gamma);
    c.beta = j.value("beta", c.beta);
    c.r0 = j.value("r0", c.r0);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.regularizer_on = j.value("regularizer_on", c.regularizer_on);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.weight_mode = pick(j, "weight_mode", c.weight_mode,
                         {{"frequency", confusion::WeightMode::kFrequency},
                          {"count", confusion::WeightMode::kCount}});
    c.softmax_mode = pick(j, "softmax_mode", c.softmax_mode,
                          {{"masked", confusion::SoftmaxMode::kMasked},
                           {"full", confusion::SoftmaxMode::kFull}});
    c.absent_column_mode = pick(j, "absent_column_mode", c.absent_column_mode,
                                {{"literal", confusion::AbsentColumnMode::kLiteral},
                                 {"hold", confusion::AbsentColumnMode::kHold}});
    c.lr_schedule = pick(j, "lr_schedule", c.lr_schedule,
                         {{"constant", LrSchedule::kConstant}, {"cosine", LrSchedule::kCosine}});
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string RunHistory::csv_header() {
  return "step,epoch,ce_loss,reg_value,total_loss,grad_norm,reg_grad_norm,learning_rate\n";
}

std::string RunHistory::steps_csv() const {
  std::string out = csv_header();
  for (const auto& s : steps) {
    out += std::to_string(s.step) + ',' + std::to_string(s.epoch) + ',' +
           io::format_double(s.ce_loss) + ',' + io::format_double(s.reg_value) + ',' +
           io::format_double(s.total_loss) + ',' + io::format_double(s.grad_norm) + ',' +
           io::format_double(s.reg_grad_norm) + ',' + io::format_double(s.learning_rate) + '\n';
  }
  return out;
}

LossTerms total_loss(const ad::Tensor& logits, std::span<const int> labels,
                     const confusion::EmaState& ema, const confusion::ClassWeighting& weights,
                     const TrainConfig& cfg) {
  if (labels.empty()) throw EmptyBatchError("total_loss: empty batch");
  const int k = static_cast<int>(logits.cols());
  LossTerms out;
  out.ce = ad::cross_entropy_mean(logits, labels);

  const auto soft = confusion::soft_confusion(logits, labels, cfg.gamma, k, cfg.softmax_mode);
  const auto upd = confusion::ema_update(ema, soft.matrix, soft.absent, cfg.absent_column_mode);
  out.reg = confusion::regularizer(upd.node, weights);
  out.state = upd.state;
  out.total = cfg.regularizer_active() ? ad::add(out.ce, ad::scale(out.reg, cfg.alpha)) : out.ce;
  return out;
}

void adamw_step(std::span<Matrix> params, std::span<const Matrix> grads, AdamWState& state,
                const AdamWOptions& opts) {
  if (params.size() != grads.size()) {
    throw DimensionError("adamw: parameter and gradient counts differ");
  }
  if (state.m.empty()) {
    for (const Matrix& p : params) {
      state.m.emplace_back(p.rows(), p.cols());
      state.v.emplace_back(p.rows(), p.cols());
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].same_shape(grads[i]) || !params[i].same_shape(state.m[i])) {
      throw DimensionError("adamw: shape mismatch at parameter " + std::to_string(i));
    }
    if (!grads[i].all_finite()) {
      throw NumericError("adamw: non-finite gradient at step " + std::to_string(state.t + 1));
    }
  }

  ++state.t;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(opts.beta1, t);
  const double bc2 = 1.0 - std::pow(opts.beta2, t);
  const double decay = 1.0 - opts.lr * opts.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = params[i];
    Matrix& m = state.m[i];
    Matrix& v = state.v[i];
    const Matrix& g = grads[i];
    for (std::size_t e = 0; e < p.size(); ++e) {
      p[e] *= decay;
      m[e] = opts.beta1 * m[e] + (1.0 - opts.beta1) * g[e];
      v[e] = opts.beta2 * v[e] + (1.0 - opts.beta2) * g[e] * g[e];
      const double m_hat = m[e] / bc1;
      const double v_hat = v[e] / bc2;
      p[e] -= opts.lr * m_hat / (std::sqrt(v_hat) + opts.eps);
    }
  }
}

confusion::ClassWeighting weights_for(const data::LabeledDataset& ds, const TrainConfig& cfg) {
  return confusion::class_weights_from_counts(ds.class_counts, cfg.r0, cfg.weight_mode);
}

std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
  std::uint64_t x = seed * 0x9E3779B97F4A7C15ULL + epoch + 1;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

namespace {

double norm_of(std::span<const Matrix> grads) {
  double s = 0.0;
  for (const Matrix& g : grads) s += dot(g.values(), g.values());
  return std::sqrt(s);
}

EpochRecord epoch_record(std::size_t epoch, const model::ModelParams& params,
                         const data::LabeledDataset& ds, const confusion::EmaState& ema,
                         const confusion::ClassWeighting& weights) {
  EpochRecord r;
  r.epoch = epoch;
  const auto preds = model::predict(params, ds.features);
  std::vector<double> correct(static_cast<std::size_t>(ds.k), 0.0);
  std::size_t total_correct = 0;
  for (std::size_t q = 0; q < preds.size(); ++q) {
    if (preds[q] == ds.labels[q]) {
      correct[static_cast<std::size_t>(ds.labels[q])] += 1.0;
      ++total_correct;
    }
  }
  for (std::size_t j = 0; j < correct.size(); ++j) {
    r.per_class_accuracy.push_back(ds.class_counts[j] == 0
                                       ? std::nan("")
                                       : correct[j] / static_cast<double>(ds.class_counts[j]));
  }
  r.train_accuracy = static_cast<double>(total_correct) / static_cast<double>(ds.size());
  r.reg_snapshot = spectral::power_iteration(matmul(ema.c_hat, weights.lambda_matrix())).sigma;
  return r;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, model::ModelParams params,
                  const data::LabeledDataset& ds) {
  cfg.validate();
  params.validate();
  if (ds.k < 2) throw DegenerateClassError("train: need at least two classes");
  if (params.input_dim != ds.dim() || params.num_classes != static_cast<std::size_t>(ds.k)) {
    throw DimensionError("train: model is " + std::to_string(params.input_dim) + "->" +
                         std::to_string(params.num_classes) + " but data has d=" +
                         std::to_string(ds.dim()) + ", k=" + std::to_string(ds.k));
  }

  TrainResult result;
  result.weights = weights_for(ds, cfg);
  result.ema = confusion::EmaState::zeros(static_cast<std::size_t>(ds.k), cfg.beta);

  const std::size_t n_layers = params.layers.size();
  std::vector<Matrix> theta = params.layers;
  theta.insert(theta.end(), params.biases.begin(), params.biases.end());

  AdamWState opt;
  const std::size_t batches_per_epoch = (ds.size() + cfg.batch_size - 1) / cfg.batch_size;
  const double total_steps = static_cast<double>(cfg.epochs * batches_per_epoch);
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& batch : data::batch_iterator(ds.size(), cfg.batch_size, epoch_seed(cfg.seed, epoch))) {
      const data::LabeledDataset b = ds.subset(batch);

      ad::Graph g;
      std::vector<ad::Tensor> leaves;
      for (const Matrix& p : theta) leaves.push_back(g.leaf(p));
      const auto ws = std::span(leaves).first(n_layers);
      const auto bs = std::span(leaves).subspan(n_layers);
      LossTerms terms;
      try {
        const ad::Tensor logits = model::forward(ws, bs, g.constant(b.features));
        terms = total_loss(logits, b.labels, result.ema, result.weights, cfg);
      } catch (const NumericError& e) {
        throw TrainingAborted("train: step " + std::to_string(step + 1) + ": " + e.what(), step,
                              result.history);
      }

      StepRecord rec;
      rec.step = step + 1;
      rec.epoch = epoch;
      rec.ce_loss = terms.ce.item();
      rec.reg_value = terms.reg.item();
      rec.total_loss = terms.total.item();
      if (!std::isfinite(rec.total_loss)) {
        throw TrainingAborted("train: non-finite loss at step " + std::to_string(rec.step) +
                                  " (ce=" + io::format_double(rec.ce_loss) +
                                  ", reg=" + io::format_double(rec.reg_value) + ")",
                              step, result.history);
      }

      const ad::Gradients grads = g.backward(terms.total);
      std::vector<Matrix> grad_list;
      for (const ad::Tensor& l : leaves) grad_list.push_back(grads[l]);
      rec.grad_norm = norm_of(grad_list);

      const ad::Gradients reg_grads = g.backward(terms.reg);
      std::vector<Matrix> reg_list;
      for (const ad::Tensor& l : leaves) reg_list.push_back(reg_grads[l]);
      rec.reg_grad_norm = norm_of(reg_list);

      AdamWOptions o;
      o.lr = cfg.lr_schedule == LrSchedule::kCosine
                 ? cfg.learning_rate * 0.5 *
                       (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total_steps))
                 : cfg.learning_rate;
      o.weight_decay = cfg.weight_decay;
      o.beta1 = cfg.adam_beta1;
      o.beta2 = cfg.adam_beta2;
      o.eps = cfg.adam_eps;
      rec.learning_rate = o.lr;
      try {
        adamw_step(theta, grad_list, opt, o);
      } catch (const NumericError& e) {
        throw TrainingAborted(e.what(), step, result.history);
      }

      result.ema = terms.state;
      result.history.steps.push_back(rec);
      ++step;
    }
    for (std::size_t l = 0; l < n_layers; ++l) params.layers[l] = theta[l];
    for (std::size_t l = 0; l < params.biases.size(); ++l) params.biases[l] = theta[n_layers + l];
    result.history.epochs.push_back(epoch_record(epoch, params, ds, result.ema, result.weights));
  }

  for (std::size_t l = 0; l < n_layers; ++l) params.layers[l] = theta[l];
  for (std::size_t l = 0; l < params.biases.size(); ++l) params.biases[l] = theta[n_layers + l];
  result.model = std::move(params);
  return result;
}

}  // namespace car::train
