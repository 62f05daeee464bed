#include "car/experiment.hpp"

#include <algorithm>
#include <cmath>

#include "car/error.hpp"
#include "car/io.hpp"
#include "car/spectral.hpp"

namespace car::experiment {

using json = nlohmann::ordered_json;

std::string dump(const json& j) { return j.dump(2) + "\n"; }

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* block) {
  if (!j.is_object()) throw ParameterError(std::string("spec: block '") + block + "' must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      throw ParameterError(std::string("spec: unknown key '") + key + "' in block '" + block + "'");
    }
  }
}

json summary_block(const analysis::MetricsReport& m) {
  json j;
  auto num = [](double x) { return std::isfinite(x) ? json(x) : json(nullptr); };
  j["overall_accuracy"] = num(m.overall_accuracy);
  j["worst_class_accuracy"] = num(m.worst_class_accuracy);
  j["worst_class_index"] = m.worst_class_index;
  j["head_accuracy"] = num(m.head_accuracy);
  j["medium_accuracy"] = num(m.medium_accuracy);
  j["tail_accuracy"] = num(m.tail_accuracy);
  j["wce"] = m.wce;
  return j;
}

std::string epochs_csv(const train::RunHistory& h) {
  std::string out = "epoch,train_accuracy,reg_snapshot";
  const std::size_t k = h.epochs.empty() ? 0 : h.epochs.front().per_class_accuracy.size();
  for (std::size_t j = 0; j < k; ++j) out += ",acc_class_" + std::to_string(j);
  out += '\n';
  for (const auto& e : h.epochs) {
    out += std::to_string(e.epoch) + ',' + io::format_double(e.train_accuracy) + ',' +
           io::format_double(e.reg_snapshot);
    for (double a : e.per_class_accuracy) out += ',' + io::format_double(a);
    out += '\n';
  }
  return out;
}

}  // namespace

json to_json(const ExperimentSpec& spec) {
  json d;
  const auto& b = spec.dataset;
  if (b.kind == DatasetBlock::Kind::kSynthetic) {
    d["kind"] = "synthetic";
    d["k"] = b.synth.k;
    d["d"] = b.synth.d;
    d["n_max"] = b.synth.n_max;
    d["imbalance_factor"] = b.synth.imbalance_factor;
    d["cluster_spread"] = b.synth.cluster_spread;
    d["seed"] = b.synth.seed;
    if (b.synth.sample_seed) d["sample_seed"] = *b.synth.sample_seed;
    d["test_per_class"] = b.test_per_class;
  } else {
    d["kind"] = "csv";
    d["path"] = b.path;
    if (!b.test_path.empty()) d["test_path"] = b.test_path;
    if (b.subset_imbalance_factor) {
      d["imbalance_factor"] = *b.subset_imbalance_factor;
      d["subset_seed"] = b.subset_seed;
    }
  }
  json m;
  m["n"] = spec.model.n;
  m["h"] = spec.model.h;
  if (spec.model.init_seed) m["init_seed"] = *spec.model.init_seed;
  json e;
  e["delta"] = spec.eval.delta;
  e["gamma"] = spec.eval.gamma;
  e["head_min"] = spec.eval.head_min;
  e["tail_max"] = spec.eval.tail_max;

  json j;
  j["dataset"] = d;
  j["model"] = m;
  j["train"] = train::to_json(spec.train);
  j["eval"] = e;
  j["output"] = spec.output;
  return j;
}

ExperimentSpec spec_from_json(const json& j) {
  reject_unknown(j, {"dataset", "model", "train", "eval", "output"}, "root");
  ExperimentSpec s;
  try {
    if (j.contains("dataset")) {
      const json& d = j.at("dataset");
      const std::string kind = d.value("kind", std::string("synthetic"));
      if (kind == "synthetic") {
        reject_unknown(d, {"kind", "k", "d", "n_max", "imbalance_factor", "cluster_spread", "seed",
                           "sample_seed", "test_per_class"},
                       "dataset");
        auto& p = s.dataset.synth;
        p.k = d.value("k", p.k);
        p.d = d.value("d", p.d);
        p.n_max = d.value("n_max", p.n_max);
        p.imbalance_factor = d.value("imbalance_factor", p.imbalance_factor);
        p.cluster_spread = d.value("cluster_spread", p.cluster_spread);
        p.seed = d.value("seed", p.seed);
        if (d.contains("sample_seed")) p.sample_seed = d.at("sample_seed").get<std::uint64_t>();
        s.dataset.test_per_class = d.value("test_per_class", s.dataset.test_per_class);
      } else if (kind == "csv") {
        reject_unknown(d, {"kind", "path", "test_path", "imbalance_factor", "subset_seed"}, "dataset");
        s.dataset.kind = DatasetBlock::Kind::kCsv;
        s.dataset.path = d.at("path").get<std::string>();
        s.dataset.test_path = d.value("test_path", std::string());
        if (d.contains("imbalance_factor")) {
          s.dataset.subset_imbalance_factor = d.at("imbalance_factor").get<double>();
        }
        s.dataset.subset_seed = d.value("subset_seed", s.dataset.subset_seed);
      } else {
        throw ParameterError("spec: dataset.kind must be 'synthetic' or 'csv'");
      }
    }
    if (j.contains("model")) {
      const json& m = j.at("model");
      reject_unknown(m, {"n", "h", "init_seed"}, "model");
      s.model.n = m.value("n", s.model.n);
      s.model.h = m.value("h", s.model.h);
      if (m.contains("init_seed")) s.model.init_seed = m.at("init_seed").get<std::uint64_t>();
    }
    if (j.contains("train")) s.train = train::train_config_from_json(j.at("train"));
    if (j.contains("eval")) {
      const json& e = j.at("eval");
      reject_unknown(e, {"delta", "gamma", "head_min", "tail_max"}, "eval");
      s.eval.delta = e.value("delta", s.eval.delta);
      s.eval.gamma = e.value("gamma", s.eval.gamma);
      s.eval.head_min = e.value("head_min", s.eval.head_min);
      s.eval.tail_max = e.value("tail_max", s.eval.tail_max);
    }
    s.output = j.value("output", s.output);
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(std::string("spec: ") + e.what());
  }
  s.train.validate();
  if (!(s.eval.delta > 0.0 && s.eval.delta < 1.0)) throw ParameterError("spec: eval.delta must lie in (0, 1)");
  if (!(s.eval.gamma > 0.0)) throw ParameterError("spec: eval.gamma must be > 0");
  return s;
}

ExperimentSpec load_spec(const std::filesystem::path& path) {
  const std::string text = io::read_text_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError("spec " + path.string() + ": " + e.what());
  }
  return spec_from_json(j);
}

Datasets materialize(const DatasetBlock& block) {
  Datasets out;
  if (block.kind == DatasetBlock::Kind::kSynthetic) {
    out.train = data::synth_longtail_gaussians(block.synth);
    if (block.test_per_class > 0) {
      data::SynthParams t = block.synth;
      t.n_max = block.test_per_class;
      t.imbalance_factor = 1.0;
      // Same class means, fresh noise.
      t.sample_seed = block.synth.sample_seed.value_or(block.synth.seed) ^ 0x5EED7E57ULL;
      out.test = data::synth_longtail_gaussians(t);
    }
  } else {
    out.train = data::ingest_csv(block.path);
    if (block.subset_imbalance_factor) {
      out.train = data::make_longtail_subset(out.train, *block.subset_imbalance_factor, block.subset_seed);
    }
    if (!block.test_path.empty()) out.test = data::ingest_csv(block.test_path);
  }
  return out;
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  return run_experiment(spec, materialize(spec.dataset));
}

ExperimentResult run_experiment(const ExperimentSpec& spec, const Datasets& data) {
  const auto& ds = data.train;
  if (data.test && data.test->k != ds.k) {
    throw DimensionError("experiment: test set has k=" + std::to_string(data.test->k) +
                         ", training set has k=" + std::to_string(ds.k));
  }
  const auto model = model::init_mlp(spec.model.n, spec.model.h, ds.dim(),
                                     static_cast<std::size_t>(ds.k),
                                     spec.model.init_seed.value_or(spec.train.seed));
  ExperimentResult r;
  r.run = train::train(spec.train, model, ds);

  const auto split = data::split_head_medium_tail(ds.class_counts, spec.eval.head_min, spec.eval.tail_max);
  r.train_metrics = analysis::evaluate(r.run.model, ds, r.run.weights, &split);
  if (data.test) {
    r.test_metrics = analysis::evaluate(r.run.model, *data.test, r.run.weights, &split);
    r.worst_class = analysis::worst_class_report(r.train_metrics, *r.test_metrics);
  }

  json s;
  s["regularizer_enabled"] = spec.train.regularizer_active();
  s["alpha"] = spec.train.alpha;
  s["epochs"] = spec.train.epochs;
  s["steps"] = r.run.history.steps.size();
  s["ema_steps"] = r.run.ema.step;
  if (!r.run.history.steps.empty()) {
    const auto& last = r.run.history.steps.back();
    s["final_ce_loss"] = last.ce_loss;
    s["final_reg_value"] = last.reg_value;
    s["final_total_loss"] = last.total_loss;
  }
  s["final_reg_norm"] =
      spectral::power_iteration(matmul(r.run.ema.c_hat, r.run.weights.lambda_matrix())).sigma;
  s["train"] = summary_block(r.train_metrics);
  if (r.test_metrics) {
    s["test"] = summary_block(*r.test_metrics);
    s["worst_class"] = analysis::to_json(*r.worst_class);
    s["worst_class_gap"] = r.worst_class->worst_train - r.worst_class->worst_test;
  }
  r.summary = s;
  return r;
}

ExperimentResult run_to_directory(const ExperimentSpec& spec, const std::filesystem::path& dir) {
  io::write_text_file(dir / "spec.json", dump(to_json(spec)));
  ExperimentResult r;
  try {
    r = run_experiment(spec);
  } catch (const train::TrainingAborted& e) {
    json a;
    a["error"] = e.what();
    a["last_good_step"] = e.last_good_step();
    io::write_text_file(dir / "abort.json", dump(a));
    io::write_text_file(dir / "history.csv", e.history().steps_csv());
    throw;
  }
  model::save_checkpoint(r.run.model, dir / "checkpoint.carm");
  io::write_text_file(dir / "history.csv", r.run.history.steps_csv());
  io::write_text_file(dir / "epochs.csv", epochs_csv(r.run.history));
  io::write_text_file(dir / "summary.json", dump(r.summary));
  return r;
}

}  // namespace car::experiment
