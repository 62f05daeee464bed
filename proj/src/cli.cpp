#include "car/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "car/analysis.hpp"
#include "car/data.hpp"
#include "car/error.hpp"
#include "car/experiment.hpp"
#include "car/io.hpp"
#include "car/model.hpp"
#include "car/rng.hpp"
#include "car/sweep.hpp"

namespace car::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string out;
  bool quiet = false;

  fs::path out_dir(const std::string& fallback = ".") const {
    return out.empty() ? fs::path(fallback) : fs::path(out);
  }
};

struct SynthArgs {
  int k = 10;
  std::size_t d = 2;
  std::size_t n_max = 500;
  double imbalance_factor = 100.0;
  double spread = 1.0;
  std::size_t test_per_class = 0;
};

struct EvalArgs {
  std::string checkpoint;
  std::string dataset;
  std::string test;
  double r0 = 0.2;
  std::size_t classes = 10;
};

struct BoundArgs {
  std::string checkpoint;
  std::string dataset;
  double gamma = 0.1;
  double delta = 0.05;
  double r0 = 0.2;
};

struct SweepArgs {
  std::string spec;
  std::string param;
  std::vector<double> values;
};

// Short form for console lines; files keep full precision.
std::string brief(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

int cmd_synth(const SynthArgs& a, const Globals& g, std::ostream& out) {
  if (!(a.imbalance_factor >= 1.0)) {
    throw ParameterError("--if must be >= 1 (imbalance factor is largest/smallest class count), got " +
                         brief(a.imbalance_factor));
  }
  data::SynthParams p;
  p.k = a.k;
  p.d = a.d;
  p.n_max = a.n_max;
  p.imbalance_factor = a.imbalance_factor;
  p.cluster_spread = a.spread;
  p.seed = g.seed.value_or(0);
  const auto ds = data::synth_longtail_gaussians(p);
  const fs::path dir = g.out_dir();
  data::export_csv(ds, dir / "dataset.csv");
  io::write_text_file(dir / "profile.json", data::profile_json(ds));

  json rec;
  rec["command"] = "synth";
  rec["seed"] = p.seed;
  rec["k"] = p.k;
  rec["d"] = p.d;
  rec["n_max"] = p.n_max;
  rec["imbalance_factor"] = p.imbalance_factor;
  rec["cluster_spread"] = p.cluster_spread;
  rec["test_per_class"] = a.test_per_class;
  io::write_text_file(dir / "seed.json", experiment::dump(rec));

  if (a.test_per_class > 0) {
    experiment::DatasetBlock b;
    b.synth = p;
    b.test_per_class = a.test_per_class;
    data::export_csv(*experiment::materialize(b).test, dir / "test.csv");
  }
  if (!g.quiet) {
    out << "wrote " << ds.size() << " samples (" << ds.k << " classes, counts "
        << ds.class_counts.front() << ".." << ds.class_counts.back() << ") to "
        << (dir / "dataset.csv").string() << "\n";
  }
  return kOk;
}

int cmd_train(const std::string& spec_path, const Globals& g, std::ostream& out) {
  auto spec = experiment::load_spec(spec_path);
  if (g.seed) spec.train.seed = *g.seed;
  const fs::path dir = g.out_dir(spec.output);
  const auto r = experiment::run_to_directory(spec, dir);
  if (!g.quiet) {
    out << "trained " << r.run.history.steps.size() << " steps; train acc "
        << brief(r.train_metrics.overall_accuracy) << ", worst-class "
        << brief(r.train_metrics.worst_class_accuracy) << "; run in " << dir.string()
        << "\n";
  }
  return kOk;
}

std::vector<int> heatmap_classes(int k, std::size_t want, std::uint64_t seed) {
  std::vector<int> all(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) all[static_cast<std::size_t>(j)] = j;
  Rng rng(seed);
  rng.shuffle(all);
  all.resize(std::min<std::size_t>(want, all.size()));
  std::sort(all.begin(), all.end());
  return all;
}

int cmd_eval(const EvalArgs& a, const Globals& g, std::ostream& out) {
  const auto model = model::load_checkpoint(a.checkpoint);
  const auto ds = data::ingest_csv(a.dataset);
  const auto weights = confusion::class_weights_from_counts(ds.class_counts, a.r0);
  const auto split = data::split_head_medium_tail(ds.class_counts);
  const auto metrics = analysis::evaluate(model, ds, weights, &split);

  json j;
  j["note"] = "class weights and head/medium/tail split from the first dataset";
  j["r0"] = a.r0;
  j["dataset"] = analysis::to_json(metrics);
  const analysis::MetricsReport* shown = &metrics;
  std::optional<analysis::MetricsReport> test;
  if (!a.test.empty()) {
    const auto tds = data::ingest_csv(a.test);
    test = analysis::evaluate(model, tds, weights, &split);
    j["test"] = analysis::to_json(*test);
    j["worst_class"] = analysis::to_json(analysis::worst_class_report(metrics, *test));
    shown = &*test;
  }
  const fs::path dir = g.out_dir();
  const auto subset = heatmap_classes(ds.k, a.classes, g.seed.value_or(0));
  analysis::heatmap_export(shown->confusion.entries, subset, dir / "heatmap.svg", dir / "heatmap.csv");
  j["heatmap_classes"] = subset;
  io::write_text_file(dir / "metrics.json", experiment::dump(j));
  if (!g.quiet) {
    out << "accuracy " << brief(shown->overall_accuracy) << ", worst-class "
        << brief(shown->worst_class_accuracy) << " (class " << shown->worst_class_index
        << "); wrote " << (dir / "metrics.json").string() << "\n";
  }
  return kOk;
}

int cmd_bound(const BoundArgs& a, const Globals& g, std::ostream& out) {
  const auto model = model::load_checkpoint(a.checkpoint);
  const auto ds = data::ingest_csv(a.dataset);
  const auto weights = confusion::class_weights_from_counts(ds.class_counts, a.r0);
  const auto report = analysis::bound_eval(model, ds, a.gamma, a.delta, weights);
  const fs::path dir = g.out_dir();
  io::write_text_file(dir / "bound.json", experiment::dump(analysis::to_json(report)));
  if (!g.quiet) {
    out << "spectral term " << brief(report.spectral_term) << ", complexity term "
        << brief(report.complexity_term) << " (up to a universal constant)\n";
  }
  return kOk;
}

unsigned sweep_threads() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("CAR_THREADS")) {
    try {
      const long long v = io::parse_int(env);
      if (v >= 1) n = static_cast<unsigned>(v);
    } catch (const FormatError&) {
      throw ParameterError("CAR_THREADS must be a positive integer");
    }
  }
  return n;
}

int cmd_sweep(const SweepArgs& a, const Globals& g, std::ostream& out) {
  auto spec = experiment::load_spec(a.spec);
  if (g.seed) spec.train.seed = *g.seed;
  const auto param = experiment::parse_sweep_param(a.param);
  if (a.values.empty()) throw ParameterError("sweep: --values needs at least one value");
  const fs::path dir = g.out_dir(spec.output);
  const auto rows = experiment::run_sweep(spec, param, a.values, dir, sweep_threads());

  io::write_text_file(dir / "sweep.csv", experiment::sweep_csv(param, rows));
  std::vector<double> xs, overall, worst;
  for (const auto& r : rows) {
    xs.push_back(r.value);
    overall.push_back(r.overall_accuracy);
    worst.push_back(r.worst_class_accuracy);
  }
  const std::string name(experiment::sweep_param_name(param));
  io::write_text_file(dir / "sweep_overall_accuracy.svg",
                      experiment::line_plot_svg("overall accuracy vs " + name, name, "accuracy", xs, overall));
  io::write_text_file(dir / "sweep_worst_class_accuracy.svg",
                      experiment::line_plot_svg("worst-class accuracy vs " + name, name, "accuracy", xs, worst));
  if (!g.quiet) {
    for (const auto& r : rows) {
      out << name << "=" << brief(r.value) << "  overall "
          << brief(r.overall_accuracy) << "  worst-class "
          << brief(r.worst_class_accuracy) << "  " << r.status << "\n";
    }
  }
  return kOk;
}

int exit_code_for(const Error& e) {
  if (dynamic_cast<const InvalidRegimeError*>(&e)) return kInvalidRegime;
  if (dynamic_cast<const NumericError*>(&e)) return kNumericAbort;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const IngestionError*>(&e) ||
      dynamic_cast<const FormatError*>(&e)) {
    return kIoError;
  }
  return kArgumentError;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Confusion-aware spectral regularization lab"};
  app.name("car");
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_flag("--quiet", g.quiet, "Suppress progress output");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Synthesize a long-tailed Gaussian dataset");
  synth->add_option("--k", sa.k, "Number of classes")->capture_default_str();
  synth->add_option("--d", sa.d, "Feature dimension")->capture_default_str();
  synth->add_option("--n-max", sa.n_max, "Largest class count")->capture_default_str();
  synth->add_option("--if", sa.imbalance_factor, "Imbalance factor (>= 1)")->capture_default_str();
  synth->add_option("--spread", sa.spread, "Cluster standard deviation")->capture_default_str();
  synth->add_option("--test-per-class", sa.test_per_class,
                    "Also write a balanced test.csv with this many samples per class");

  std::string train_spec;
  auto* train_cmd = app.add_subcommand("train", "Train from an experiment spec");
  train_cmd->add_option("spec", train_spec, "Experiment spec (JSON)")->required();

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("checkpoint", ea.checkpoint)->required();
  eval->add_option("dataset", ea.dataset, "Training (or reference) dataset CSV")->required();
  eval->add_option("--test", ea.test, "Held-out dataset CSV; enables the worst-class ratio");
  eval->add_option("--r0,--weights", ea.r0, "Class-weight smoothing r0")->capture_default_str();
  eval->add_option("--classes", ea.classes, "Classes shown in the heatmap")->capture_default_str();

  BoundArgs ba;
  auto* bound = app.add_subcommand("bound", "Evaluate the worst-class generalization bound");
  bound->add_option("checkpoint", ba.checkpoint)->required();
  bound->add_option("dataset", ba.dataset)->required();
  bound->add_option("--gamma", ba.gamma)->capture_default_str();
  bound->add_option("--delta", ba.delta)->capture_default_str();
  bound->add_option("--r0", ba.r0)->capture_default_str();

  SweepArgs wa;
  auto* sweep = app.add_subcommand("sweep", "Sweep one hyperparameter");
  sweep->add_option("spec", wa.spec)->required();
  sweep->add_option("--param", wa.param, "beta | r0 | alpha | gamma")->required();
  sweep->add_option("--values", wa.values, "Comma-separated values")->delimiter(',')->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kArgumentError;
  }

  try {
    if (*synth) return cmd_synth(sa, g, out);
    if (*train_cmd) return cmd_train(train_spec, g, out);
    if (*eval) return cmd_eval(ea, g, out);
    if (*bound) return cmd_bound(ba, g, out);
    if (*sweep) return cmd_sweep(wa, g, out);
  } catch (const train::TrainingAborted& e) {
    err << "error: " << e.what() << " (last good step " << e.last_good_step() << ")\n";
    return kNumericAbort;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kIoError;
  }
  return kArgumentError;
}

}  // namespace car::cli
