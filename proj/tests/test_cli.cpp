#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "json.hpp"

#include "car/cli.hpp"
#include "car/data.hpp"
#include "car/experiment.hpp"
#include "car/io.hpp"
#include "car/sweep.hpp"
#include "test_util.hpp"

namespace car::cli {
namespace {

using json = nlohmann::ordered_json;
using car::testing::TempDir;
namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result call(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

json read_json(const fs::path& p) { return json::parse(io::read_text_file(p)); }

// Small separable problem the default network fits in a few hundred steps.
void write_tiny_spec(const fs::path& path, const fs::path& out, std::size_t epochs = 60) {
  experiment::ExperimentSpec s;
  s.dataset.synth.k = 3;
  s.dataset.synth.d = 2;
  s.dataset.synth.n_max = 40;
  s.dataset.synth.imbalance_factor = 2.0;
  s.dataset.synth.cluster_spread = 0.2;
  s.dataset.test_per_class = 20;
  s.model.n = 2;
  s.model.h = 16;
  s.train.learning_rate = 1e-2;
  s.train.epochs = epochs;
  s.train.batch_size = 16;
  s.output = out.string();
  io::write_text_file(path, experiment::dump(experiment::to_json(s)));
}

TEST(Cli, HelpIsOk) {
  const auto r = call({"--help"});
  EXPECT_EQ(r.code, kOk);
  EXPECT_NE(r.out.find("synth"), std::string::npos);
  EXPECT_EQ(call({"bound", "--help"}).code, kOk);
}

TEST(Cli, ArgumentErrors) {
  EXPECT_EQ(call({}).code, kArgumentError);
  EXPECT_EQ(call({"frobnicate"}).code, kArgumentError);
  EXPECT_EQ(call({"synth", "--k", "ten"}).code, kArgumentError);
  EXPECT_EQ(call({"train"}).code, kArgumentError);
}

TEST(Cli, SynthDefaults) {
  TempDir dir;
  const auto r = call({"--out", dir.path().string(), "--quiet", "synth"});
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_TRUE(r.out.empty());
  const auto ds = data::ingest_csv(dir / "dataset.csv");
  EXPECT_EQ(ds.k, 10);
  EXPECT_EQ(ds.class_counts.front(), 500u);
  EXPECT_EQ(ds.class_counts.back(), 5u);
  const json p = read_json(dir / "profile.json");
  EXPECT_EQ(p.at("imbalance_factor").get<double>(), 100.0);
  const json s = read_json(dir / "seed.json");
  EXPECT_EQ(s.at("seed").get<std::uint64_t>(), 0u);
  EXPECT_FALSE(fs::exists(dir / "test.csv"));
}

TEST(Cli, SynthByteIdenticalRerun) {
  TempDir a, b, c;
  const std::vector<std::string> tail{"synth", "--k", "4", "--n-max", "50", "--if", "10",
                                      "--test-per-class", "5"};
  auto args = [&](const TempDir& d, const char* seed) {
    std::vector<std::string> v{"--quiet", "--seed", seed, "--out", d.path().string()};
    v.insert(v.end(), tail.begin(), tail.end());
    return v;
  };
  ASSERT_EQ(call(args(a, "3")).code, kOk);
  ASSERT_EQ(call(args(b, "3")).code, kOk);
  ASSERT_EQ(call(args(c, "4")).code, kOk);
  for (const char* f : {"dataset.csv", "profile.json", "seed.json", "test.csv"}) {
    EXPECT_EQ(io::read_text_file(a / f), io::read_text_file(b / f)) << f;
  }
  EXPECT_NE(io::read_text_file(a / "dataset.csv"), io::read_text_file(c / "dataset.csv"));
  EXPECT_EQ(data::ingest_csv(a / "test.csv").class_counts, (std::vector<std::size_t>(4, 5)));
}

TEST(Cli, SynthRejectsSmallImbalance) {
  TempDir dir;
  const auto r = call({"--out", dir.path().string(), "synth", "--if", "0.5"});
  EXPECT_EQ(r.code, kArgumentError);
  EXPECT_NE(r.err.find("--if must be >= 1"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "dataset.csv"));
}

TEST(Cli, TrainEvalBound) {
  TempDir dir;
  write_tiny_spec(dir / "spec.json", dir / "run");
  auto r = call({"--quiet", "train", (dir / "spec.json").string()});
  ASSERT_EQ(r.code, kOk) << r.err;
  ASSERT_TRUE(fs::exists(dir / "run" / "checkpoint.carm"));
  const json summary = read_json(dir / "run" / "summary.json");
  EXPECT_GE(summary.at("train").at("overall_accuracy").get<double>(), 0.99);

  // The same data through the CSV path.
  const auto data = experiment::materialize(experiment::load_spec(dir / "spec.json").dataset);
  data::export_csv(data.train, dir / "train.csv");
  data::export_csv(*data.test, dir / "test.csv");

  const fs::path ev = dir / "eval";
  r = call({"--quiet", "--out", ev.string(), "eval", (dir / "run" / "checkpoint.carm").string(),
            (dir / "train.csv").string(), "--test", (dir / "test.csv").string()});
  ASSERT_EQ(r.code, kOk) << r.err;
  const json m = read_json(ev / "metrics.json");
  EXPECT_GE(m.at("dataset").at("overall_accuracy").get<double>(), 0.99);
  EXPECT_EQ(m.at("dataset").at("overall_accuracy"), summary.at("train").at("overall_accuracy"));
  EXPECT_TRUE(m.contains("worst_class"));
  EXPECT_EQ(m.at("heatmap_classes").size(), 3u);
  ASSERT_TRUE(fs::exists(ev / "heatmap.svg"));
  // heatmap.csv holds the shown (test) confusion matrix.
  const std::string heat = io::read_text_file(ev / "heatmap.csv");
  const auto rows = io::split(heat, '\n');
  EXPECT_EQ(rows[0], "0,1,2");

  // Three classes need m_min > 24; the smallest class here has 20 samples.
  r = call({"--out", (dir / "b0").string(), "bound", (dir / "run" / "checkpoint.carm").string(),
            (dir / "train.csv").string()});
  EXPECT_EQ(r.code, kInvalidRegime);
  EXPECT_FALSE(fs::exists(dir / "b0" / "bound.json"));

  // Training data with m_min = 30 is inside the regime.
  experiment::DatasetBlock big;
  big.synth.k = 3;
  big.synth.n_max = 60;
  big.synth.imbalance_factor = 2.0;
  big.synth.cluster_spread = 0.2;
  data::export_csv(experiment::materialize(big).train, dir / "big.csv");
  r = call({"--quiet", "--out", (dir / "b1").string(), "bound",
            (dir / "run" / "checkpoint.carm").string(), (dir / "big.csv").string()});
  ASSERT_EQ(r.code, kOk) << r.err;
  const json b1 = read_json(dir / "b1" / "bound.json");
  EXPECT_TRUE(b1.at("valid").get<bool>());
  EXPECT_EQ(b1.at("m_min").get<std::size_t>(), 30u);
  const double nu = b1.at("nu").get<double>();
  const double spectral = b1.at("spectral_term").get<double>();
  const double complexity = b1.at("complexity_term").get<double>();
  const auto lambdas = b1.at("lambdas").get<std::vector<double>>();
  const auto bounds = b1.at("per_class_bounds").get<std::vector<double>>();
  ASSERT_EQ(bounds.size(), 3u);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_NEAR(bounds[j], nu / lambdas[j] * spectral + complexity, 1e-12 * bounds[j]);
  }

  r = call({"--quiet", "--out", (dir / "b2").string(), "bound",
            (dir / "run" / "checkpoint.carm").string(), (dir / "big.csv").string(), "--gamma", "0.2"});
  ASSERT_EQ(r.code, kOk) << r.err;
  const json b2 = read_json(dir / "b2" / "bound.json");
  EXPECT_NEAR(b2.at("complexity_term").get<double>(), complexity / 2, 1e-12 * complexity);
  EXPECT_GE(b2.at("spectral_term").get<double>(), spectral - 1e-12);
}

TEST(Cli, EvalClassMismatch) {
  TempDir dir;
  write_tiny_spec(dir / "spec.json", dir / "run", 1);
  ASSERT_EQ(call({"--quiet", "train", (dir / "spec.json").string()}).code, kOk);
  ASSERT_EQ(call({"--quiet", "--out", dir.path().string(), "synth", "--k", "4", "--n-max", "20",
                  "--if", "2"})
                .code,
            kOk);
  const auto r = call({"--out", dir.path().string(), "eval", (dir / "run" / "checkpoint.carm").string(),
                       (dir / "dataset.csv").string()});
  EXPECT_EQ(r.code, kArgumentError);
  EXPECT_FALSE(r.err.empty());
}

TEST(Cli, TrainSeedOverride) {
  TempDir dir;
  write_tiny_spec(dir / "spec.json", dir / "run", 1);
  ASSERT_EQ(call({"--quiet", "--seed", "9", "--out", (dir / "a").string(), "train",
                  (dir / "spec.json").string()})
                .code,
            kOk);
  EXPECT_EQ(read_json(dir / "a" / "spec.json").at("train").at("seed").get<std::uint64_t>(), 9u);
}

TEST(Cli, NumericAbort) {
  TempDir dir;
  auto s = experiment::load_spec([&] {
    write_tiny_spec(dir / "base.json", dir / "run", 20);
    return dir / "base.json";
  }());
  s.train.learning_rate = 1e300;
  io::write_text_file(dir / "spec.json", experiment::dump(experiment::to_json(s)));
  const auto r = call({"--quiet", "train", (dir / "spec.json").string()});
  EXPECT_EQ(r.code, kNumericAbort);
  EXPECT_NE(r.err.find("last good step"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "run" / "abort.json"));
}

TEST(Cli, IoErrors) {
  TempDir dir;
  EXPECT_EQ(call({"train", (dir / "missing.json").string()}).code, kIoError);
  EXPECT_EQ(call({"eval", (dir / "m.carm").string(), (dir / "d.csv").string()}).code, kIoError);
  io::write_text_file(dir / "bad.csv", "0,1\n1.0,0\nfoo,1\n");
  io::write_text_file(dir / "m.carm", "CARMjunk");
  EXPECT_EQ(call({"eval", (dir / "m.carm").string(), (dir / "bad.csv").string()}).code, kIoError);
}

TEST(Cli, SpecErrorsAreArgumentErrors) {
  TempDir dir;
  io::write_text_file(dir / "spec.json", R"({"train": {"beta": 2}})");
  EXPECT_EQ(call({"train", (dir / "spec.json").string()}).code, kArgumentError);
  io::write_text_file(dir / "spec.json", "{not json");
  EXPECT_EQ(call({"train", (dir / "spec.json").string()}).code, kArgumentError);
}

TEST(Cli, Sweep) {
  TempDir dir;
  write_tiny_spec(dir / "spec.json", dir / "sw", 2);
  const auto r = call({"--quiet", "sweep", (dir / "spec.json").string(), "--param", "beta",
                       "--values", "0,0.5,0.9"});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto rows = experiment::parse_sweep_csv(io::read_text_file(dir / "sw" / "sweep.csv"));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[2].value, 0.9);
  EXPECT_TRUE(fs::exists(dir / "sw" / "sweep_overall_accuracy.svg"));
  EXPECT_TRUE(fs::exists(dir / "sw" / "sweep_worst_class_accuracy.svg"));
  EXPECT_TRUE(fs::exists(dir / "sw" / "runs" / "beta_1" / "summary.json"));
  EXPECT_EQ(call({"sweep", (dir / "spec.json").string(), "--param", "depth", "--values", "1"}).code,
            kArgumentError);
}

}  // namespace
}  // namespace car::cli
