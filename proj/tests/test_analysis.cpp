#include <gtest/gtest.h>

#include <cmath>
#include <regex>
#include <vector>

#include "car/analysis.hpp"
#include "car/confusion.hpp"
#include "car/error.hpp"
#include "car/io.hpp"
#include "car/spectral.hpp"
#include "test_util.hpp"

namespace car {
namespace {

using namespace analysis;
using testing::TempDir;

confusion::ClassWeighting unit_weights(std::size_t k) {
  confusion::ClassWeighting w;
  w.r0 = 1.0;
  w.lambdas.assign(k, 1.0);
  return w;
}

// Random off-diagonal confusion matrix with column sums ≤ 1.
Matrix random_confusion(std::size_t k, Rng& rng) {
  Matrix c(k, k);
  for (std::size_t j = 0; j < k; ++j) {
    double budget = rng.uniform();
    for (std::size_t i = 0; i < k; ++i) {
      if (i == j) continue;
      const double v = budget * rng.uniform();
      c(i, j) = v;
      budget -= v;
    }
  }
  return c;
}

confusion::ClassWeighting random_weights(std::size_t k, Rng& rng) {
  std::vector<double> f(k);
  double total = 0.0;
  for (auto& v : f) total += (v = rng.uniform(0.01, 1.0));
  for (auto& v : f) v /= total;
  return confusion::class_weights(f, rng.uniform(0.05, 1.0));
}

TEST(Evaluate, PerfectClassifier) {
  const std::vector<int> y{0, 1, 2, 1};
  const auto r = evaluate_predictions(y, y, 3, unit_weights(3));
  EXPECT_EQ(r.overall_accuracy, 1.0);
  EXPECT_EQ(r.worst_class_accuracy, 1.0);
  for (double a : r.per_class_accuracy) EXPECT_EQ(a, 1.0);
  EXPECT_EQ(r.wce, 0.0);
}

TEST(Evaluate, HandEnumeration) {
  const std::vector<int> y{0, 0, 1, 1};
  const std::vector<int> p{0, 1, 1, 1};
  const auto r = evaluate_predictions(p, y, 2, unit_weights(2));
  EXPECT_EQ(r.per_class_error, (std::vector<double>{0.5, 0.0}));
  EXPECT_EQ(r.wce, 0.5);
  EXPECT_EQ(r.worst_class_index, 0);
  EXPECT_EQ(r.worst_class_accuracy, 0.5);
  EXPECT_EQ(r.overall_accuracy, 0.75);
}

TEST(Evaluate, AbsentClassExcludedWithWarning) {
  const std::vector<int> y{0, 0, 2};
  const std::vector<int> p{0, 2, 2};
  const auto r = evaluate_predictions(p, y, 3, unit_weights(3));
  EXPECT_TRUE(std::isnan(r.per_class_accuracy[1]));
  EXPECT_EQ(r.worst_class_index, 0);
  EXPECT_EQ(r.worst_class_accuracy, 0.5);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("class 1"), std::string::npos);
  const auto j = to_json(r);
  EXPECT_TRUE(j["per_class_accuracy"][1].is_null());
}

TEST(Evaluate, HeadMediumTailMeans) {
  // head {0}, medium {1, 2}, tail {3}
  data::ClassSplit split{{0}, {1, 2}, {3}};
  const std::vector<int> y{0, 0, 1, 1, 2, 2, 3, 3};
  const std::vector<int> p{0, 0, 1, 0, 2, 2, 0, 0};
  const auto r = evaluate_predictions(p, y, 4, unit_weights(4), &split);
  EXPECT_EQ(r.head_accuracy, 1.0);
  EXPECT_EQ(r.medium_accuracy, 0.75);
  EXPECT_EQ(r.tail_accuracy, 0.0);
}

TEST(Evaluate, ModelOnDataset) {
  model::ModelParams m = model::init_mlp(1, 1, 2, 2, 0);
  m.layers[0] = Matrix::identity(2);
  const auto ds = data::parse_csv("0,2,1\n0,1,3\n1,0,1\n");
  const auto r = evaluate(m, ds, unit_weights(2));
  EXPECT_EQ(r.per_class_accuracy, (std::vector<double>{0.5, 1.0}));
  EXPECT_THROW(evaluate(model::init_mlp(1, 1, 3, 2, 0), ds, unit_weights(2)), DimensionError);
}

TEST(Property, MetricIdentities) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(8));
    std::vector<int> y(60), p(60);
    for (std::size_t q = 0; q < 60; ++q) {
      y[q] = static_cast<int>(q % static_cast<std::size_t>(k));
      p[q] = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
    }
    const auto w = random_weights(static_cast<std::size_t>(k), rng);
    const auto r = evaluate_predictions(p, y, k, w);
    double worst = INFINITY;
    for (int j = 0; j < k; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      EXPECT_NEAR(r.per_class_accuracy[jj] + r.per_class_error[jj], 1.0, 1e-12);
      EXPECT_NEAR(r.per_class_accuracy[jj], 1.0 - r.confusion.column_sum(jj), 1e-12);
      // λ·Σc and Σ(λc) may round apart by an ulp.
      EXPECT_LE(w.lambdas[jj] * r.confusion.column_sum(jj), r.wce * (1 + 1e-12));
      worst = std::min(worst, r.per_class_accuracy[jj]);
    }
    EXPECT_EQ(r.worst_class_accuracy, worst);
    EXPECT_EQ(r.wce, spectral::l1_operator_norm(matmul(r.confusion.entries, w.lambda_matrix())));
  }
}

TEST(Property, WceNormChain) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 2 + rng.below(10);
    const Matrix c = random_confusion(k, rng);
    const auto w = random_weights(k, rng);
    const Matrix cl = matmul(c, w.lambda_matrix());
    const double wce = weighted_worst_class_error(c, w.lambdas);
    EXPECT_EQ(wce, spectral::l1_operator_norm(cl));
    for (std::size_t j = 0; j < k; ++j) {
      double e = 0.0;
      for (std::size_t i = 0; i < k; ++i) e += c(i, j);
      EXPECT_LE(w.lambdas[j] * e, wce * (1 + 1e-12));
    }
    EXPECT_LE(wce, std::sqrt(static_cast<double>(k)) * spectral::svd_oracle(cl)[0] + 1e-9);
  }
}

MetricsReport with_worst(double worst, std::size_t k = 3) {
  MetricsReport r;
  r.per_class_accuracy.assign(k, 1.0);
  r.worst_class_accuracy = worst;
  return r;
}

TEST(WorstClass, PaperExample) {
  const auto r = worst_class_report(with_worst(0.9372), with_worst(0.10));
  ASSERT_TRUE(r.wr.has_value());
  EXPECT_EQ(std::round(*r.wr * 100) / 100, 0.11);
}

TEST(WorstClass, EqualIsOne) {
  EXPECT_EQ(*worst_class_report(with_worst(0.4), with_worst(0.4)).wr, 1.0);
}

TEST(WorstClass, ZeroTrainIsUndefined) {
  const auto r = worst_class_report(with_worst(0.0), with_worst(0.0));
  EXPECT_FALSE(r.wr.has_value());
  EXPECT_EQ(to_json(r)["wr"], "undefined");
  EXPECT_EQ(*worst_class_report(with_worst(0.5), with_worst(0.0)).wr, 0.0);
}

TEST(WorstClass, KMismatch) {
  EXPECT_THROW(worst_class_report(with_worst(0.5, 3), with_worst(0.5, 4)), ReportError);
}

std::vector<model::LayerNorms> identity_norms(std::size_t n, std::size_t h) {
  return std::vector<model::LayerNorms>(n, {1.0, std::sqrt(static_cast<double>(h))});
}

TEST(Psi, IdentityClosedForm) {
  for (std::size_t n : {1u, 2u, 3u, 5u}) {
    for (std::size_t h : {2u, 8u, 32u}) {
      const double nn = static_cast<double>(n);
      const double hh = static_cast<double>(h);
      const double expected = nn * nn * nn * hh * hh * std::log(nn * hh);
      EXPECT_NEAR(psi(identity_norms(n, h), 1.0, n, h), expected, 1e-9 * expected);
    }
  }
}

TEST(Psi, FromIdentityModel) {
  model::ModelParams m = model::init_mlp(3, 4, 4, 4, 0);
  for (auto& w : m.layers) w = Matrix::identity(4);
  const double expected = 27.0 * 16.0 * std::log(12.0);
  EXPECT_NEAR(psi(model::weight_norms(m), 1.0, 3, 4), expected, 1e-9 * expected);
}

TEST(Psi, InputScaleQuadruples) {
  const auto norms = identity_norms(3, 8);
  EXPECT_EQ(psi(norms, 2.0, 3, 8), 4.0 * psi(norms, 1.0, 3, 8));
}

TEST(Complexity, MonotoneInMminAndGamma) {
  const double p = 1234.5;
  double prev = INFINITY;
  for (std::size_t m = 41; m < 2000; m += 37) {
    const double c = complexity_term(5, m, 0.1, 0.05, p, 3);
    EXPECT_TRUE(std::isfinite(c));
    EXPECT_GT(c, 0.0);
    EXPECT_LT(c, prev);
    prev = c;
  }
  prev = INFINITY;
  for (double g = 0.01; g < 5; g *= 1.5) {
    const double c = complexity_term(5, 100, g, 0.05, p, 3);
    EXPECT_LT(c, prev);
    prev = c;
  }
}

TEST(Complexity, InvalidRegime) {
  EXPECT_THROW(complexity_term(5, 40, 0.1, 0.05, 1.0, 3), InvalidRegimeError);
  EXPECT_THROW(complexity_term(5, 12, 0.1, 0.05, 1.0, 3), InvalidRegimeError);
  EXPECT_NO_THROW(complexity_term(5, 41, 0.1, 0.05, 1.0, 3));
  EXPECT_THROW(complexity_term(5, 41, 0.0, 0.05, 1.0, 3), ParameterError);
  EXPECT_THROW(complexity_term(5, 41, 0.1, 1.0, 1.0, 3), ParameterError);
}

TEST(Complexity, ClosedForm) {
  const double c = complexity_term(2, 20, 0.5, 0.1, 3.0, 2);
  EXPECT_NEAR(c, std::sqrt(2.0 / (4.0 * 0.25) * (3.0 + std::log(2.0 * 20.0 / 0.1))), 1e-14);
}

data::LabeledDataset bound_data(std::size_t n_max, std::uint64_t seed) {
  data::SynthParams p;
  p.k = 3;
  p.n_max = n_max;
  p.imbalance_factor = 2;
  p.cluster_spread = 0.5;
  p.seed = seed;
  return data::synth_longtail_gaussians(p);
}

TEST(Bound, ValidRegimeReport) {
  const auto ds = bound_data(100, 1);
  const auto m = model::init_mlp(3, 8, 2, 3, 2);
  const auto w = confusion::class_weights_from_counts(ds.class_counts, 0.2);
  const auto r = bound_eval(m, ds, 0.1, 0.05, w);
  EXPECT_TRUE(r.valid);
  EXPECT_EQ(r.m_min, 50u);
  EXPECT_TRUE(std::isfinite(r.complexity_term));
  EXPECT_GT(r.complexity_term, 0.0);
  EXPECT_EQ(r.nu, std::sqrt(3.0));
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_NEAR(r.per_class_bounds[j], r.nu / w.lambdas[j] * r.spectral_term + r.complexity_term,
                1e-12 * r.per_class_bounds[j]);
    EXPECT_GE(r.per_class_bounds[j], r.l1_term / w.lambdas[j]);
  }
  const auto doubled = bound_eval(m, ds, 0.2, 0.05, w);
  EXPECT_LT(doubled.complexity_term, r.complexity_term);
  const auto j = to_json(r);
  EXPECT_NE(j["note"].get<std::string>().find("universal constant"), std::string::npos);
}

TEST(Bound, InvalidRegime) {
  const auto ds = bound_data(40, 3);  // m_min = 20 ≤ 24
  const auto m = model::init_mlp(2, 4, 2, 3, 0);
  const auto w = confusion::class_weights_from_counts(ds.class_counts, 0.2);
  EXPECT_THROW(bound_eval(m, ds, 0.1, 0.05, w), InvalidRegimeError);
}

TEST(Bound, RejectsBiases) {
  const auto ds = bound_data(100, 4);
  const auto w = confusion::class_weights_from_counts(ds.class_counts, 0.2);
  EXPECT_THROW(bound_eval(model::init_mlp(2, 4, 2, 3, 0, true), ds, 0.1, 0.05, w),
               UnsupportedModelError);
}

TEST(Property, BoundDominatesL1OnSameSet) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto ds = bound_data(120, seed);
    const auto m = model::init_mlp(2, 6, 2, 3, seed + 50);
    Rng rng(seed);
    const auto w = confusion::class_weights_from_counts(ds.class_counts, rng.uniform(0.05, 1.0));
    const auto r = bound_eval(m, ds, rng.uniform(0.01, 2.0), 0.05, w);
    EXPECT_LE(r.l1_term, std::sqrt(3.0) * r.spectral_term + 1e-9);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_GE(r.per_class_bounds[j], r.l1_term / w.lambdas[j]);
  }
}

std::size_t count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + 1)) ++n;
  return n;
}

TEST(Heatmap, ZeroMatrix) {
  TempDir dir;
  const std::vector<int> subset{0, 1, 2};
  const auto s = heatmap_export(Matrix(4, 4), subset, dir / "h.svg", dir / "h.csv");
  EXPECT_EQ(s.shaded_cells, 0u);
  EXPECT_EQ(s.max_value, 0.0);
  const std::string svg = io::read_text_file(dir / "h.svg");
  EXPECT_EQ(count(svg, "class=\"cell\""), 9u);
  EXPECT_EQ(count(svg, "fill=\"#e0e0e0\" data-value"), 9u);
  EXPECT_NE(svg.find("class=\"legend-max\" x=\"176\" y=\"58\">0<"), std::string::npos);
}

TEST(Heatmap, OffDiagonalCellCount) {
  TempDir dir;
  for (std::size_t k : {2u, 5u, 10u}) {
    Matrix c(k, k, 1.0);
    for (std::size_t i = 0; i < k; ++i) c(i, i) = 0.0;
    std::vector<int> all(k);
    for (std::size_t i = 0; i < k; ++i) all[i] = static_cast<int>(i);
    const auto s = heatmap_export(c, all, dir / "h.svg", dir / "h.csv");
    EXPECT_EQ(s.shaded_cells, k * (k - 1));
    EXPECT_EQ(count(io::read_text_file(dir / "h.svg"), "cell shaded"), k * (k - 1));
  }
}

TEST(Heatmap, CsvRoundTrip) {
  TempDir dir;
  Rng rng(5);
  const Matrix c = random_confusion(8, rng);
  const std::vector<int> subset{6, 1, 3};
  heatmap_export(c, subset, dir / "h.svg", dir / "h.csv");
  std::vector<int> header;
  const Matrix back = confusion::read_csv(dir / "h.csv", &header);
  EXPECT_EQ(header, subset);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b)
      EXPECT_EQ(back(a, b), c(static_cast<std::size_t>(subset[a]), static_cast<std::size_t>(subset[b])));
}

TEST(Heatmap, Errors) {
  TempDir dir;
  const std::vector<int> bad{0, 4};
  EXPECT_THROW(heatmap_export(Matrix(3, 3), bad, dir / "h.svg", dir / "h.csv"), DimensionError);
  const std::vector<int> ok{0};
  // A regular file where a directory is needed.
  io::write_text_file(dir / "file", "x");
  try {
    heatmap_export(Matrix(3, 3), ok, dir / "file" / "h.svg", dir / "h.csv");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("h.svg"), std::string::npos);
  }
}

TEST(Json, MetricsKeyOrderStable) {
  const std::vector<int> y{0, 1};
  const auto j = to_json(evaluate_predictions(y, y, 2, unit_weights(2)));
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  EXPECT_EQ(keys.front(), "overall_accuracy");
  EXPECT_EQ(j.dump(), to_json(evaluate_predictions(y, y, 2, unit_weights(2))).dump());
}

}  // namespace
}  // namespace car
