#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "car/error.hpp"
#include "car/spectral.hpp"
#include "test_util.hpp"

namespace car {
namespace {

using spectral::power_iteration;
using spectral::svd_oracle;
using testing::random_matrix;

// Random square matrix whose top two singular values are separated by at
// least `gap` relative.
Matrix gapped_matrix(std::size_t n, Rng& rng, double gap) {
  for (;;) {
    Matrix a = random_matrix(n, n, rng);
    const auto sv = svd_oracle(a);
    if (sv.size() < 2 || (sv[0] - sv[1]) >= gap * sv[0]) return a;
  }
}

TEST(PowerIteration, Identity) {
  const auto t = power_iteration(Matrix::identity(3), 100, 1e-9);
  EXPECT_NEAR(t.sigma, 1.0, 1e-12);
}

TEST(PowerIteration, Diagonal) {
  const auto t = power_iteration(Matrix::diag(std::vector<double>{3, 0, 4}), 100, 1e-9);
  EXPECT_NEAR(t.sigma, 4.0, 1e-9);
}

TEST(PowerIteration, MatchesOracleOnRandomMatrices) {
  Rng rng(42);
  for (int i = 0; i < 20; ++i) {
    const std::size_t n = 5 + 45 * static_cast<std::size_t>(i) / 19;
    const Matrix a = random_matrix(n, n, rng);
    const double oracle = svd_oracle(a)[0];
    const auto t = power_iteration(a, 5000, 1e-14);
    EXPECT_LE(std::abs(t.sigma - oracle), 1e-6 * oracle) << "n=" << n;
  }
}

TEST(PowerIteration, TripletInvariants) {
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    const Matrix a = random_matrix(6, 6, rng);
    const double tol = 1e-12;
    const auto t = power_iteration(a, 10000, tol);
    ASSERT_TRUE(t.converged);
    EXPECT_NEAR(norm2(t.u), 1.0, 1e-10);
    EXPECT_NEAR(norm2(t.v), 1.0, 1e-10);
    EXPECT_GE(t.sigma, 0.0);
    // ‖A v − σ u‖ is bounded by the residual of the stopping rule; use a
    // generous multiple since the iteration contracts geometrically.
    const Matrix av = matmul(a, Matrix::column_vector(t.v));
    double r = 0.0;
    for (std::size_t k = 0; k < 6; ++k) r += std::pow(av(k, 0) - t.sigma * t.u[k], 2);
    EXPECT_LE(std::sqrt(r), 1e-5 * std::max(t.sigma, 1.0));
  }
}

TEST(PowerIteration, ZeroMatrixIsDegenerate) {
  const auto t = power_iteration(Matrix(4, 4), 100, 1e-9);
  EXPECT_EQ(t.sigma, 0.0);
  EXPECT_TRUE(t.degenerate);
  EXPECT_EQ(t.v, spectral::start_vector(4));
  EXPECT_NEAR(norm2(t.u), 1.0, 1e-12);
}

TEST(PowerIteration, NaNEntries) {
  Matrix a = Matrix::identity(3);
  a(1, 2) = NAN;
  EXPECT_THROW(power_iteration(a, 100, 1e-9), NumericError);
}

TEST(PowerIteration, BadArguments) {
  EXPECT_THROW(power_iteration(Matrix::identity(2), 0, 1e-9), ParameterError);
  EXPECT_THROW(power_iteration(Matrix::identity(2), 10, 0.0), ParameterError);
}

TEST(PowerIteration, StartVectorInNullSpace) {
  // v₀ ∝ (1.001, 1.002); this A annihilates it yet has σ = ‖(1.002, −1.001)‖.
  const Matrix a{{1.002, -1.001}, {0, 0}};
  const auto t = power_iteration(a, 100, 1e-12);
  EXPECT_NEAR(t.sigma, std::hypot(1.002, 1.001), 1e-12);
}

TEST(PowerIteration, StartVectorDefinition) {
  const auto v = spectral::start_vector(3);
  const double n = std::sqrt(1.001 * 1.001 + 1.002 * 1.002 + 1.003 * 1.003);
  EXPECT_NEAR(v[0], 1.001 / n, 1e-15);
  EXPECT_NEAR(v[2], 1.003 / n, 1e-15);
}

TEST(SpectralNode, DiagonalGradient) {
  ad::Graph g;
  auto a = g.leaf(Matrix::diag(std::vector<double>{2, 1}));
  auto s = spectral::spectral_norm(a);
  EXPECT_NEAR(s.item(), 2.0, 1e-12);
  const Matrix grad = g.backward(s)[a];
  EXPECT_NEAR(std::abs(grad(0, 0)), 1.0, 1e-6);
  EXPECT_NEAR(grad(0, 1), 0.0, 1e-6);
  EXPECT_NEAR(grad(1, 0), 0.0, 1e-6);
  EXPECT_NEAR(grad(1, 1), 0.0, 1e-6);
  EXPECT_GT(grad(0, 0), 0.0);
}

TEST(SpectralNode, ScaledIdentityRankOneGradient) {
  ad::Graph g;
  auto a = g.leaf(Matrix::identity(2) * 1.7);
  auto s = spectral::spectral_norm(a);
  EXPECT_NEAR(s.item(), 1.7, 1e-12);
  EXPECT_NEAR(frobenius_norm(g.backward(s)[a]), 1.0, 1e-12);
}

TEST(SpectralNode, MatchesFiniteDifferences) {
  Rng rng(9);
  for (int i = 0; i < 10; ++i) {
    const std::vector<Matrix> params{gapped_matrix(6, rng, 1e-3)};
    ad::LossBuilder build = [](ad::Graph&, std::span<const ad::Tensor> p) {
      return spectral::spectral_norm(p[0]);
    };
    EXPECT_LE(ad::grad_check(build, params), 1e-4);
  }
}

TEST(SpectralNode, RequiresSquare) {
  ad::Graph g;
  EXPECT_THROW(spectral::spectral_norm(g.leaf(Matrix(2, 3))), DimensionError);
}

TEST(SpectralNode, PropagatesNumericError) {
  ad::Graph g;
  Matrix a = Matrix::identity(2);
  a(0, 0) = INFINITY;
  EXPECT_THROW(spectral::spectral_norm(g.leaf(a)), NumericError);
}

TEST(L1Norm, Examples) {
  EXPECT_EQ(spectral::l1_operator_norm(Matrix::identity(3)), 1.0);
  EXPECT_EQ(spectral::l1_operator_norm({{1, -2}, {3, 4}}), 6.0);
  EXPECT_EQ(spectral::l1_operator_norm(Matrix(3, 3)), 0.0);
}

TEST(L1Norm, NonFinite) {
  EXPECT_THROW(spectral::l1_operator_norm({{NAN}}), NumericError);
}

TEST(SvdOracle, Diagonal) {
  const auto sv = svd_oracle(Matrix::diag(std::vector<double>{3, 4}));
  ASSERT_EQ(sv.size(), 2u);
  EXPECT_NEAR(sv[0], 4.0, 1e-12);
  EXPECT_NEAR(sv[1], 3.0, 1e-12);
}

TEST(SvdOracle, RankOne) {
  const std::vector<double> x{1, 2, 2};
  const std::vector<double> y{3, 0, 4};
  const Matrix a = matmul_nt(Matrix::column_vector(x), Matrix::column_vector(y));
  const auto sv = svd_oracle(a);
  EXPECT_NEAR(sv[0], 3.0 * 5.0, 1e-12);
  EXPECT_NEAR(sv[1], 0.0, 1e-6);
  EXPECT_NEAR(sv[2], 0.0, 1e-6);
}

TEST(SvdOracle, FrobeniusIdentity) {
  Rng rng(10);
  for (int i = 0; i < 5; ++i) {
    const Matrix a = random_matrix(10, 10, rng);
    double s2 = 0.0;
    for (double s : svd_oracle(a)) s2 += s * s;
    const double f2 = std::pow(frobenius_norm(a), 2);
    EXPECT_NEAR(s2, f2, 1e-9 * f2);
  }
}

TEST(Property, SpectralBelowFrobenius) {
  Rng rng(12);
  for (int i = 0; i < 50; ++i) {
    const std::size_t n = 1 + rng.below(12);
    const Matrix a = random_matrix(n, n, rng);
    EXPECT_LE(power_iteration(a).sigma, frobenius_norm(a) * (1 + 1e-12));
  }
}

TEST(Property, L1BelowSqrtKSpectral) {
  Rng rng(13);
  for (int i = 0; i < 50; ++i) {
    const std::size_t n = 1 + rng.below(12);
    const Matrix a = random_matrix(n, n, rng);
    EXPECT_LE(spectral::l1_operator_norm(a),
              std::sqrt(static_cast<double>(n)) * svd_oracle(a)[0] * (1 + 1e-12));
  }
}

TEST(Property, ScaleEquivariance) {
  Rng rng(14);
  for (int i = 0; i < 30; ++i) {
    const Matrix a = gapped_matrix(5, rng, 1e-2);
    const double c = rng.uniform(-5, 5);
    const double s = power_iteration(a, 10000, 1e-15).sigma;
    const double sc = power_iteration(a * c, 10000, 1e-15).sigma;
    EXPECT_NEAR(sc, std::abs(c) * s, 1e-10 * std::max(1.0, std::abs(c) * s));
  }
}

TEST(Property, SubgradientInnerProductIsSigma) {
  Rng rng(15);
  for (int i = 0; i < 30; ++i) {
    const Matrix a = gapped_matrix(5, rng, 1e-2);
    ad::Graph g;
    auto t = g.leaf(a);
    auto s = spectral::spectral_norm(t);
    const Matrix uv = g.backward(s)[t];
    double inner = 0.0;
    for (std::size_t k = 0; k < a.values().size(); ++k) inner += uv.values()[k] * a.values()[k];
    EXPECT_NEAR(inner, s.item(), 1e-8);
  }
}

}  // namespace
}  // namespace car
