#include "car/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "car/error.hpp"

namespace car::spectral {

namespace {

bool normalize(std::vector<double>& x) {
  const double n = norm2(x);
  if (n == 0.0 || !std::isfinite(n)) return false;
  for (double& e : x) e /= n;
  return true;
}

std::vector<double> mat_vec(const Matrix& a, const std::vector<double>& v) {
  std::vector<double> out(a.rows(), 0.0);
  for (std::size_t r = 0; r < a.rows(); ++r) out[r] = dot(a.row(r), v);
  return out;
}

std::vector<double> apply_transposed(const Matrix& a, const std::vector<double>& u) {
  std::vector<double> out(a.cols(), 0.0);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double ur = u[r];
    for (std::size_t c = 0; c < a.cols(); ++c) out[c] += a(r, c) * ur;
  }
  return out;
}

}  // namespace

std::vector<double> start_vector(std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + 1e-3 * static_cast<double>(i + 1);
  normalize(v);
  return v;
}

SingularTriplet power_iteration(const Matrix& a, int max_iters, double tol, double vector_tol) {
  if (a.rows() == 0 || a.cols() == 0) throw DimensionError("power_iteration: empty matrix");
  if (max_iters < 1) throw ParameterError("power_iteration: max_iters must be >= 1");
  if (!(tol > 0.0)) throw ParameterError("power_iteration: tol must be positive");
  if (!(vector_tol >= 0.0)) throw ParameterError("power_iteration: vector_tol must be >= 0");
  if (!a.all_finite()) throw NumericError("power_iteration: non-finite entries");

  // Iterate on A / max|aᵢⱼ| so that cA and A follow the same path for any c > 0.
  const double scale = max_abs(a);
  if (scale == 0.0) {
    SingularTriplet z;
    z.v = start_vector(a.cols());
    z.u = start_vector(a.rows());
    z.degenerate = true;
    z.converged = true;
    return z;
  }
  const Matrix b = a * (1.0 / scale);

  SingularTriplet t;
  t.v = start_vector(a.cols());
  t.u = mat_vec(b, t.v);
  if (!normalize(t.u)) {
    // v₀ lies in the null space of a nonzero A; restart from a row direction.
    std::size_t best = 0;
    for (std::size_t r = 1; r < a.rows(); ++r)
      if (norm2(b.row(r)) > norm2(b.row(best))) best = r;
    t.v.assign(b.row(best).begin(), b.row(best).end());
    normalize(t.v);
    t.u = mat_vec(b, t.v);
    normalize(t.u);
  }

  double prev = dot(t.u, mat_vec(b, t.v));
  auto moved = [](const std::vector<double>& x, const std::vector<double>& y) {
    double m = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
    return m;
  };
  for (int it = 1; it <= max_iters; ++it) {
    const std::vector<double> u0 = t.u, v0 = t.v;
    t.v = apply_transposed(b, t.u);
    normalize(t.v);
    t.u = mat_vec(b, t.v);
    normalize(t.u);
    t.sigma = dot(t.u, mat_vec(b, t.v));
    t.iterations = it;
    const bool vectors_settled =
        vector_tol == 0.0 || std::max(moved(t.u, u0), moved(t.v, v0)) <= vector_tol;
    if (std::abs(t.sigma - prev) <= tol * std::abs(t.sigma) && vectors_settled) {
      t.converged = true;
      break;
    }
    prev = t.sigma;
  }
  if (t.sigma < 0.0) {
    t.sigma = -t.sigma;
    for (double& x : t.u) x = -x;
  }
  t.sigma *= scale;
  return t;
}

ad::Tensor spectral_norm(const ad::Tensor& a, PowerIterationOptions opts) {
  if (!a.valid()) throw ParameterError("spectral_norm: tensor not attached to a graph");
  const Matrix& v = a.value();
  if (v.rows() != v.cols()) {
    throw DimensionError("spectral_norm: expected a square matrix, got " + v.shape_string());
  }
  ad::Node n;
  n.kind = ad::OpKind::kSpectralNorm;
  n.parents = {a.id()};
  n.scalar = opts.tol;
  n.scalar_b = opts.vector_tol;
  n.indices = {opts.max_iters};
  return a.graph()->record(std::move(n));
}

double l1_operator_norm(const Matrix& a) {
  if (!a.all_finite()) throw NumericError("l1_operator_norm: non-finite entries");
  double best = 0.0;
  for (std::size_t c = 0; c < a.cols(); ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < a.rows(); ++r) s += std::abs(a(r, c));
    best = std::max(best, s);
  }
  return best;
}

std::vector<double> svd_oracle(const Matrix& a) {
  if (!a.all_finite()) throw NumericError("svd_oracle: non-finite entries");
  // Symmetric Jacobi on G = AᵀA: rotate away off-diagonal entries in cyclic
  // sweeps until they are negligible.
  Matrix g = matmul_tn(a, a);
  const std::size_t n = g.cols();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        total += g(i, j) * g(i, j);
        if (i != j) off += g(i, j) * g(i, j);
      }
    }
    if (off <= 1e-30 * total || off == 0.0) break;

    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double gpq = g(p, q);
        if (gpq == 0.0) continue;
        const double theta = (g(q, q) - g(p, p)) / (2.0 * gpq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double gkp = g(k, p);
          const double gkq = g(k, q);
          g(k, p) = c * gkp - s * gkq;
          g(k, q) = s * gkp + c * gkq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double gpk = g(p, k);
          const double gqk = g(q, k);
          g(p, k) = c * gpk - s * gqk;
          g(q, k) = s * gpk + c * gqk;
        }
      }
    }
  }
  std::vector<double> sv(n);
  for (std::size_t i = 0; i < n; ++i) sv[i] = std::sqrt(std::max(g(i, i), 0.0));
  std::sort(sv.begin(), sv.end(), std::greater<>());
  return sv;
}

}  // namespace car::spectral
