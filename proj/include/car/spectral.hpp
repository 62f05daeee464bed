#pragma once

#include <vector>

#include "car/autodiff.hpp"
#include "car/matrix.hpp"

namespace car::spectral {

struct SingularTriplet {
  double sigma = 0.0;
  std::vector<double> u;
  std::vector<double> v;
  int iterations = 0;
  bool converged = false;
  // Set for the zero matrix: sigma is 0 and u, v are the normalized start.
  bool degenerate = false;
};

// The σ rule alone leaves u, v accurate to only ~√tol, which is too coarse for
// the uvᵀ backward on small gradient entries; the node therefore also waits
// for the vectors to settle. Defaults give ~1e−5 relative agreement with
// finite differences down to a 1e−3 relative gap between the top two
// singular values.
struct PowerIterationOptions {
  int max_iters = 20000;
  double tol = 1e-12;
  double vector_tol = 1e-12;  // 0 disables the vector rule
};

// Top singular triplet of a square matrix by alternating power iteration:
// v ← normalize(Aᵀu), u ← normalize(Av), starting from the perturbed ones
// vector normalize(1 + 1e−3·(i+1)). Stops once |σ_t − σ_{t−1}| ≤ tol·σ_t and,
// when vector_tol > 0, every entry of u and v moved by at most vector_tol.
// Iterates on A / max|aᵢⱼ|, so scaling A scales σ and leaves u, v unchanged.
// Throws NumericError on non-finite entries.
SingularTriplet power_iteration(const Matrix& a, int max_iters, double tol,
                                double vector_tol = 0.0);
inline SingularTriplet power_iteration(const Matrix& a,
                                       PowerIterationOptions opts = {}) {
  return power_iteration(a, opts.max_iters, opts.tol, opts.vector_tol);
}

// The deterministic start vector used by power_iteration.
std::vector<double> start_vector(std::size_t n);

// Differentiable ‖A‖₂. Backward contributes g·u vᵀ with u, v held fixed.
ad::Tensor spectral_norm(const ad::Tensor& a, PowerIterationOptions opts = {});

// max_j Σ_i |a_ij|.
double l1_operator_norm(const Matrix& a);

// Singular values, descending, from a cyclic Jacobi eigendecomposition of
// AᵀA. Intended as a test oracle for small matrices (K ≤ 128).
std::vector<double> svd_oracle(const Matrix& a);

}  // namespace car::spectral
