#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "mskin/util.hpp"

namespace mskin {

// Friction matrix of the cross-diffusion system: a_ij = c_i c_j / delta_ij
// off the diagonal, rows summing to zero.  Symmetric, negative semidefinite,
// kernel Span(1) for componentwise positive c.
struct MSMatrix {
  Eigen::MatrixXd a;
  Eigen::VectorXd c;
  Eigen::MatrixXd delta;

  int n() const { return static_cast<int>(a.rows()); }
};

MSMatrix build_ms_matrix(const Eigen::VectorXd& c, const Eigen::MatrixXd& delta);

// x minus its mean times 1; output orthogonal to 1.
Eigen::VectorXd project_off_kernel(const Eigen::VectorXd& x);

// Solves A U = rhs for the unique U orthogonal to 1, one column of rhs at a
// time (columns are spatial components).  Each column must satisfy the
// solvability condition <rhs, 1> = 0 within tau_solv * ||rhs|| or a
// solvability_error is raised.  Moore-Penrose solve through the full
// symmetric eigendecomposition; eigenvalues below 1e-12 * ||A|| are treated
// as kernel.
Eigen::MatrixXd solve_flux_force(const MSMatrix& A, const Eigen::MatrixXd& rhs,
                                 double tau_solv = 1e-8);

// Spectral constants of the family {A(c) : c in box}:
//   <X, A(c) X>  <=  -lambda_a (min_i c_i)^2 (||X||^2 - <X,1>^2)
//   ||A(c) X||   <=   mu_a <c,1>^2 ||X||
// Estimated by sampling c and taking the exact extremal X per sample from
// the eigendecomposition.  The returned values carry a 5% safety margin so
// that fresh verification samples stay on the right side.
struct SpectralConstants {
  double lambda_a = 0.0;
  double mu_a = 0.0;
  int sample_count = 0;
  Eigen::VectorXd c_lo, c_hi;
};

SpectralConstants estimate_spectral_constants(const Eigen::MatrixXd& delta,
                                              const Eigen::VectorXd& c_lo,
                                              const Eigen::VectorXd& c_hi,
                                              int n_samples, std::uint64_t seed);

// Independent re-check of both inequalities on fresh (c, X) draws from the
// same box; margins are the worst-case slack (>= 0 means the bound holds).
struct SpectralCheck {
  double worst_lower = 0.0;
  double worst_upper = 0.0;
  bool ok = false;
};

SpectralCheck verify_spectral_constants(const Eigen::MatrixXd& delta,
                                        const SpectralConstants& sc,
                                        int n_samples, std::uint64_t seed);

}  // namespace mskin
