#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mskin/collision.hpp"
#include "mskin/grid.hpp"
#include "mskin/mixture.hpp"
#include "mskin/util.hpp"

namespace mskin {

// Signed per-species fields on a velocity grid; the linearized machinery works
// in the mu^{1/2}-weighted space where distributions need not be nonnegative.
using SpeciesField = std::vector<std::vector<double>>;  // [species][cell]

struct LinearizedOptions {
  int sigma_nodes = 26;
  // cells where the species equilibrium falls below this fraction of its peak
  // are left out of the operator's index space
  double active_tol = 1e-9;
  // collision channels whose mu_i(a) mu_j(b) weight is below this fraction of
  // the peak product are dropped (also the drop tolerance of the bilinear
  // sweeps behind apply_gamma / apply_l_eps)
  double pair_cut = 1e-12;
  std::size_t dof_cap = 20000;
};

// Index space of the discrete operator: one degree of freedom per (species,
// cell) whose equilibrium weight is above the activity floor.
struct ActiveSet {
  VelocityGrid grid;
  int n_species = 0;
  std::vector<std::vector<std::ptrdiff_t>> index;  // [species][cell] -> dof or -1
  std::vector<std::pair<int, std::size_t>> cells;  // dof -> (species, cell)

  std::size_t dof() const { return cells.size(); }
  Eigen::VectorXd restrict_field(const SpeciesField& f) const;
  SpeciesField extend(const Eigen::VectorXd& x) const;
};

// Orthonormal span of the collision invariants in the mu^{1/2} weighting:
// per-species concentration modes, three momentum modes, one energy mode.
// `raw` holds the closed-form vectors, whose grid Gram matrix is close to but
// not exactly the identity (box truncation); `ortho` is the same span made
// exactly orthonormal under the grid inner product so that projections built
// from it are idempotent to rounding.
struct KernelBasis {
  VelocityGrid grid;
  int n_species = 0;
  std::vector<double> c_bar;
  std::vector<SpeciesField> raw;    // [k][species][cell], k < n_species + 4
  std::vector<SpeciesField> ortho;  // grid-orthonormalized copy
  Eigen::MatrixXd gram;             // grid Gram matrix of `raw`

  int size() const { return n_species + 4; }
};

KernelBasis make_kernel_basis(const MixtureSpec& spec,
                              const std::vector<double>& c_bar,
                              const VelocityGrid& grid);

enum class OperatorKind { L, L_eps, nu_diagonal, K_eps };

// Dense matrix of a velocity-space operator on the active index set.  The
// `L` kind is the operator linearized around the global equilibrium:
// symmetric and negative semidefinite by construction (assembled from its
// quadratic form), with the invariant modes annihilated to rounding.
struct DiscreteOperator {
  OperatorKind kind = OperatorKind::L;
  MixtureSpec spec;
  std::vector<double> c_bar;
  ActiveSet active;
  Eigen::MatrixXd matrix;
  // ||M - M^T||_F / ||M||_F of the assembled matrix; identically zero for the
  // quadratic-form assembly, which writes each channel into one triangle and
  // mirrors, but measured rather than assumed
  double asymmetry = 0.0;
};

// Assembles the linearized operator from its quadratic (Dirichlet) form: each
// collision channel contributes a rank-one update W tau tau^T, where tau
// evaluates the invariant combination phi_i(v') + phi_j(v*') - phi_i(v) -
// phi_j(v*) with phi = g mu^{-1/2} and post-collision values interpolated by
// node-centred per-axis quadratic weights.  Post-collision points that leave
// the grid or the active set keep their channel with zero test value
// (absorbing truncation), so every cell carries its full loss rate and the
// matrix is symmetric negative semidefinite exactly rather than to quadrature
// accuracy.  The interpolation reproduces polynomials of degree two, so the
// basis modes of make_kernel_basis lie in the kernel up to the exponentially
// small weight of truncated channels.  Degrees of freedom coupled to nothing
// are removed from the active set.  Raises size_error when the active set
// exceeds opts.dof_cap.
DiscreteOperator assemble_L(const MixtureSpec& spec, const std::vector<double>& c_bar,
                            const VelocityGrid& grid,
                            const LinearizedOptions& opts = {});

// Diagonal of the multiplicative collision frequency nu_i(v) = sum_j
// nu_ij(v) around the local Maxwellian state `params` (use global-equilibrium
// parameters for the frequency split of the operator linearized there).
DiscreteOperator assemble_nu_diagonal(const MixtureSpec& spec,
                                      const std::vector<double>& c_bar,
                                      const std::vector<MaxwellianParams>& params,
                                      const VelocityGrid& grid,
                                      const LinearizedOptions& opts = {});

// Projection onto the invariant span and its complement.  `parallel` uses the
// orthonormalized basis, so applying it twice reproduces it to rounding;
// `perp` is f - parallel.
struct SplitField {
  SpeciesField parallel;
  SpeciesField perp;
};

SplitField project_pi_L(const SpeciesField& f, const KernelBasis& basis);

// The same projection written out in its three closed-form blocks
// (per-species concentration, mixture momentum, mixture energy), evaluated by
// grid quadrature against the raw basis vectors.  Agrees with project_pi_L up
// to the orthonormalization correction, i.e. to box-truncation accuracy.
SpeciesField project_pi_L_explicit(const SpeciesField& f, const KernelBasis& basis,
                                   const MixtureSpec& spec);

// Spatial-average projection for fields on a 1-D periodic spatial grid:
// integral convention, pi_T(f) = sum_x pi_L(f(x)) dx over the torus, so an
// x-independent field maps to pi_L(f) times the domain length.
SpeciesField project_pi_T(const std::vector<SpeciesField>& f_of_x, double dx,
                          const KernelBasis& basis);

// (N+4) * max_{k,l} |<phi_k, phi_l>| under the <v>^gamma-weighted grid inner
// product, taken over the raw basis: the constant in the norm-equivalence
// bound ||pi(f)||^2_{<v>^gamma} <= C ||pi(f)||^2.
double c_pi_constant(const KernelBasis& basis, double gamma);

struct GapOptions {
  int n_random = 1000;
  std::uint64_t seed = 2026;
};

// Spectrum-based gap estimate.  `spectrum` holds the eigenvalues of the
// negated operator in ascending order (all >= 0 up to rounding); kernel_dim
// counts those below 1e-6 * op_norm, and lambda_L is the first one above.
// weighted / unweighted are min over random kernel-orthogonal draws of
// -<Lf,f> / ||f||^2 in the <v>^gamma-weighted resp. plain grid norm (equal
// numbers at gamma = 0).  Raises invariant_failure when the gap is not
// positive.
struct GapReport {
  std::vector<double> spectrum;
  double op_norm = 0.0;
  int kernel_dim = 0;
  double lambda_L = 0.0;
  double weighted = 0.0;
  double unweighted = 0.0;
  double kernel_defect = 0.0;  // max ||L q|| over the restricted basis
};

GapReport estimate_spectral_gap(const DiscreteOperator& op, const KernelBasis& basis,
                                const GapOptions& gopts = {});

// Quadratic collision term in the mu^{1/2} weighting,
//   out_i = 1/2 mu_i^{-1/2} sum_j [ Q_ij(mu_i^{1/2} g_i, mu_j^{1/2} h_j)
//                                 + Q_ij(mu_i^{1/2} h_i, mu_j^{1/2} g_j) ],
// evaluated by the deterministic grid rule.  Symmetric in (g, h).
SpeciesField apply_gamma(const MixtureSpec& spec, const std::vector<double>& c_bar,
                         const VelocityGrid& grid, const SpeciesField& g,
                         const SpeciesField& h, const LinearizedOptions& opts = {});

// Linearization around a drifting local Maxwellian family instead of the
// global equilibrium:
//   out_i = mu_i^{-1/2} sum_j [ Q_ij(M_i, mu_j^{1/2} f_j)
//                             + Q_ij(mu_i^{1/2} f_i, M_j) ],
// with M sampled from `params`.  Matrix-free; c_bar fixes the weighting mu.
SpeciesField apply_l_eps(const MixtureSpec& spec, const std::vector<double>& c_bar,
                         const std::vector<MaxwellianParams>& params,
                         const VelocityGrid& grid, const SpeciesField& f,
                         const LinearizedOptions& opts = {});

// Combined frequency form: apply_l_eps plus the pointwise frequency diagonal,
// the kernel-operator side of the multiplicative/kernel split.
SpeciesField apply_k_eps(const MixtureSpec& spec, const std::vector<double>& c_bar,
                         const std::vector<MaxwellianParams>& params,
                         const VelocityGrid& grid, const SpeciesField& f,
                         const LinearizedOptions& opts = {});

// ||pi_L(F)|| and ||F|| for F = apply_gamma(g, h): the quadratic term is
// orthogonal to the invariant span, so residual/norm is a quadrature check.
struct OrthogonalityReport {
  double residual = 0.0;
  double norm = 0.0;
};

OrthogonalityReport gamma_orthogonality_check(const MixtureSpec& spec,
                                              const std::vector<double>& c_bar,
                                              const VelocityGrid& grid,
                                              const SpeciesField& g,
                                              const SpeciesField& h,
                                              const LinearizedOptions& opts = {});

OrthogonalityReport l_eps_orthogonality_check(const MixtureSpec& spec,
                                              const std::vector<double>& c_bar,
                                              const std::vector<MaxwellianParams>& params,
                                              const VelocityGrid& grid,
                                              const SpeciesField& f,
                                              const LinearizedOptions& opts = {});

// Plain and <v>^gamma-weighted grid norms of a species field.
double field_norm(const SpeciesField& f, const VelocityGrid& grid);
double field_norm_weighted(const SpeciesField& f, const VelocityGrid& grid,
                           double gamma);

void write_spectrum_csv(const GapReport& report, const std::string& path);
void write_kernel_defect_json(const GapReport& report, const DiscreteOperator& op,
                              const std::string& path);

}  // namespace mskin
