#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mskin/mixture.hpp"
#include "mskin/util.hpp"

namespace mskin {

// Post-collision velocities in the sphere parameterization.  Total momentum
// m_i v + m_j v* and kinetic energy (m_i|v|^2 + m_j|v*|^2)/2 are invariant,
// and |v' - v*'| = |v - v*|.
struct CollisionPair {
  Vec3 v_prime;
  Vec3 v_star_prime;
};

CollisionPair post_collision(double mi, double mj, const Vec3& v, const Vec3& v_star,
                             const Vec3& sigma);

// Quadrature nodes on the unit sphere (antipodally symmetric with positive
// weights summing to one).  n_nodes = 6 integrates degree-3 polynomials
// exactly, n_nodes = 26 degree 7; 26 is the production rule, 6 a cheap knob.
struct SphereRule {
  std::vector<Vec3> nodes;
  std::vector<double> weights;

  static SphereRule make(int n_nodes);
};

// Pointwise Monte-Carlo estimate of the bi-species collision integral
// Q_ij(F_i, F_j)(v) for closed-form Maxwellian inputs.  v* is drawn from an
// inflated Gaussian that dominates both gain and loss tails; sigma uniform.
McEstimate q_ij_mc(const MixtureSpec& spec, int i, int j,
                   const MaxwellianParams& Fi, const MaxwellianParams& Fj,
                   const Vec3& v, std::uint64_t n_samples, std::uint64_t seed);

// MC estimate of  int Q_ij(F_i,F_j) psi_i dv + int Q_ji(F_j,F_i) psi_j dv
// through the single 9-dimensional symmetrized integral
//   int B F_i(v) F_j(v*) [psi_i(v') + psi_j(v*') - psi_i(v) - psi_j(v*)].
// For collision invariants the integrand vanishes pointwise, so the
// estimator is exact up to rounding rather than merely unbiased.
McEstimate weak_form_moment(const MixtureSpec& spec, int i, int j,
                            const MaxwellianParams& Fi, const MaxwellianParams& Fj,
                            const std::function<double(const Vec3&)>& psi_i,
                            const std::function<double(const Vec3&)>& psi_j,
                            std::uint64_t n_samples, std::uint64_t seed);

// Local macroscopic fields: per-species concentrations and bulk velocities,
// one shared temperature.
struct LocalMacro {
  std::vector<double> c;
  std::vector<Vec3> u;
  double T = 1.0;
};

// One row of the small-scaling flux probe: the scaled momentum exchange
// (1/eps) int Q_ij(M_i^eps, M_j^eps) m_i v dv  versus the friction-law value
// -k_ij(T) c_i c_j (u_i - u_j).
struct FluxProbeRow {
  double eps = 0.0;
  Vec3 lhs;
  Vec3 lhs_err;     // per-component MC standard errors
  Vec3 rhs;
  double dev_abs = 0.0;  // ||lhs - rhs||
  double dev_rel = 0.0;  // dev_abs / ||rhs|| (infinity when rhs = 0)
  double err_rel = 0.0;  // ||lhs_err|| / ||rhs||
};

// Each draw of the probe is averaged over the sign orbit of its thermal
// velocities and sigma, which cancels the drift-free part of the integrand
// per sample, so the 1/eps amplification does not inflate the variance.
std::vector<FluxProbeRow> flux_limit_probe(const MixtureSpec& spec,
                                           const LocalMacro& macro, int i, int j,
                                           const std::vector<double>& eps_list,
                                           std::uint64_t n_samples, std::uint64_t seed);

// Deterministic space-homogeneous relaxation dF/dt = Q(F,F) on a velocity
// grid.  Every elementary transfer moves matched amounts out of its two
// source cells and onto the cubic-exact deposit stencils of the two
// post-collision points, so species masses, total momentum and total energy
// are conserved to rounding regardless of resolution.
struct RelaxationOptions {
  double dt = 0.25;
  int n_steps = 16;
  int sigma_nodes = 26;
  // channels with F_i F_j below this fraction of the peak product are skipped
  double pair_drop_tol = 1e-9;
  // fatal negativity threshold relative to the peak of F; the cubic deposit
  // stencils have negative side lobes that undershoot in the tails, so this
  // is a stability guard, not a positivity guarantee
  double negativity_tol = 1e-2;
};

struct RelaxationStep {
  double t = 0.0;
  MacroMoments moments;
  double entropy = 0.0;  // sum_i int F_i log F_i
};

struct RelaxationResult {
  std::vector<RelaxationStep> series;  // n_steps + 1 entries including t = 0
  DistributionVector F_final;
};

RelaxationResult homogeneous_relaxation(const MixtureSpec& spec,
                                        const DistributionVector& F0,
                                        const RelaxationOptions& opt);

// One-sided bilinear collision sums by the same deterministic grid rule as
// homogeneous_relaxation, sharing a single geometry sweep:
//   R1_i = sum_j Q_ij(A_i, B_j),   R2_i = sum_j Q_ij(B_i, A_j).
// Inputs may be signed.  A channel is skipped whole when either of its two
// post-collision stencils leaves the box, and the skip condition of the
// reversed channel evaluates the same two stencils, so invariant-weighted
// sums of R1 + R2 cancel to rounding exactly as in the continuous weak form
// (per species for mass, over the pair sum for momentum and energy).
// drop_tol is relative to the peak |A_i| |B_j| product.
void collision_bilinear(const MixtureSpec& spec, const VelocityGrid& g,
                        const std::vector<std::vector<double>>& A,
                        const std::vector<std::vector<double>>& B,
                        const SphereRule& rule, double drop_tol,
                        std::vector<std::vector<double>>& R1,
                        std::vector<std::vector<double>>& R2);

// Multiplicative collision frequency nu_ij^eps(v) = int B_ij M_j^eps dsigma dv*
// for one pair, reduced to a 1-D radial integral.
double nu_pair_at(const MixtureSpec& spec, int i, int j, const MaxwellianParams& pj,
                  const Vec3& v);

// nu_ij^eps for all pairs on a grid, with fitted envelope constants so that
//   low_ij c_j <v>^gamma  <=  nu_ij^eps(v)  <=  up_ij c_j <v>^gamma
// holds at every grid point; a nonpositive or unbounded envelope raises
// invariant_failure.
struct NuField {
  VelocityGrid grid;
  int n_species = 0;
  std::vector<std::vector<double>> values;  // [i * N + j][cell]
  std::vector<double> low, up;              // [i * N + j]

  const std::vector<double>& nu(int i, int j) const {
    return values[static_cast<std::size_t>(i) * n_species + j];
  }
};

NuField nu_eval(const MixtureSpec& spec, const LocalMacro& macro, double eps,
                const VelocityGrid& grid);

}  // namespace mskin
