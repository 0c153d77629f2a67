#pragma once

#include <functional>
#include <vector>

#include "mskin/grid.hpp"
#include "mskin/util.hpp"

namespace mskin {

// Angular scattering law b(cos theta) on [-1,1]: either a positive constant
// or a tabulated positive C^1 function (piecewise cubic Hermite through the
// supplied samples).
struct AngularLaw {
  bool constant = true;
  double b0 = 1.0;
  std::vector<double> xs, ys, slopes;

  static AngularLaw make_constant(double b0);
  static AngularLaw make_tabulated(std::vector<double> xs, std::vector<double> ys);

  double eval(double s) const;
  // integral of b over [-1,1]
  double l1() const;
  // integral of (1-s) b(s) over [-1,1]; equals l1() for even laws
  double weighted_l1() const;
  // integral of s b(s) over [-1,1]
  double first_moment() const;

  bool same_as(const AngularLaw& o) const;
};

// Static physical description of the mixture: species masses, the kinetic
// exponent gamma of |v-v*|^gamma, the per-pair kernel constants, and the
// per-pair angular laws.
struct MixtureSpec {
  int n_species = 0;
  std::vector<double> masses;
  double gamma = 0.0;
  std::vector<double> phi_const;   // N*N, symmetric positive
  std::vector<AngularLaw> angular; // N*N, symmetric in (i,j)

  // gamma in (-3,1] accepted at construction; modules touching the collision
  // operator additionally require gamma in [0,1] via require_kinetic().
  static MixtureSpec make(std::vector<double> masses, double gamma,
                          std::vector<double> phi_const,
                          std::vector<AngularLaw> angular);
  static MixtureSpec make_uniform(std::vector<double> masses, double gamma,
                                  double phi, double b0);

  double phi(int i, int j) const { return phi_const[i * n_species + j]; }
  const AngularLaw& b(int i, int j) const { return angular[i * n_species + j]; }
  double reduced_mass(int i, int j) const {
    return masses[i] * masses[j] / (masses[i] + masses[j]);
  }
  void require_kinetic() const;
};

struct MaxwellianParams {
  double c = 1.0;
  double m = 1.0;
  Vec3 u{};
  double T = 1.0;
  double eps = 1.0;

  void validate() const;
};

struct MacroMoments {
  std::vector<double> c;
  Vec3 momentum{};
  double energy = 0.0;
  Vec3 u{};
  double T = 0.0;
  double rho = 0.0;
};

// c (m/2piT)^{3/2} exp(-m|v - eps u|^2 / (2T))
double eval_maxwellian(const MaxwellianParams& p, const Vec3& v);

struct MaxwellianMoments {
  double mass = 0.0;
  Vec3 momentum{};
  double energy = 0.0;  // integral of |v|^2 M
};

// (c, eps c u, 3cT/m + eps^2 c |u|^2), analytically.
MaxwellianMoments maxwellian_moments(const MaxwellianParams& p);

// integral of |v|^2 v M dv = eps^3 c |u|^2 u + (5cT/m) eps u.
Vec3 third_moment(const MaxwellianParams& p);

struct EquilibriumResult {
  MacroMoments moments;
  DistributionVector maxwellian;  // Maxwellian vector with those moments
};

// Grid moments of F, then the Maxwellian vector sharing them.  With the
// reference normalization (u = 0, T = 1) the output is the global
// equilibrium of the mixture.
EquilibriumResult global_equilibrium(const MixtureSpec& spec,
                                     const DistributionVector& F_in);

struct BoundsCheckReport {
  bool lower_checked = false, upper_checked = false;
  double c_low = 0.0, c_up = 0.0;      // C_delta constants
  double margin_low = 0.0;             // min over samples of lhs - rhs
  double margin_up = 0.0;              // min over samples of rhs - lhs
  bool ok = false;
};

// Pointwise sandwich of the local Maxwellian between powers of the
// normalized reference Maxwellian, with the closed-form constants.
// delta must be admissible for at least one side given the perturbation
// amplitude delta_ms; each admissible side is verified on every sample.
BoundsCheckReport maxwellian_bounds_check(const std::vector<MaxwellianParams>& ps,
                                          double delta, double delta_ms,
                                          const std::vector<Vec3>& samples);

// max(|u_i|, |T-1|) over species: the perturbation amplitude entering the
// bounds check when the concentrations carry no reference values.
double perturbation_amplitude(const std::vector<MaxwellianParams>& ps);

// Default velocity-domain half-width: 8 thermal widths plus bulk speed.
double default_v_max(const std::vector<MaxwellianParams>& ps);

// Sample a Maxwellian vector on a grid.
DistributionVector sample_maxwellians(const std::vector<MaxwellianParams>& ps,
                                      const VelocityGrid& grid);

// Grid moments of a distribution vector (quadrature counterpart of the
// analytic formulas; used as oracle and by the relaxation probe).
MacroMoments grid_moments(const MixtureSpec& spec, const DistributionVector& F);

}  // namespace mskin
