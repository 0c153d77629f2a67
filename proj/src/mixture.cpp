#include "mskin/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mskin {

AngularLaw AngularLaw::make_constant(double b0) {
  if (!(b0 > 0.0) || !std::isfinite(b0))
    throw std::domain_error("angular law must be positive and bounded");
  AngularLaw law;
  law.constant = true;
  law.b0 = b0;
  return law;
}

AngularLaw AngularLaw::make_tabulated(std::vector<double> xs, std::vector<double> ys) {
  if (xs.size() < 2 || xs.size() != ys.size())
    throw std::domain_error("tabulated angular law needs matching xs/ys, size >= 2");
  if (xs.front() != -1.0 || xs.back() != 1.0)
    throw std::domain_error("tabulated angular law must cover [-1,1]");
  for (std::size_t k = 0; k + 1 < xs.size(); ++k)
    if (!(xs[k] < xs[k + 1]))
      throw std::domain_error("tabulated angular law abscissae must increase");
  for (double y : ys)
    if (!(y > 0.0) || !std::isfinite(y))
      throw std::domain_error("angular law must be positive and bounded");
  AngularLaw law;
  law.constant = false;
  law.xs = std::move(xs);
  law.ys = std::move(ys);
  // three-point finite-difference slopes give a C^1 Hermite interpolant
  const std::size_t n = law.xs.size();
  law.slopes.resize(n);
  auto one_sided = [&](std::size_t a, std::size_t b, std::size_t c) {
    double h0 = law.xs[b] - law.xs[a], h1 = law.xs[c] - law.xs[b];
    double d0 = (law.ys[b] - law.ys[a]) / h0, d1 = (law.ys[c] - law.ys[b]) / h1;
    return d0 + (d0 - d1) * h0 / (h0 + h1);
  };
  for (std::size_t k = 0; k < n; ++k) {
    if (k == 0) {
      law.slopes[k] = n >= 3 ? one_sided(0, 1, 2)
                             : (law.ys[1] - law.ys[0]) / (law.xs[1] - law.xs[0]);
    } else if (k == n - 1) {
      law.slopes[k] = n >= 3 ? one_sided(n - 1, n - 2, n - 3)
                             : (law.ys[n - 1] - law.ys[n - 2]) / (law.xs[n - 1] - law.xs[n - 2]);
    } else {
      double hl = law.xs[k] - law.xs[k - 1], hr = law.xs[k + 1] - law.xs[k];
      double dl = (law.ys[k] - law.ys[k - 1]) / hl, dr = (law.ys[k + 1] - law.ys[k]) / hr;
      law.slopes[k] = (hr * dl + hl * dr) / (hl + hr);
    }
  }
  return law;
}

double AngularLaw::eval(double s) const {
  if (constant) return b0;
  double t = std::clamp(s, -1.0, 1.0);
  auto it = std::upper_bound(xs.begin(), xs.end(), t);
  std::size_t k = (it == xs.begin()) ? 0 : static_cast<std::size_t>(it - xs.begin()) - 1;
  if (k >= xs.size() - 1) k = xs.size() - 2;
  double h = xs[k + 1] - xs[k];
  double u = (t - xs[k]) / h;
  double h00 = (1 + 2 * u) * (1 - u) * (1 - u);
  double h10 = u * (1 - u) * (1 - u);
  double h01 = u * u * (3 - 2 * u);
  double h11 = u * u * (u - 1);
  return h00 * ys[k] + h10 * h * slopes[k] + h01 * ys[k + 1] + h11 * h * slopes[k + 1];
}

namespace {
// 16-point Gauss-Legendre nodes/weights on [-1,1]
const double kGlx[16] = {
    -0.9894009349916499, -0.9445750230732326, -0.8656312023878318,
    -0.7554044083550030, -0.6178762444026438, -0.4580167776572274,
    -0.2816035507792589, -0.0950125098376374, 0.0950125098376374,
    0.2816035507792589,  0.4580167776572274,  0.6178762444026438,
    0.7554044083550030,  0.8656312023878318,  0.9445750230732326,
    0.9894009349916499};
const double kGlw[16] = {
    0.0271524594117541, 0.0622535239386479, 0.0951585116824928,
    0.1246289712555339, 0.1495959888165767, 0.1691565193950025,
    0.1826034150449236, 0.1894506104550685, 0.1894506104550685,
    0.1826034150449236, 0.1691565193950025, 0.1495959888165767,
    0.1246289712555339, 0.0951585116824928, 0.0622535239386479,
    0.0271524594117541};

template <typename F>
double integrate_11(const F& f) {
  // composite 16-point Gauss over 8 panels of [-1,1]
  double total = 0.0;
  for (int p = 0; p < 8; ++p) {
    double a = -1.0 + 0.25 * p, b = a + 0.25;
    double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    double s = 0.0;
    for (int q = 0; q < 16; ++q) s += kGlw[q] * f(mid + half * kGlx[q]);
    total += s * half;
  }
  return total;
}
}  // namespace

double AngularLaw::l1() const {
  if (constant) return 2.0 * b0;
  return integrate_11([this](double s) { return eval(s); });
}

double AngularLaw::weighted_l1() const {
  if (constant) return 2.0 * b0;
  return integrate_11([this](double s) { return (1.0 - s) * eval(s); });
}

double AngularLaw::first_moment() const {
  if (constant) return 0.0;
  return integrate_11([this](double s) { return s * eval(s); });
}

bool AngularLaw::same_as(const AngularLaw& o) const {
  if (constant != o.constant) return false;
  if (constant) return b0 == o.b0;
  return xs == o.xs && ys == o.ys;
}

MixtureSpec MixtureSpec::make(std::vector<double> masses, double gamma,
                              std::vector<double> phi_const,
                              std::vector<AngularLaw> angular) {
  MixtureSpec s;
  s.n_species = static_cast<int>(masses.size());
  const int n = s.n_species;
  if (n < 1) throw std::domain_error("mixture needs at least one species");
  for (double m : masses)
    if (!(m > 0.0)) throw std::domain_error("species masses must be positive");
  if (!(gamma > -3.0) || !(gamma <= 1.0))
    throw std::domain_error("kernel exponent gamma must lie in (-3, 1]");
  if (phi_const.size() != static_cast<std::size_t>(n) * n ||
      angular.size() != static_cast<std::size_t>(n) * n)
    throw std::domain_error("kernel tables must be N x N");
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (!(phi_const[i * n + j] > 0.0))
        throw std::domain_error("kernel constants must be positive");
      if (phi_const[i * n + j] != phi_const[j * n + i])
        throw std::domain_error("kernel constants must be symmetric");
      if (!angular[i * n + j].same_as(angular[j * n + i]))
        throw std::domain_error("angular laws must be symmetric in (i,j)");
    }
  s.masses = std::move(masses);
  s.gamma = gamma;
  s.phi_const = std::move(phi_const);
  s.angular = std::move(angular);
  return s;
}

MixtureSpec MixtureSpec::make_uniform(std::vector<double> masses, double gamma,
                                      double phi, double b0) {
  const int n = static_cast<int>(masses.size());
  std::vector<double> phis(static_cast<std::size_t>(n) * n, phi);
  std::vector<AngularLaw> laws(static_cast<std::size_t>(n) * n,
                               AngularLaw::make_constant(b0));
  return make(std::move(masses), gamma, std::move(phis), std::move(laws));
}

void MixtureSpec::require_kinetic() const {
  if (gamma < 0.0)
    throw std::domain_error("collision-operator evaluation requires gamma in [0, 1]");
}

void MaxwellianParams::validate() const {
  if (!(c > 0.0) || !(m > 0.0) || !(T > 0.0))
    throw std::domain_error("Maxwellian needs c > 0, m > 0, T > 0");
  if (!(eps > 0.0) || !(eps <= 1.0))
    throw std::domain_error("Maxwellian prescale eps must lie in (0, 1]");
  if (!finite(u)) throw std::domain_error("Maxwellian bulk velocity must be finite");
}

double eval_maxwellian(const MaxwellianParams& p, const Vec3& v) {
  if (!finite(v)) throw std::domain_error("velocity must be finite");
  const Vec3 d = v - p.eps * p.u;
  const double pref = p.c * std::pow(p.m / (2.0 * M_PI * p.T), 1.5);
  return pref * std::exp(-p.m * norm2(d) / (2.0 * p.T));
}

MaxwellianMoments maxwellian_moments(const MaxwellianParams& p) {
  p.validate();
  MaxwellianMoments mm;
  mm.mass = p.c;
  mm.momentum = p.eps * p.c * p.u;
  mm.energy = 3.0 * p.c * p.T / p.m + p.eps * p.eps * p.c * norm2(p.u);
  return mm;
}

Vec3 third_moment(const MaxwellianParams& p) {
  p.validate();
  const double e = p.eps;
  return e * e * e * p.c * norm2(p.u) * p.u + (5.0 * p.c * p.T / p.m) * e * p.u;
}

double perturbation_amplitude(const std::vector<MaxwellianParams>& ps) {
  double a = 0.0;
  for (const auto& p : ps) {
    a = std::max(a, norm(p.u));
    a = std::max(a, std::abs(p.T - 1.0));
  }
  return a;
}

double default_v_max(const std::vector<MaxwellianParams>& ps) {
  double vm = 0.0;
  for (const auto& p : ps)
    vm = std::max(vm, 8.0 * std::sqrt(p.T / p.m) + p.eps * norm(p.u));
  return vm;
}

DistributionVector sample_maxwellians(const std::vector<MaxwellianParams>& ps,
                                      const VelocityGrid& grid) {
  DistributionVector F;
  F.grid = grid;
  F.values.resize(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    ps[i].validate();
    auto& f = F.values[i];
    f.resize(grid.n_cells());
    const double pref = ps[i].c * std::pow(ps[i].m / (2.0 * M_PI * ps[i].T), 1.5);
    const double a = ps[i].m / (2.0 * ps[i].T);
    const Vec3 ue = ps[i].eps * ps[i].u;
    std::size_t k = 0;
    for (int ix = 0; ix < grid.n_v; ++ix)
      for (int iy = 0; iy < grid.n_v; ++iy)
        for (int iz = 0; iz < grid.n_v; ++iz, ++k)
          f[k] = pref * std::exp(-a * norm2(grid.node(ix, iy, iz) - ue));
  }
  return F;
}

MacroMoments grid_moments(const MixtureSpec& spec, const DistributionVector& F) {
  const int n = spec.n_species;
  if (F.n_species() != n)
    throw std::domain_error("distribution species count does not match mixture");
  MacroMoments mm;
  mm.c.resize(n, 0.0);
  const auto& g = F.grid;
  const std::size_t nc = g.n_cells();
  std::vector<double> buf(nc);
  Vec3 mom{};
  double kin = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto& f = F.values[i];
    for (std::size_t k = 0; k < nc; ++k) buf[k] = f[k];
    mm.c[i] = pairwise_sum(buf) * g.w_cell;
    for (int ax = 0; ax < 3; ++ax) {
      for (std::size_t k = 0; k < nc; ++k) {
        Vec3 v = g.node(k);
        buf[k] = f[k] * (ax == 0 ? v.x : ax == 1 ? v.y : v.z);
      }
      double s = pairwise_sum(buf) * g.w_cell * spec.masses[i];
      if (ax == 0) mom.x += s;
      else if (ax == 1) mom.y += s;
      else mom.z += s;
    }
    for (std::size_t k = 0; k < nc; ++k) buf[k] = f[k] * norm2(g.node(k));
    kin += 0.5 * spec.masses[i] * pairwise_sum(buf) * g.w_cell;
  }
  mm.momentum = mom;
  mm.energy = kin;
  mm.rho = 0.0;
  double ctot = 0.0;
  for (int i = 0; i < n; ++i) {
    mm.rho += spec.masses[i] * mm.c[i];
    ctot += mm.c[i];
  }
  if (!(mm.rho > 0.0))
    throw std::domain_error("degenerate input: zero total mass on the grid");
  mm.u = mm.momentum / mm.rho;
  // T = sum_i m_i int |v-u|^2 F_i / (3 sum_j c_j)
  double num = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto& f = F.values[i];
    for (std::size_t k = 0; k < nc; ++k) buf[k] = f[k] * norm2(g.node(k) - mm.u);
    num += spec.masses[i] * pairwise_sum(buf) * g.w_cell;
  }
  mm.T = num / (3.0 * ctot);
  return mm;
}

EquilibriumResult global_equilibrium(const MixtureSpec& spec,
                                     const DistributionVector& F_in) {
  F_in.validate();
  EquilibriumResult r;
  r.moments = grid_moments(spec, F_in);
  std::vector<MaxwellianParams> ps(spec.n_species);
  for (int i = 0; i < spec.n_species; ++i) {
    ps[i].c = r.moments.c[i];
    ps[i].m = spec.masses[i];
    ps[i].u = r.moments.u;
    ps[i].T = r.moments.T;
    ps[i].eps = 1.0;
  }
  r.maxwellian = sample_maxwellians(ps, F_in.grid);
  return r;
}

BoundsCheckReport maxwellian_bounds_check(const std::vector<MaxwellianParams>& ps,
                                          double delta, double delta_ms,
                                          const std::vector<Vec3>& samples) {
  if (ps.empty()) throw std::domain_error("bounds check needs at least one species");
  for (const auto& p : ps) p.validate();
  if (!(delta_ms >= 0.0) || !(delta_ms < 1.0))
    throw std::invalid_argument("perturbation amplitude must lie in [0, 1)");
  const bool lower_ok = delta > 0.0 && delta < 1.0 - delta_ms;
  const bool upper_ok = delta > 0.0 && delta < 1.0 / (1.0 + delta_ms);
  if (!lower_ok && !upper_ok)
    throw std::invalid_argument("delta outside the admissible interval for both bounds");

  BoundsCheckReport rep;
  rep.lower_checked = lower_ok;
  rep.upper_checked = upper_ok;
  rep.margin_low = rep.margin_up = std::numeric_limits<double>::infinity();

  double c_low = std::numeric_limits<double>::infinity();
  double c_up = -std::numeric_limits<double>::infinity();
  for (const auto& p : ps) {
    c_low = std::min(c_low, std::pow(p.m / (2.0 * M_PI), 1.5 * (delta - 1.0) / delta));
    c_up = std::max(c_up, std::pow(p.m / (2.0 * M_PI), 1.5 * (1.0 - delta)));
  }
  rep.c_low = c_low;
  rep.c_up = c_up;

  for (const auto& p : ps) {
    const double t_tilde = std::abs(p.T - 1.0);
    const double u2 = norm2(p.u);
    double r_low = 0.0, r_up = 0.0;
    if (lower_ok) {
      const double den = 1.0 - t_tilde - delta;
      if (!(den > 0.0))
        throw std::invalid_argument("delta inadmissible for the supplied temperature");
      r_low = std::pow(1.0 / (1.0 + t_tilde), 1.5) * std::exp(-p.m * u2 / (2.0 * den));
    }
    if (upper_ok) {
      const double den = 1.0 - (1.0 + t_tilde) * delta;
      if (!(den > 0.0))
        throw std::invalid_argument("delta inadmissible for the supplied temperature");
      r_up = std::pow(1.0 / (1.0 - t_tilde), 1.5) * std::exp(delta * p.m * u2 / (2.0 * den));
    }
    const double ref_pref = std::pow(p.m / (2.0 * M_PI), 1.5);
    for (const Vec3& v : samples) {
      const double mval = eval_maxwellian(p, v);
      const double ref = ref_pref * std::exp(-p.m * norm2(v) / 2.0);  // normalized
      if (lower_ok) {
        const double rhs = c_low * r_low * p.c * std::pow(ref, 1.0 / delta);
        rep.margin_low = std::min(rep.margin_low, mval - rhs);
      }
      if (upper_ok) {
        const double rhs = c_up * r_up * p.c * std::pow(ref, delta);
        rep.margin_up = std::min(rep.margin_up, rhs - mval);
      }
    }
  }
  if (!rep.lower_checked) rep.margin_low = 0.0;
  if (!rep.upper_checked) rep.margin_up = 0.0;
  rep.ok = rep.margin_low >= -1e-13 && rep.margin_up >= -1e-13;
  return rep;
}

}  // namespace mskin
