#include "mskin/collision.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <thread>

#include <Eigen/Dense>

#include "mskin/diffusion.hpp"
#include "mskin/rng.hpp"

namespace mskin {

CollisionPair post_collision(double mi, double mj, const Vec3& v, const Vec3& v_star,
                             const Vec3& sigma) {
  if (std::abs(norm2(sigma) - 1.0) > 2e-12)
    throw std::domain_error("post_collision: sigma must be a unit vector");
  const double M = mi + mj;
  const Vec3 G = (mi * v + mj * v_star) / M;
  const double r = norm(v - v_star);
  return {G + (mj / M) * r * sigma, G - (mi / M) * r * sigma};
}

SphereRule SphereRule::make(int n_nodes) {
  SphereRule rule;
  auto add = [&](const Vec3& n, double w) {
    rule.nodes.push_back(n);
    rule.weights.push_back(w);
  };
  if (n_nodes == 6) {
    for (int d = 0; d < 3; ++d)
      for (double s : {1.0, -1.0}) {
        Vec3 n{};
        n.comp(d) = s;
        add(n, 1.0 / 6.0);
      }
  } else if (n_nodes == 26) {
    const double a = 1.0 / std::sqrt(2.0);
    const double b = 1.0 / std::sqrt(3.0);
    for (int d = 0; d < 3; ++d)
      for (double s : {1.0, -1.0}) {
        Vec3 n{};
        n.comp(d) = s;
        add(n, 1.0 / 21.0);
      }
    for (int d = 0; d < 3; ++d)
      for (double s1 : {1.0, -1.0})
        for (double s2 : {1.0, -1.0}) {
          Vec3 n{};
          n.comp((d + 1) % 3) = s1 * a;
          n.comp((d + 2) % 3) = s2 * a;
          add(n, 4.0 / 105.0);
        }
    for (double s1 : {1.0, -1.0})
      for (double s2 : {1.0, -1.0})
        for (double s3 : {1.0, -1.0}) add({s1 * b, s2 * b, s3 * b}, 9.0 / 280.0);
  } else {
    // Product rule: Gauss-Legendre in cos(theta) x uniform azimuth, requested
    // as n = 2*k^2 nodes (k polar points, 2k azimuthal points).
    const int k = static_cast<int>(std::lround(std::sqrt(n_nodes / 2.0)));
    if (k < 4 || 2 * k * k != n_nodes)
      throw std::domain_error(
          "SphereRule: supported node counts are 6, 26, or 2*k^2 with k >= 4");
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(k, k);
    for (int i = 1; i < k; ++i) {
      const double bnd = i / std::sqrt(4.0 * i * i - 1.0);
      J(i, i - 1) = bnd;
      J(i - 1, i) = bnd;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    const int n_phi = 2 * k;
    for (int i = 0; i < k; ++i) {
      const double ct = es.eigenvalues()[i];
      const double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
      const double wt = 2.0 * es.eigenvectors()(0, i) * es.eigenvectors()(0, i);
      for (int j = 0; j < n_phi; ++j) {
        const double phi = 2.0 * M_PI * (j + 0.5) / n_phi;
        add({st * std::cos(phi), st * std::sin(phi), ct},
            wt / (2.0 * n_phi));
      }
    }
  }
  return rule;
}

namespace {

constexpr std::uint64_t kBatch = 8192;

struct BatchAccum {
  std::vector<double> sums, sumsq;
};

// Runs `body(rng, accumulate)` over fixed-size batches with per-batch RNG
// streams; deterministic for any worker count.
template <typename Body>
McEstimate mc_batches(std::uint64_t n_samples, std::uint64_t seed, Body&& body) {
  const std::uint64_t n_batches = (n_samples + kBatch - 1) / kBatch;
  std::vector<double> sums(n_batches, 0.0), sumsq(n_batches, 0.0);
  auto run = [&](std::uint64_t bb) {
    CounterRng rng(seed, bb);
    const std::uint64_t lo = bb * kBatch;
    const std::uint64_t hi = std::min(n_samples, lo + kBatch);
    double s = 0.0, s2 = 0.0;
    for (std::uint64_t k = lo; k < hi; ++k) {
      const double x = body(rng);
      s += x;
      s2 += x * x;
    }
    sums[bb] = s;
    sumsq[bb] = s2;
  };
  const int workers = static_cast<int>(
      std::min<std::uint64_t>(static_cast<std::uint64_t>(thread_cap()), n_batches));
  if (workers <= 1) {
    for (std::uint64_t b = 0; b < n_batches; ++b) run(b);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t)
      pool.emplace_back([&, t] {
        for (std::uint64_t b = static_cast<std::uint64_t>(t); b < n_batches;
             b += static_cast<std::uint64_t>(workers))
          run(b);
      });
    for (auto& th : pool) th.join();
  }
  return mc_reduce(sums, sumsq, n_samples);
}

// Vector-valued variant: one sampling pass shared by all three components.
template <typename Body>
std::array<McEstimate, 3> mc_batches3(std::uint64_t n_samples, std::uint64_t seed,
                                      Body&& body) {
  const std::uint64_t n_batches = (n_samples + kBatch - 1) / kBatch;
  std::array<std::vector<double>, 3> sums, sumsq;
  for (int c = 0; c < 3; ++c) {
    sums[c].assign(n_batches, 0.0);
    sumsq[c].assign(n_batches, 0.0);
  }
  auto run = [&](std::uint64_t bb) {
    CounterRng rng(seed, bb);
    const std::uint64_t lo = bb * kBatch;
    const std::uint64_t hi = std::min(n_samples, lo + kBatch);
    double s[3] = {0, 0, 0}, s2[3] = {0, 0, 0};
    for (std::uint64_t k = lo; k < hi; ++k) {
      const Vec3 x = body(rng);
      for (int c = 0; c < 3; ++c) {
        s[c] += x.comp(c);
        s2[c] += x.comp(c) * x.comp(c);
      }
    }
    for (int c = 0; c < 3; ++c) {
      sums[c][bb] = s[c];
      sumsq[c][bb] = s2[c];
    }
  };
  const int workers = static_cast<int>(
      std::min<std::uint64_t>(static_cast<std::uint64_t>(thread_cap()), n_batches));
  if (workers <= 1) {
    for (std::uint64_t b = 0; b < n_batches; ++b) run(b);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t)
      pool.emplace_back([&, t] {
        for (std::uint64_t b = static_cast<std::uint64_t>(t); b < n_batches;
             b += static_cast<std::uint64_t>(workers))
          run(b);
      });
    for (auto& th : pool) th.join();
  }
  std::array<McEstimate, 3> out;
  for (int c = 0; c < 3; ++c) out[c] = mc_reduce(sums[c], sumsq[c], n_samples);
  return out;
}

void check_pair_kinetic(const MixtureSpec& spec, int i, int j) {
  if (i < 0 || j < 0 || i >= spec.n_species || j >= spec.n_species)
    throw std::domain_error("collision: species index out of range");
  spec.require_kinetic();
}

}  // namespace

McEstimate q_ij_mc(const MixtureSpec& spec, int i, int j,
                   const MaxwellianParams& Fi, const MaxwellianParams& Fj,
                   const Vec3& v, std::uint64_t n_samples, std::uint64_t seed) {
  check_pair_kinetic(spec, i, j);
  Fi.validate();
  Fj.validate();
  const double mi = spec.masses[i], mj = spec.masses[j];
  const double phi = spec.phi(i, j);
  const AngularLaw& law = spec.b(i, j);
  const double gamma = spec.gamma;

  // dominating Gaussian for v*: centred on the bulk of F_j, variance
  // inflated over both temperatures
  const Vec3 ctr = Fj.eps * Fj.u;
  const double s2 = 1.5 * std::max(Fi.T, Fj.T) / mj;
  const double s = std::sqrt(s2);
  const double gnorm = std::pow(2.0 * M_PI * s2, -1.5);

  return mc_batches(n_samples, seed, [&](CounterRng& rng) {
    const Vec3 vs = ctr + s * rng.next_gauss3();
    const Vec3 sig = rng.next_unit_sphere();
    const Vec3 w = v - vs;
    const double r2 = norm2(w);
    if (r2 <= 0.0) return 0.0;
    const double ct = dot(w, sig) / std::sqrt(r2);
    const double B = phi * std::pow(r2, 0.5 * gamma) * law.eval(ct);
    auto post = post_collision(mi, mj, v, vs, sig);
    const double gain =
        eval_maxwellian(Fi, post.v_prime) * eval_maxwellian(Fj, post.v_star_prime);
    const double loss = eval_maxwellian(Fi, v) * eval_maxwellian(Fj, vs);
    const double g = gnorm * std::exp(-0.5 * norm2(vs - ctr) / s2);
    return 4.0 * M_PI * B * (gain - loss) / g;
  });
}

McEstimate weak_form_moment(const MixtureSpec& spec, int i, int j,
                            const MaxwellianParams& Fi, const MaxwellianParams& Fj,
                            const std::function<double(const Vec3&)>& psi_i,
                            const std::function<double(const Vec3&)>& psi_j,
                            std::uint64_t n_samples, std::uint64_t seed) {
  check_pair_kinetic(spec, i, j);
  Fi.validate();
  Fj.validate();
  const double mi = spec.masses[i], mj = spec.masses[j];
  const double phi = spec.phi(i, j);
  const AngularLaw& law = spec.b(i, j);
  const double gamma = spec.gamma;
  const double si = std::sqrt(Fi.T / mi), sj = std::sqrt(Fj.T / mj);
  const Vec3 ci = Fi.eps * Fi.u, cj = Fj.eps * Fj.u;
  const double amp = 4.0 * M_PI * Fi.c * Fj.c;

  return mc_batches(n_samples, seed, [&](CounterRng& rng) {
    const Vec3 v = ci + si * rng.next_gauss3();
    const Vec3 vs = cj + sj * rng.next_gauss3();
    const Vec3 sig = rng.next_unit_sphere();
    const Vec3 w = v - vs;
    const double r2 = norm2(w);
    if (r2 <= 0.0) return 0.0;
    const double ct = dot(w, sig) / std::sqrt(r2);
    const double B = phi * std::pow(r2, 0.5 * gamma) * law.eval(ct);
    auto post = post_collision(mi, mj, v, vs, sig);
    const double bracket =
        psi_i(post.v_prime) + psi_j(post.v_star_prime) - psi_i(v) - psi_j(vs);
    return amp * B * bracket;
  });
}

std::vector<FluxProbeRow> flux_limit_probe(const MixtureSpec& spec,
                                           const LocalMacro& macro, int i, int j,
                                           const std::vector<double>& eps_list,
                                           std::uint64_t n_samples, std::uint64_t seed) {
  check_pair_kinetic(spec, i, j);
  if (static_cast<int>(macro.c.size()) != spec.n_species ||
      static_cast<int>(macro.u.size()) != spec.n_species)
    throw size_error("flux_limit_probe: macro field count mismatch");
  if (!(macro.T > 0.0)) throw std::domain_error("flux_limit_probe: T must be positive");
  for (double e : eps_list)
    if (!(e > 0.0) || e > 1.0)
      throw std::domain_error("flux_limit_probe: eps must lie in (0,1]");

  const double mi = spec.masses[i], mj = spec.masses[j];
  const double mu = spec.reduced_mass(i, j);
  const double phi = spec.phi(i, j);
  const AngularLaw& law = spec.b(i, j);
  const double gamma = spec.gamma;
  const double T = macro.T;
  const double si = std::sqrt(T / mi), sj = std::sqrt(T / mj);
  const Vec3 ui = macro.u[i], uj = macro.u[j];
  const double cc = macro.c[i] * macro.c[j];

  const Vec3 rhs = -k_closed_form(spec, i, j, T) * cc * (ui - uj);
  const double rhs_norm = norm(rhs);

  std::vector<FluxProbeRow> rows;
  for (std::size_t e_idx = 0; e_idx < eps_list.size(); ++e_idx) {
    const double eps = eps_list[e_idx];
    const double amp = 4.0 * M_PI * phi * cc * mu / eps;

    // scaled momentum-exchange integrand at shared Gaussian draws, with the
    // zero-velocity state subtracted (its mean is exactly zero)
    auto term = [&](const Vec3& v, const Vec3& vs, const Vec3& sig) -> Vec3 {
      const Vec3 w = v - vs;
      const double r2 = norm2(w);
      if (r2 <= 0.0) return {};
      const double r = std::sqrt(r2);
      const double ct = dot(w, sig) / r;
      const double B = std::pow(r2, 0.5 * gamma) * law.eval(ct);
      return B * (r * sig - w);
    };

    // Each draw is averaged over (+-thermal, +-sigma).  On that orbit the
    // zero-drift integrand sums to zero identically (flipping both thermal
    // velocities and sigma negates it), so the O(1/eps) part of the variance
    // cancels per sample rather than only in expectation.
    auto ests = mc_batches3(n_samples, seed + 1000 * e_idx, [&](CounterRng& rng) {
      const Vec3 xi = si * rng.next_gauss3();
      const Vec3 eta = sj * rng.next_gauss3();
      const Vec3 sig = rng.next_unit_sphere();
      const Vec3 di = eps * ui, dj = eps * uj;
      const Vec3 y = term(di + xi, dj + eta, sig) + term(di - xi, dj - eta, sig) +
                     term(di + xi, dj + eta, -1.0 * sig) +
                     term(di - xi, dj - eta, -1.0 * sig);
      return (0.25 * amp) * y;
    });
    Vec3 lhs, err;
    for (int comp = 0; comp < 3; ++comp) {
      lhs.comp(comp) = ests[comp].value;
      err.comp(comp) = ests[comp].std_err;
    }

    FluxProbeRow row;
    row.eps = eps;
    row.lhs = lhs;
    row.lhs_err = err;
    row.rhs = rhs;
    row.dev_abs = norm(lhs - rhs);
    row.dev_rel = rhs_norm > 0.0 ? row.dev_abs / rhs_norm
                                 : std::numeric_limits<double>::infinity();
    row.err_rel = rhs_norm > 0.0 ? norm(err) / rhs_norm
                                 : std::numeric_limits<double>::infinity();
    rows.push_back(row);
  }
  return rows;
}

namespace {

// Cells worth visiting: above the drop fraction of the species peak.
std::vector<unsigned char> active_flags(const std::vector<double>& f,
                                        double floor_v) {
  std::vector<unsigned char> on(f.size(), 0);
  for (std::size_t a = 0; a < f.size(); ++a) on[a] = f[a] > floor_v ? 1 : 0;
  return on;
}

struct DepositTarget {
  DepositStencil st;
  bool ok;
};

DepositTarget stencil_for(const VelocityGrid& g, const Vec3& p) {
  DepositTarget t{deposit_stencil(g, p), false};
  t.ok = t.st.in_box;
  return t;
}

void deposit(std::vector<double>& df, const VelocityGrid& g,
             const DepositStencil& st, double amount) {
  for (int ox = 0; ox < 4; ++ox) {
    const double wx = amount * st.w[0][ox];
    for (int oy = 0; oy < 4; ++oy) {
      const double wxy = wx * st.w[1][oy];
      double* row =
          &df[g.flat(st.base[0] + ox - 1, st.base[1] + oy - 1, st.base[2] - 1)];
      for (int oz = 0; oz < 4; ++oz) row[oz] += wxy * st.w[2][oz];
    }
  }
}

// dF = Q(F, F) by symmetrized quadrature over cell pairs and sphere nodes.
// Each unordered cell pair {a, b} is visited once; for unlike species of
// equal mass the two orientations (species i at a vs at b) share the pair
// centre of mass and the two post-collision stencils, so their gains
// deposit together; unequal masses get a second centre and stencil pair.
// For like species one orientation suffices: the reversed channel coincides
// with the original under the antipodal symmetry of the sphere rule.
void collision_rhs(const MixtureSpec& spec, const VelocityGrid& g,
                   const std::vector<std::vector<double>>& F,
                   const SphereRule& rule, double pair_drop_tol,
                   std::vector<std::vector<double>>& dF) {
  const int N = spec.n_species;
  const std::size_t n_cells = g.n_cells();
  for (auto& d : dF) std::fill(d.begin(), d.end(), 0.0);

  std::vector<double> peak(N, 0.0);
  for (int s = 0; s < N; ++s)
    peak[s] = *std::max_element(F[s].begin(), F[s].end());

  const std::size_t n_sigma = rule.nodes.size();
  std::vector<Vec3> nodes(n_cells);
  for (std::size_t a = 0; a < n_cells; ++a) nodes[a] = g.node(a);

  for (int i = 0; i < N; ++i)
    for (int j = i; j < N; ++j) {
      const double mi = spec.masses[i], mj = spec.masses[j];
      const double M = mi + mj;
      const double phi = spec.phi(i, j);
      const AngularLaw& law = spec.b(i, j);
      const double drop = pair_drop_tol * peak[i] * peak[j];
      if (drop <= 0.0) continue;
      const auto act_i = active_flags(F[i], pair_drop_tol * peak[i]);
      const auto act_j =
          i == j ? act_i : active_flags(F[j], pair_drop_tol * peak[j]);
      const double base_w = g.w_cell * 4.0 * M_PI;
      auto& dfi = dF[i];
      auto& dfj = dF[j];

      for (std::size_t a = 0; a + 1 < n_cells; ++a) {
        const bool a_i = act_i[a], a_j = act_j[a];
        if (!a_i && !a_j) continue;
        const Vec3 va = nodes[a];
        for (std::size_t b = a + 1; b < n_cells; ++b) {
          double ff1 = a_i && act_j[b] ? F[i][a] * F[j][b] : 0.0;  // i at a
          if (ff1 < drop) ff1 = 0.0;
          double ff2 = 0.0;  // i at b (unlike species only)
          if (i != j) {
            ff2 = act_i[b] && a_j ? F[i][b] * F[j][a] : 0.0;
            if (ff2 < drop) ff2 = 0.0;
          }
          if (ff1 == 0.0 && ff2 == 0.0) continue;

          const Vec3 vb = nodes[b];
          const Vec3 w = va - vb;
          const double r2 = norm2(w);
          const double r = std::sqrt(r2);
          const double kin = spec.gamma == 0.0 ? 1.0 : std::pow(r2, 0.5 * spec.gamma);
          const Vec3 G = (mi * va + mj * vb) / M;
          const double pre = base_w * phi * kin;
          const double ri = (mj / M) * r, rj = (mi / M) * r;
          if (i == j || mi == mj) {
            // both orientations share the centre of mass and the stencils
            for (std::size_t k = 0; k < n_sigma; ++k) {
              const Vec3 sig = rule.nodes[k];
              auto ti = stencil_for(g, G + ri * sig);
              if (!ti.ok) continue;
              auto tj = stencil_for(g, G - rj * sig);
              if (!tj.ok) continue;
              const double ct = dot(w, sig) / r;
              const double pw = pre * rule.weights[k];
              const double rate1 = ff1 > 0.0 ? pw * ff1 * law.eval(ct) : 0.0;
              const double rate2 = ff2 > 0.0 ? pw * ff2 * law.eval(-ct) : 0.0;
              dfi[a] -= rate1;
              dfj[b] -= rate1;
              dfi[b] -= rate2;
              dfj[a] -= rate2;
              if (i == j) {
                deposit(dfi, g, ti.st, rate1);
                deposit(dfi, g, tj.st, rate1);
              } else {
                deposit(dfi, g, ti.st, rate1 + rate2);
                deposit(dfj, g, tj.st, rate1 + rate2);
              }
            }
          } else {
            // unequal masses: the reversed orientation has its own centre
            const Vec3 G2 = (mi * vb + mj * va) / M;
            for (std::size_t k = 0; k < n_sigma; ++k) {
              const Vec3 sig = rule.nodes[k];
              const double ct = dot(w, sig) / r;
              const double pw = pre * rule.weights[k];
              if (ff1 > 0.0) {
                auto ti = stencil_for(g, G + ri * sig);
                if (ti.ok) {
                  auto tj = stencil_for(g, G - rj * sig);
                  if (tj.ok) {
                    const double rate1 = pw * ff1 * law.eval(ct);
                    dfi[a] -= rate1;
                    dfj[b] -= rate1;
                    deposit(dfi, g, ti.st, rate1);
                    deposit(dfj, g, tj.st, rate1);
                  }
                }
              }
              if (ff2 > 0.0) {
                auto ti = stencil_for(g, G2 + ri * sig);
                if (ti.ok) {
                  auto tj = stencil_for(g, G2 - rj * sig);
                  if (tj.ok) {
                    const double rate2 = pw * ff2 * law.eval(-ct);
                    dfi[b] -= rate2;
                    dfj[a] -= rate2;
                    deposit(dfi, g, ti.st, rate2);
                    deposit(dfj, g, tj.st, rate2);
                  }
                }
              }
            }
          }
        }
      }
    }
}

double entropy_of(const VelocityGrid& g, const std::vector<std::vector<double>>& F) {
  double h = 0.0;
  for (const auto& f : F) {
    double s = 0.0;
    for (double x : f)
      if (x > 0.0) s += x * std::log(x);
    h += s;
  }
  return h * g.w_cell;
}

}  // namespace

RelaxationResult homogeneous_relaxation(const MixtureSpec& spec,
                                        const DistributionVector& F0,
                                        const RelaxationOptions& opt) {
  spec.require_kinetic();
  F0.validate();
  if (static_cast<int>(F0.values.size()) != spec.n_species)
    throw size_error("homogeneous_relaxation: species count mismatch");
  if (!(opt.dt > 0.0) || opt.n_steps < 1)
    throw std::domain_error("homogeneous_relaxation: need dt > 0 and n_steps >= 1");

  const SphereRule rule = SphereRule::make(opt.sigma_nodes);
  const VelocityGrid& g = F0.grid;
  const int N = spec.n_species;
  const std::size_t n = g.n_cells();

  std::vector<std::vector<double>> F = F0.values;
  std::vector<std::vector<double>> k1(N, std::vector<double>(n)),
      k2(N, std::vector<double>(n)), mid(N, std::vector<double>(n));

  RelaxationResult out;
  auto record = [&](double t) {
    DistributionVector cur;
    cur.grid = g;
    cur.values = F;
    RelaxationStep step;
    step.t = t;
    step.moments = grid_moments(spec, cur);
    step.entropy = entropy_of(g, F);
    out.series.push_back(step);
  };
  record(0.0);

  double peak0 = 0.0;
  for (const auto& f : F)
    for (double x : f) peak0 = std::max(peak0, x);

  for (int step = 1; step <= opt.n_steps; ++step) {
    collision_rhs(spec, g, F, rule, opt.pair_drop_tol, k1);
    for (int s = 0; s < N; ++s)
      for (std::size_t a = 0; a < n; ++a) mid[s][a] = F[s][a] + opt.dt * k1[s][a];
    collision_rhs(spec, g, mid, rule, opt.pair_drop_tol, k2);
    double worst = 0.0;
    for (int s = 0; s < N; ++s)
      for (std::size_t a = 0; a < n; ++a) {
        F[s][a] += 0.5 * opt.dt * (k1[s][a] + k2[s][a]);
        worst = std::min(worst, F[s][a]);
      }
    if (worst < -opt.negativity_tol * peak0)
      throw step_size_error(
          "homogeneous_relaxation: distribution went negative (min " +
          fmt_double(worst) + "); reduce dt");
    record(step * opt.dt);
  }

  out.F_final.grid = g;
  out.F_final.values = std::move(F);
  return out;
}

namespace {

double abs_peak(const std::vector<double>& f) {
  double p = 0.0;
  for (double x : f) p = std::max(p, std::abs(x));
  return p;
}

std::vector<unsigned char> active_flags_abs(const std::vector<double>& f,
                                            double floor_v) {
  std::vector<unsigned char> on(f.size(), 0);
  for (std::size_t a = 0; a < f.size(); ++a) on[a] = std::abs(f[a]) > floor_v ? 1 : 0;
  return on;
}

}  // namespace

void collision_bilinear(const MixtureSpec& spec, const VelocityGrid& g,
                        const std::vector<std::vector<double>>& A,
                        const std::vector<std::vector<double>>& B,
                        const SphereRule& rule, double drop_tol,
                        std::vector<std::vector<double>>& R1,
                        std::vector<std::vector<double>>& R2) {
  spec.require_kinetic();
  const int N = spec.n_species;
  const std::size_t n_cells = g.n_cells();
  if (static_cast<int>(A.size()) != N || static_cast<int>(B.size()) != N)
    throw size_error("collision_bilinear: species count mismatch");
  for (int s = 0; s < N; ++s)
    if (A[s].size() != n_cells || B[s].size() != n_cells)
      throw size_error("collision_bilinear: field size does not match the grid");
  R1.assign(N, std::vector<double>(n_cells, 0.0));
  R2.assign(N, std::vector<double>(n_cells, 0.0));

  std::vector<double> pa(N), pb(N);
  std::vector<std::vector<unsigned char>> aa(N), ab(N);
  for (int s = 0; s < N; ++s) {
    pa[s] = abs_peak(A[s]);
    pb[s] = abs_peak(B[s]);
    aa[s] = active_flags_abs(A[s], drop_tol * pa[s]);
    ab[s] = active_flags_abs(B[s], drop_tol * pb[s]);
  }

  const std::size_t n_sigma = rule.nodes.size();
  std::vector<Vec3> nodes(n_cells);
  for (std::size_t a = 0; a < n_cells; ++a) nodes[a] = g.node(a);
  const double base_w = g.w_cell * 4.0 * M_PI;

  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) {
      const double mi = spec.masses[i], mj = spec.masses[j];
      const double M = mi + mj;
      const double phi = spec.phi(i, j);
      const AngularLaw& law = spec.b(i, j);
      const double drop1 = drop_tol * pa[i] * pb[j];
      const double drop2 = drop_tol * pb[i] * pa[j];
      if (drop1 <= 0.0 && drop2 <= 0.0) continue;
      auto& r1 = R1[i];
      auto& r2 = R2[i];

      for (std::size_t a = 0; a + 1 < n_cells; ++a) {
        const bool any_a = aa[i][a] || ab[i][a] || aa[j][a] || ab[j][a];
        if (!any_a) continue;
        const Vec3 va = nodes[a];
        for (std::size_t b = a + 1; b < n_cells; ++b) {
          // slot products: orientation 1 puts species i at cell a, species j
          // at cell b; orientation 2 swaps the cells.  o*a feeds R1, o*b R2.
          double o1a = aa[i][a] && ab[j][b] ? A[i][a] * B[j][b] : 0.0;
          double o1b = ab[i][a] && aa[j][b] ? B[i][a] * A[j][b] : 0.0;
          double o2a = aa[i][b] && ab[j][a] ? A[i][b] * B[j][a] : 0.0;
          double o2b = ab[i][b] && aa[j][a] ? B[i][b] * A[j][a] : 0.0;
          if (std::abs(o1a) < drop1) o1a = 0.0;
          if (std::abs(o1b) < drop2) o1b = 0.0;
          if (std::abs(o2a) < drop1) o2a = 0.0;
          if (std::abs(o2b) < drop2) o2b = 0.0;
          const bool use1 = o1a != 0.0 || o1b != 0.0;
          const bool use2 = o2a != 0.0 || o2b != 0.0;
          if (!use1 && !use2) continue;

          const Vec3 vb = nodes[b];
          const Vec3 w = va - vb;
          const double r2n = norm2(w);
          const double r = std::sqrt(r2n);
          const double kin = spec.gamma == 0.0 ? 1.0 : std::pow(r2n, 0.5 * spec.gamma);
          const Vec3 G1 = (mi * va + mj * vb) / M;
          const bool shared = mi == mj;
          const Vec3 G2 = shared ? G1 : (mi * vb + mj * va) / M;
          const double pre = base_w * phi * kin;
          const double ri = (mj / M) * r, rj = (mi / M) * r;
          for (std::size_t k = 0; k < n_sigma; ++k) {
            const Vec3 sig = rule.nodes[k];
            const double ct = dot(w, sig) / r;
            const double pw = pre * rule.weights[k];
            DepositTarget ti1{{}, false}, tj1{{}, false};
            bool have1 = false;
            if (use1) {
              ti1 = stencil_for(g, G1 + ri * sig);
              if (ti1.ok) {
                tj1 = stencil_for(g, G1 - rj * sig);
                if (tj1.ok) {
                  have1 = true;
                  const double lw = pw * law.eval(ct);
                  if (o1a != 0.0) {
                    const double rate = lw * o1a;
                    r1[a] -= rate;
                    deposit(r1, g, ti1.st, rate);
                  }
                  if (o1b != 0.0) {
                    const double rate = lw * o1b;
                    r2[a] -= rate;
                    deposit(r2, g, ti1.st, rate);
                  }
                }
              }
            }
            if (use2) {
              DepositTarget t2i = ti1, t2j = tj1;
              bool ok2 = have1;
              if (!shared || !use1) {
                t2i = stencil_for(g, G2 + ri * sig);
                ok2 = t2i.ok;
                if (ok2) {
                  t2j = stencil_for(g, G2 - rj * sig);
                  ok2 = t2j.ok;
                }
              }
              if (ok2) {
                const double lw = pw * law.eval(-ct);
                if (o2a != 0.0) {
                  const double rate = lw * o2a;
                  r1[b] -= rate;
                  deposit(r1, g, t2i.st, rate);
                }
                if (o2b != 0.0) {
                  const double rate = lw * o2b;
                  r2[b] -= rate;
                  deposit(r2, g, t2i.st, rate);
                }
              }
            }
          }
        }
      }
    }
}

namespace {

// int |z - w|^gamma rho(|w|) dw over R^3 for a radial rho, via
//   (2 pi / (|z| (gamma+2))) int_0^inf r rho(r) [ (|z|+r)^{g+2} - ||z|-r|^{g+2} ] dr
// with the |z| -> 0 limit 4 pi int r^{gamma+2} rho(r) dr.
double radial_gamma_integral(double zn, double gamma, double mj_over_T, double c_j) {
  // rho(r) = c_j (m_j / 2 pi T)^{3/2} exp(-m_j r^2 / 2T)
  const double amp = c_j * std::pow(mj_over_T / (2.0 * M_PI), 1.5);
  const double r_max = 10.0 / std::sqrt(mj_over_T);
  static const double glx[8] = {-0.9602898564975363, -0.7966664774136267,
                                -0.5255324099163290, -0.1834346424956498,
                                0.1834346424956498,  0.5255324099163290,
                                0.7966664774136267,  0.9602898564975363};
  static const double glw[8] = {0.1012285362903763, 0.2223810344533745,
                                0.3137066458778873, 0.3626837833783620,
                                0.3626837833783620, 0.3137066458778873,
                                0.2223810344533745, 0.1012285362903763};
  const double p = gamma + 2.0;
  auto integrand = [&](double r) {
    const double rho = amp * std::exp(-0.5 * mj_over_T * r * r);
    if (zn < 1e-8) return 4.0 * M_PI * std::pow(r, p) * rho;
    const double hi_p = std::pow(zn + r, p);
    const double lo_p = std::pow(std::abs(zn - r), p);
    return (2.0 * M_PI / (zn * p)) * r * rho * (hi_p - lo_p);
  };
  // |zn - r|^p has limited smoothness at r = zn; keep that point on a panel
  // boundary so each panel sees an analytic integrand
  auto segment = [&](double a, double b, int panels) {
    double total = 0.0;
    for (int pa = 0; pa < panels; ++pa) {
      const double lo = a + (b - a) * pa / panels, hi = a + (b - a) * (pa + 1) / panels;
      const double mid_r = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
      double s = 0.0;
      for (int q = 0; q < 8; ++q) s += glw[q] * integrand(mid_r + half * glx[q]);
      total += s * half;
    }
    return total;
  };
  if (zn > 1e-8 && zn < r_max)
    return segment(0.0, zn, 24) + segment(zn, r_max, 24);
  return segment(0.0, r_max, 48);
}

}  // namespace

double nu_pair_at(const MixtureSpec& spec, int i, int j, const MaxwellianParams& pj,
                  const Vec3& v) {
  check_pair_kinetic(spec, i, j);
  pj.validate();
  const double angular = 2.0 * M_PI * spec.b(i, j).l1();
  const double zn = norm(v - pj.eps * pj.u);
  return spec.phi(i, j) * angular *
         radial_gamma_integral(zn, spec.gamma, pj.m / pj.T, pj.c);
}

NuField nu_eval(const MixtureSpec& spec, const LocalMacro& macro, double eps,
                const VelocityGrid& grid) {
  spec.require_kinetic();
  const int N = spec.n_species;
  if (static_cast<int>(macro.c.size()) != N || static_cast<int>(macro.u.size()) != N)
    throw size_error("nu_eval: macro field count mismatch");

  NuField field;
  field.grid = grid;
  field.n_species = N;
  field.values.assign(static_cast<std::size_t>(N) * N,
                      std::vector<double>(grid.n_cells()));
  field.low.assign(static_cast<std::size_t>(N) * N, 0.0);
  field.up.assign(static_cast<std::size_t>(N) * N, 0.0);

  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) {
      MaxwellianParams pj;
      pj.c = macro.c[j];
      pj.m = spec.masses[j];
      pj.u = macro.u[j];
      pj.T = macro.T;
      pj.eps = eps;
      auto& vals = field.values[static_cast<std::size_t>(i) * N + j];
      double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
      for (std::size_t a = 0; a < grid.n_cells(); ++a) {
        const Vec3 v = grid.node(a);
        const double nu = nu_pair_at(spec, i, j, pj, v);
        vals[a] = nu;
        const double env = macro.c[j] * std::pow(1.0 + norm2(v), 0.5 * spec.gamma);
        const double ratio = nu / env;
        lo = std::min(lo, ratio);
        hi = std::max(hi, ratio);
      }
      if (!(lo > 0.0) || !std::isfinite(hi))
        throw invariant_failure("nu_eval: envelope constants degenerate for pair (" +
                                std::to_string(i + 1) + "," + std::to_string(j + 1) +
                                ")");
      field.low[static_cast<std::size_t>(i) * N + j] = lo;
      field.up[static_cast<std::size_t>(i) * N + j] = hi;
      for (std::size_t a = 0; a < grid.n_cells(); ++a) {
        const Vec3 v = grid.node(a);
        const double env = macro.c[j] * std::pow(1.0 + norm2(v), 0.5 * spec.gamma);
        if (!(vals[a] >= lo * env * (1.0 - 1e-12)) ||
            !(vals[a] <= hi * env * (1.0 + 1e-12)))
          throw invariant_failure("nu_eval: envelope violated on the grid");
      }
    }
  return field;
}

}  // namespace mskin
