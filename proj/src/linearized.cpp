#include "mskin/linearized.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>

#include "json.hpp"
#include "mskin/rng.hpp"

namespace mskin {

namespace {

std::vector<MaxwellianParams> equilibrium_params(const MixtureSpec& spec,
                                                 const std::vector<double>& c_bar) {
  if (static_cast<int>(c_bar.size()) != spec.n_species)
    throw config_error("linearized: c_bar size does not match the species count");
  std::vector<MaxwellianParams> eq(spec.n_species);
  for (int s = 0; s < spec.n_species; ++s) {
    if (!(c_bar[s] > 0.0) || !std::isfinite(c_bar[s]))
      throw config_error("linearized: c_bar entries must be positive and finite");
    eq[s].c = c_bar[s];
    eq[s].m = spec.masses[s];
    eq[s].T = 1.0;
  }
  return eq;
}

void check_field(const SpeciesField& f, int n_species, std::size_t n_cells,
                 const char* what) {
  if (static_cast<int>(f.size()) != n_species)
    throw size_error(std::string(what) + ": species count mismatch");
  for (const auto& fs : f)
    if (fs.size() != n_cells)
      throw size_error(std::string(what) + ": field size does not match the grid");
}

double inner(const SpeciesField& a, const SpeciesField& b, const VelocityGrid& g,
             std::vector<double>& scratch) {
  scratch.clear();
  for (std::size_t s = 0; s < a.size(); ++s)
    for (std::size_t c = 0; c < a[s].size(); ++c) scratch.push_back(a[s][c] * b[s][c]);
  return g.w_cell * pairwise_sum(scratch);
}

// Per-axis quadratic interpolation weights centred on the nearest node;
// reproduces polynomials of degree two exactly, which is what keeps the
// invariant modes in the kernel of the assembled operator.  Points beyond the
// outermost centred stencil clamp to it and extrapolate; that is still exact
// on degree two, and the weight growth is polynomial against channel weights
// that decay exponentially in the same distance.
struct InterpStencil {
  int base[3];      // centre node per axis, support base-1 .. base+1
  double w[3][3];
};

InterpStencil interp_stencil(const VelocityGrid& g, const Vec3& p) {
  InterpStencil s;
  const double coords[3] = {p.x, p.y, p.z};
  for (int ax = 0; ax < 3; ++ax) {
    const double t = (coords[ax] - g.axis[0]) / g.h;
    const int n = std::clamp(static_cast<int>(std::floor(t + 0.5)), 1, g.n_v - 2);
    const double xi = t - n;
    s.base[ax] = n;
    s.w[ax][0] = 0.5 * xi * (xi - 1.0);
    s.w[ax][1] = (1.0 - xi) * (1.0 + xi);
    s.w[ax][2] = 0.5 * xi * (xi + 1.0);
  }
  return s;
}

struct TauEntry {
  std::ptrdiff_t dof;
  double c;
};

struct TauBuffer {
  std::array<TauEntry, 64> e;
  int m = 0;
};

// Appends the nonzero-weight nodes of one interpolation stencil, scaled by
// the species' mu^{-1/2}; false when a needed node lies outside the indexed
// support (the whole channel is then dropped so that its reversed partner,
// which evaluates the same two stencils, drops with it).  With the support
// sized to the elastic reach of the retained pairs this never triggers.
bool gather_block(const std::vector<std::ptrdiff_t>& idx, const std::vector<double>& ism,
                  const VelocityGrid& g, const InterpStencil& st, TauBuffer& tau) {
  const std::size_t n = static_cast<std::size_t>(g.n_v);
  for (int dx = 0; dx < 3; ++dx) {
    const double wx = st.w[0][dx];
    const std::size_t cx = (static_cast<std::size_t>(st.base[0] + dx - 1)) * n;
    for (int dy = 0; dy < 3; ++dy) {
      const double wxy = wx * st.w[1][dy];
      const std::size_t cxy = (cx + static_cast<std::size_t>(st.base[1] + dy - 1)) * n;
      for (int dz = 0; dz < 3; ++dz) {
        const double w = wxy * st.w[2][dz];
        if (w == 0.0) continue;
        const std::size_t cell = cxy + static_cast<std::size_t>(st.base[2] + dz - 1);
        const std::ptrdiff_t dof = idx[cell];
        if (dof < 0) return false;
        tau.e[tau.m++] = {dof, w * ism[cell]};
      }
    }
  }
  return true;
}

void merge_tau(TauBuffer& tau) {
  std::sort(tau.e.begin(), tau.e.begin() + tau.m,
            [](const TauEntry& a, const TauEntry& b) { return a.dof < b.dof; });
  int out = 0;
  for (int k = 0; k < tau.m; ++k) {
    if (out > 0 && tau.e[out - 1].dof == tau.e[k].dof)
      tau.e[out - 1].c += tau.e[k].c;
    else
      tau.e[out++] = tau.e[k];
  }
  tau.m = out;
}

// Rank-one update of the lower triangle (column-major) with merged entries
// sorted by dof, so inner writes walk down one column.
void accumulate(Eigen::MatrixXd& S, const TauBuffer& tau, double wgt) {
  double* sd = S.data();
  const std::ptrdiff_t D = S.rows();
  for (int k1 = 0; k1 < tau.m; ++k1) {
    const double c1 = wgt * tau.e[k1].c;
    double* col = sd + tau.e[k1].dof * D;
    for (int k2 = k1; k2 < tau.m; ++k2) col[tau.e[k2].dof] += c1 * tau.e[k2].c;
  }
}

}  // namespace

Eigen::VectorXd ActiveSet::restrict_field(const SpeciesField& f) const {
  check_field(f, n_species, grid.n_cells(), "ActiveSet::restrict_field");
  Eigen::VectorXd x(static_cast<std::ptrdiff_t>(cells.size()));
  for (std::size_t d = 0; d < cells.size(); ++d)
    x[static_cast<std::ptrdiff_t>(d)] = f[cells[d].first][cells[d].second];
  return x;
}

SpeciesField ActiveSet::extend(const Eigen::VectorXd& x) const {
  if (static_cast<std::size_t>(x.size()) != cells.size())
    throw size_error("ActiveSet::extend: vector does not match the active set");
  SpeciesField f(n_species, std::vector<double>(grid.n_cells(), 0.0));
  for (std::size_t d = 0; d < cells.size(); ++d)
    f[cells[d].first][cells[d].second] = x[static_cast<std::ptrdiff_t>(d)];
  return f;
}

KernelBasis make_kernel_basis(const MixtureSpec& spec, const std::vector<double>& c_bar,
                              const VelocityGrid& grid) {
  auto eq = equilibrium_params(spec, c_bar);
  const int N = spec.n_species;
  const std::size_t n_cells = grid.n_cells();
  auto mu = sample_maxwellians(eq, grid);

  KernelBasis basis;
  basis.grid = grid;
  basis.n_species = N;
  basis.c_bar = c_bar;

  double mass_sum = 0.0, conc_sum = 0.0;
  for (int s = 0; s < N; ++s) {
    mass_sum += spec.masses[s] * c_bar[s];
    conc_sum += c_bar[s];
  }

  const int nb = N + 4;
  basis.raw.assign(nb, SpeciesField(N, std::vector<double>(n_cells, 0.0)));
  std::vector<std::vector<double>> sqrt_mu(N, std::vector<double>(n_cells));
  for (int s = 0; s < N; ++s)
    for (std::size_t c = 0; c < n_cells; ++c) sqrt_mu[s][c] = std::sqrt(mu.values[s][c]);

  for (int i = 0; i < N; ++i) {
    const double norm_c = 1.0 / std::sqrt(c_bar[i]);
    for (std::size_t c = 0; c < n_cells; ++c)
      basis.raw[i][i][c] = sqrt_mu[i][c] * norm_c;
  }
  const double norm_m = 1.0 / std::sqrt(mass_sum);
  const double norm_e = 1.0 / std::sqrt(6.0 * conc_sum);
  for (std::size_t c = 0; c < n_cells; ++c) {
    const Vec3 v = grid.node(c);
    const double v2 = norm2(v);
    for (int s = 0; s < N; ++s) {
      const double ms = spec.masses[s];
      for (int l = 0; l < 3; ++l)
        basis.raw[N + l][s][c] = v.comp(l) * ms * sqrt_mu[s][c] * norm_m;
      basis.raw[N + 3][s][c] = (ms * v2 - 3.0) * sqrt_mu[s][c] * norm_e;
    }
  }

  std::vector<double> scratch;
  basis.gram.resize(nb, nb);
  for (int k = 0; k < nb; ++k)
    for (int l = 0; l <= k; ++l) {
      const double gkl = inner(basis.raw[k], basis.raw[l], grid, scratch);
      basis.gram(k, l) = gkl;
      basis.gram(l, k) = gkl;
    }

  // exact grid-orthonormalization: with G = R^T R, the combination
  // raw * R^{-1} has Gram identity, making projections built on it idempotent
  Eigen::LLT<Eigen::MatrixXd> llt(basis.gram);
  if (llt.info() != Eigen::Success)
    throw invariant_failure("make_kernel_basis: Gram matrix not positive definite");
  Eigen::MatrixXd coef =
      Eigen::MatrixXd(llt.matrixL()).inverse().transpose();  // raw -> ortho map

  basis.ortho.assign(nb, SpeciesField(N, std::vector<double>(n_cells, 0.0)));
  for (int k = 0; k < nb; ++k)
    for (int l = 0; l < nb; ++l) {
      const double w = coef(l, k);
      if (w == 0.0) continue;
      for (int s = 0; s < N; ++s)
        for (std::size_t c = 0; c < n_cells; ++c)
          basis.ortho[k][s][c] += basis.raw[l][s][c] * w;
    }
  return basis;
}

DiscreteOperator assemble_L(const MixtureSpec& spec, const std::vector<double>& c_bar,
                            const VelocityGrid& grid, const LinearizedOptions& opts) {
  spec.require_kinetic();
  auto eq = equilibrium_params(spec, c_bar);
  const int N = spec.n_species;
  const std::size_t n_cells = grid.n_cells();
  auto mu_dist = sample_maxwellians(eq, grid);
  const auto& mu = mu_dist.values;

  // Two nested supports: cells that may open a collision channel (pair cut on
  // mu mu*, radius sqrt(2 log(1/pair_cut) / m)), and the indexed support that
  // must additionally hold every post-collision deposit.  Elastic channels
  // conserve m_i|v'|^2 + m_j|v*'|^2, so primes of retained pairs stay inside
  // the first ball and their stencils inside the second.
  ActiveSet aset;
  aset.grid = grid;
  aset.n_species = N;
  aset.index.assign(N, std::vector<std::ptrdiff_t>(n_cells, -1));
  std::vector<std::vector<double>> ism(N, std::vector<double>(n_cells, 0.0));
  std::vector<std::vector<unsigned char>> act(N);
  std::vector<double> peak(N, 0.0);
  const double log_pc = std::log(1.0 / opts.pair_cut);
  const double stencil_reach = (1.5 * std::sqrt(3.0) + 0.01) * grid.h;
  const double m_max = *std::max_element(spec.masses.begin(), spec.masses.end());
  for (int s = 0; s < N; ++s) {
    for (double v : mu[s]) peak[s] = std::max(peak[s], v);
    act[s].assign(n_cells, 0);
    // 0.75 h^2 per mass: the species peaks lie up to sqrt(3) h / 2 off the
    // origin, which loosens the pair cut by that much kinetic energy
    const double r_idx =
        std::sqrt((2.0 * log_pc + 0.75 * grid.h * grid.h * (spec.masses[s] + m_max)) /
                  spec.masses[s]) +
        stencil_reach;
    const double r2_idx = r_idx * r_idx;
    for (std::size_t c = 0; c < n_cells; ++c) {
      if (mu[s][c] >= opts.pair_cut * peak[s]) act[s][c] = 1;
      if (norm2(grid.node(c)) <= r2_idx) {
        ism[s][c] = 1.0 / std::sqrt(mu[s][c]);
        aset.index[s][c] = static_cast<std::ptrdiff_t>(aset.cells.size());
        aset.cells.emplace_back(s, c);
      }
    }
  }
  if (aset.dof() > opts.dof_cap)
    throw size_error("assemble_L: " + std::to_string(aset.dof()) +
                     " degrees of freedom exceed the cap of " +
                     std::to_string(opts.dof_cap));

  const std::ptrdiff_t D = static_cast<std::ptrdiff_t>(aset.dof());
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(D, D);
  auto rule = SphereRule::make(opts.sigma_nodes);
  const std::size_t n_sigma = rule.nodes.size();
  std::vector<Vec3> nodes(n_cells);
  for (std::size_t c = 0; c < n_cells; ++c) nodes[c] = grid.node(c);
  const double half = 0.5 * grid.w_cell * grid.w_cell * 4.0 * M_PI;
  TauBuffer tau;

  // quadratic-form sweep: every kept channel adds W tau tau^T, so the matrix
  // is negative semidefinite and symmetric by construction; species pairs
  // i < j need both cell orientations (their pair centres differ), like
  // species cover the reversed channel through the antipodal sphere nodes
  for (int i = 0; i < N; ++i)
    for (int j = i; j < N; ++j) {
      const bool like = (i == j);
      const double mi = spec.masses[i], mj = spec.masses[j];
      const double M = mi + mj;
      const double phi = spec.phi(i, j);
      const AngularLaw& law = spec.b(i, j);
      const double cut_w = opts.pair_cut * peak[i] * peak[j];
      const auto& idx_i = aset.index[i];
      const auto& idx_j = aset.index[j];

      for (std::size_t a = 0; a + 1 < n_cells; ++a) {
        const bool a_i = act[i][a], a_j = act[j][a];
        if (!a_i && !a_j) continue;
        const Vec3 va = nodes[a];
        const double mu_ia = mu[i][a], mu_ja = mu[j][a];
        for (std::size_t b = a + 1; b < n_cells; ++b) {
          double w1 = (a_i && act[j][b]) ? mu_ia * mu[j][b] : 0.0;
          if (w1 < cut_w) w1 = 0.0;
          double w2 = (!like && a_j && act[i][b]) ? mu[i][b] * mu_ja : 0.0;
          if (w2 < cut_w) w2 = 0.0;
          if (w1 == 0.0 && w2 == 0.0) continue;

          const Vec3 vb = nodes[b];
          const Vec3 w = va - vb;
          const double r2n = norm2(w);
          const double r = std::sqrt(r2n);
          const double kin = spec.gamma == 0.0
                                 ? 1.0
                                 : (spec.gamma == 1.0 ? r : std::pow(r2n, 0.5 * spec.gamma));
          const Vec3 G1 = (mi * va + mj * vb) / M;
          const Vec3 G2 = (mi * vb + mj * va) / M;
          const double ri = (mj / M) * r, rj = (mi / M) * r;
          const double pre = half * phi * kin;

          for (std::size_t k = 0; k < n_sigma; ++k) {
            const Vec3 sig = rule.nodes[k];
            const double ct = dot(w, sig) / r;
            const double pw = pre * rule.weights[k];
            InterpStencil si1{{}, {}, false}, sj1{{}, {}, false};
            if (w1 != 0.0) {
              si1 = interp_stencil(grid, G1 + ri * sig);
              sj1 = interp_stencil(grid, G1 - rj * sig);
              tau.m = 0;
              gather_block(idx_i, ism[i], grid, si1, tau);
              tau.e[tau.m++] = {idx_i[a], -ism[i][a]};
              gather_block(idx_j, ism[j], grid, sj1, tau);
              tau.e[tau.m++] = {idx_j[b], -ism[j][b]};
              merge_tau(tau);
              accumulate(S, tau, pw * law.eval(ct) * w1);
            }
            if (w2 != 0.0) {
              InterpStencil si2, sj2;
              if (mi == mj && w1 != 0.0) {
                si2 = si1;
                sj2 = sj1;
              } else {
                si2 = interp_stencil(grid, G2 + ri * sig);
                sj2 = interp_stencil(grid, G2 - rj * sig);
              }
              tau.m = 0;
              gather_block(idx_i, ism[i], grid, si2, tau);
              tau.e[tau.m++] = {idx_i[b], -ism[i][b]};
              gather_block(idx_j, ism[j], grid, sj2, tau);
              tau.e[tau.m++] = {idx_j[a], -ism[j][a]};
              merge_tau(tau);
              accumulate(S, tau, pw * law.eval(-ct) * w2);
            }
          }
        }
      }
    }

  S.triangularView<Eigen::StrictlyUpper>() =
      S.transpose().triangularView<Eigen::StrictlyUpper>();

  // cells whose every channel was eroded away carry an identically zero row;
  // drop them from the index space so they cannot masquerade as kernel modes
  std::vector<std::ptrdiff_t> keep;
  keep.reserve(aset.dof());
  for (std::ptrdiff_t d = 0; d < D; ++d)
    if (S(d, d) != 0.0) keep.push_back(d);
  if (static_cast<std::ptrdiff_t>(keep.size()) < D) {
    const std::ptrdiff_t Dk = static_cast<std::ptrdiff_t>(keep.size());
    Eigen::MatrixXd Sk(Dk, Dk);
    for (std::ptrdiff_t q = 0; q < Dk; ++q)
      for (std::ptrdiff_t p = 0; p < Dk; ++p) Sk(p, q) = S(keep[p], keep[q]);
    ActiveSet trimmed;
    trimmed.grid = grid;
    trimmed.n_species = N;
    trimmed.index.assign(N, std::vector<std::ptrdiff_t>(n_cells, -1));
    for (std::ptrdiff_t d = 0; d < Dk; ++d) {
      const auto sc = aset.cells[static_cast<std::size_t>(keep[d])];
      trimmed.index[sc.first][sc.second] = d;
      trimmed.cells.push_back(sc);
    }
    aset = std::move(trimmed);
    S = std::move(Sk);
  }

  double asym2 = 0.0, norm2_s = 0.0;
  for (std::ptrdiff_t q = 0; q < S.cols(); ++q)
    for (std::ptrdiff_t p = 0; p < S.rows(); ++p) {
      norm2_s += S(p, q) * S(p, q);
      if (p > q) {
        const double d = S(p, q) - S(q, p);
        asym2 += 2.0 * d * d;
      }
    }

  DiscreteOperator op;
  op.kind = OperatorKind::L;
  op.spec = spec;
  op.c_bar = c_bar;
  op.active = std::move(aset);
  S *= -1.0 / grid.w_cell;
  op.matrix = std::move(S);
  op.asymmetry = norm2_s > 0.0 ? std::sqrt(asym2 / norm2_s) : 0.0;
  return op;
}

DiscreteOperator assemble_nu_diagonal(const MixtureSpec& spec,
                                      const std::vector<double>& c_bar,
                                      const std::vector<MaxwellianParams>& params,
                                      const VelocityGrid& grid,
                                      const LinearizedOptions& opts) {
  auto eq = equilibrium_params(spec, c_bar);
  const int N = spec.n_species;
  if (static_cast<int>(params.size()) != N)
    throw config_error("assemble_nu_diagonal: one Maxwellian per species required");
  for (int s = 0; s < N; ++s) {
    params[s].validate();
    if (params[s].m != spec.masses[s])
      throw config_error("assemble_nu_diagonal: Maxwellian mass differs from the species mass");
  }
  const std::size_t n_cells = grid.n_cells();
  auto mu_dist = sample_maxwellians(eq, grid);

  ActiveSet aset;
  aset.grid = grid;
  aset.n_species = N;
  aset.index.assign(N, std::vector<std::ptrdiff_t>(n_cells, -1));
  for (int s = 0; s < N; ++s) {
    double peak = 0.0;
    for (double v : mu_dist.values[s]) peak = std::max(peak, v);
    for (std::size_t c = 0; c < n_cells; ++c)
      if (mu_dist.values[s][c] > opts.active_tol * peak) {
        aset.index[s][c] = static_cast<std::ptrdiff_t>(aset.cells.size());
        aset.cells.emplace_back(s, c);
      }
  }
  if (aset.dof() > opts.dof_cap)
    throw size_error("assemble_nu_diagonal: active set exceeds the cap");

  DiscreteOperator op;
  op.kind = OperatorKind::nu_diagonal;
  op.spec = spec;
  op.c_bar = c_bar;
  // diagonal operator: the matrix is stored as a single column
  op.matrix.resize(static_cast<std::ptrdiff_t>(aset.dof()), 1);
  for (std::size_t d = 0; d < aset.dof(); ++d) {
    const int s = aset.cells[d].first;
    const Vec3 v = grid.node(aset.cells[d].second);
    double nu = 0.0;
    for (int j = 0; j < N; ++j) nu += nu_pair_at(spec, s, j, params[j], v);
    op.matrix(static_cast<std::ptrdiff_t>(d), 0) = nu;
  }
  op.active = std::move(aset);
  op.asymmetry = 0.0;
  return op;
}

SplitField project_pi_L(const SpeciesField& f, const KernelBasis& basis) {
  check_field(f, basis.n_species, basis.grid.n_cells(), "project_pi_L");
  SplitField out;
  out.parallel.assign(basis.n_species,
                      std::vector<double>(basis.grid.n_cells(), 0.0));
  std::vector<double> scratch;
  for (int k = 0; k < basis.size(); ++k) {
    const double a = inner(f, basis.ortho[k], basis.grid, scratch);
    for (int s = 0; s < basis.n_species; ++s)
      for (std::size_t c = 0; c < basis.grid.n_cells(); ++c)
        out.parallel[s][c] += a * basis.ortho[k][s][c];
  }
  out.perp = f;
  for (int s = 0; s < basis.n_species; ++s)
    for (std::size_t c = 0; c < basis.grid.n_cells(); ++c)
      out.perp[s][c] -= out.parallel[s][c];
  return out;
}

SpeciesField project_pi_L_explicit(const SpeciesField& f, const KernelBasis& basis,
                                   const MixtureSpec& spec) {
  const int N = basis.n_species;
  const std::size_t n_cells = basis.grid.n_cells();
  check_field(f, N, n_cells, "project_pi_L_explicit");
  if (spec.n_species != N)
    throw config_error("project_pi_L_explicit: species count mismatch");

  // recover mu^{1/2} from the per-species block of the raw basis
  std::vector<std::vector<double>> sqrt_mu(N);
  for (int s = 0; s < N; ++s) {
    sqrt_mu[s].resize(n_cells);
    const double scale = std::sqrt(basis.c_bar[s]);
    for (std::size_t c = 0; c < n_cells; ++c)
      sqrt_mu[s][c] = basis.raw[s][s][c] * scale;
  }
  double mass_sum = 0.0, conc_sum = 0.0;
  for (int s = 0; s < N; ++s) {
    mass_sum += spec.masses[s] * basis.c_bar[s];
    conc_sum += basis.c_bar[s];
  }

  SpeciesField out(N, std::vector<double>(n_cells, 0.0));
  std::vector<double> scratch;
  const double w_cell = basis.grid.w_cell;

  // per-species concentration block
  for (int s = 0; s < N; ++s) {
    scratch.clear();
    for (std::size_t c = 0; c < n_cells; ++c) scratch.push_back(f[s][c] * sqrt_mu[s][c]);
    const double coef = w_cell * pairwise_sum(scratch) / basis.c_bar[s];
    for (std::size_t c = 0; c < n_cells; ++c) out[s][c] += coef * sqrt_mu[s][c];
  }
  // mixture momentum block
  for (int l = 0; l < 3; ++l) {
    scratch.clear();
    for (int s = 0; s < N; ++s)
      for (std::size_t c = 0; c < n_cells; ++c)
        scratch.push_back(spec.masses[s] * basis.grid.node(c).comp(l) * f[s][c] *
                          sqrt_mu[s][c]);
    const double coef = w_cell * pairwise_sum(scratch) / mass_sum;
    for (int s = 0; s < N; ++s)
      for (std::size_t c = 0; c < n_cells; ++c)
        out[s][c] += coef * basis.grid.node(c).comp(l) * spec.masses[s] * sqrt_mu[s][c];
  }
  // mixture energy block
  scratch.clear();
  const double inv_sqrt6 = 1.0 / std::sqrt(6.0);
  for (int s = 0; s < N; ++s)
    for (std::size_t c = 0; c < n_cells; ++c)
      scratch.push_back((spec.masses[s] * norm2(basis.grid.node(c)) - 3.0) * inv_sqrt6 *
                        f[s][c] * sqrt_mu[s][c]);
  const double coef = w_cell * pairwise_sum(scratch) / conc_sum;
  for (int s = 0; s < N; ++s)
    for (std::size_t c = 0; c < n_cells; ++c)
      out[s][c] += coef * (spec.masses[s] * norm2(basis.grid.node(c)) - 3.0) *
                   inv_sqrt6 * sqrt_mu[s][c];
  return out;
}

SpeciesField project_pi_T(const std::vector<SpeciesField>& f_of_x, double dx,
                          const KernelBasis& basis) {
  if (f_of_x.empty()) throw size_error("project_pi_T: empty spatial grid");
  if (!(dx > 0.0)) throw config_error("project_pi_T: dx must be positive");
  SpeciesField sum(basis.n_species, std::vector<double>(basis.grid.n_cells(), 0.0));
  for (const auto& slice : f_of_x) {
    check_field(slice, basis.n_species, basis.grid.n_cells(), "project_pi_T");
    for (int s = 0; s < basis.n_species; ++s)
      for (std::size_t c = 0; c < basis.grid.n_cells(); ++c) sum[s][c] += slice[s][c];
  }
  for (int s = 0; s < basis.n_species; ++s)
    for (std::size_t c = 0; c < basis.grid.n_cells(); ++c) sum[s][c] *= dx;
  return project_pi_L(sum, basis).parallel;
}

double c_pi_constant(const KernelBasis& basis, double gamma) {
  const int nb = basis.size();
  const std::size_t n_cells = basis.grid.n_cells();
  std::vector<double> wv(n_cells);
  for (std::size_t c = 0; c < n_cells; ++c)
    wv[c] = std::pow(1.0 + norm2(basis.grid.node(c)), 0.5 * gamma);
  double worst = 0.0;
  std::vector<double> scratch;
  for (int k = 0; k < nb; ++k)
    for (int l = 0; l <= k; ++l) {
      scratch.clear();
      for (int s = 0; s < basis.n_species; ++s)
        for (std::size_t c = 0; c < n_cells; ++c)
          scratch.push_back(basis.raw[k][s][c] * basis.raw[l][s][c] * wv[c]);
      worst = std::max(worst, std::abs(basis.grid.w_cell * pairwise_sum(scratch)));
    }
  return nb * worst;
}

GapReport estimate_spectral_gap(const DiscreteOperator& op, const KernelBasis& basis,
                                const GapOptions& gopts) {
  if (op.kind != OperatorKind::L)
    throw config_error("estimate_spectral_gap: needs the symmetric linearized kind");
  if (!op.active.grid.same_layout(basis.grid) || basis.n_species != op.active.n_species)
    throw config_error("estimate_spectral_gap: basis does not match the operator");
  const std::ptrdiff_t D = op.matrix.rows();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.compute(op.matrix, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    throw invariant_failure("estimate_spectral_gap: eigensolver did not converge");

  GapReport rep;
  rep.spectrum.resize(static_cast<std::size_t>(D));
  for (std::ptrdiff_t k = 0; k < D; ++k)
    rep.spectrum[static_cast<std::size_t>(k)] = -es.eigenvalues()[D - 1 - k];
  rep.op_norm =
      std::max(std::abs(rep.spectrum.front()), std::abs(rep.spectrum.back()));
  const double thr = 1e-6 * rep.op_norm;
  int kd = 0;
  while (kd < D && std::abs(rep.spectrum[static_cast<std::size_t>(kd)]) < thr) ++kd;
  rep.kernel_dim = kd;
  if (kd >= D)
    throw invariant_failure("estimate_spectral_gap: no mode above the kernel threshold");
  rep.lambda_L = rep.spectrum[static_cast<std::size_t>(kd)];
  if (!(rep.lambda_L > 0.0))
    throw invariant_failure(
        "estimate_spectral_gap: gap " + fmt_double(rep.lambda_L) +
        " is not positive; the grid is too small or the truncation too tight");

  const int nb = basis.size();
  Eigen::MatrixXd K(D, nb);
  for (int k = 0; k < nb; ++k) K.col(k) = op.active.restrict_field(basis.ortho[k]);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(K);
  Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(D, nb);

  rep.kernel_defect = 0.0;
  for (int k = 0; k < nb; ++k)
    rep.kernel_defect = std::max(rep.kernel_defect, (op.matrix * Q.col(k)).norm());

  std::vector<double> wv(static_cast<std::size_t>(D));
  for (std::size_t d = 0; d < static_cast<std::size_t>(D); ++d)
    wv[d] = std::pow(1.0 + norm2(op.active.grid.node(op.active.cells[d].second)),
                     0.5 * op.spec.gamma);

  CounterRng rng(gopts.seed, 0);
  double min_w = std::numeric_limits<double>::infinity();
  double min_p = min_w;
  Eigen::VectorXd f(D), g(D);
  for (int t = 0; t < gopts.n_random; ++t) {
    for (std::ptrdiff_t d = 0; d < D; ++d) f[d] = rng.next_gauss();
    f -= Q * (Q.transpose() * f);
    g.noalias() = op.matrix * f;
    const double num = -f.dot(g);
    double den_p = 0.0, den_w = 0.0;
    for (std::ptrdiff_t d = 0; d < D; ++d) {
      const double s = f[d] * f[d];
      den_p += s;
      den_w += s * wv[static_cast<std::size_t>(d)];
    }
    min_p = std::min(min_p, num / den_p);
    min_w = std::min(min_w, num / den_w);
  }
  rep.weighted = min_w;
  rep.unweighted = min_p;
  return rep;
}

namespace {

SpeciesField bilinear_weighted(const MixtureSpec& spec, const std::vector<double>& c_bar,
                               const VelocityGrid& grid, const SpeciesField& A,
                               const SpeciesField& B, const LinearizedOptions& opts,
                               double scale,
                               const std::vector<std::vector<double>>& mu) {
  auto rule = SphereRule::make(opts.sigma_nodes);
  std::vector<std::vector<double>> R1, R2;
  collision_bilinear(spec, grid, A, B, rule, opts.pair_cut, R1, R2);
  const int N = spec.n_species;
  SpeciesField out(N, std::vector<double>(grid.n_cells(), 0.0));
  for (int s = 0; s < N; ++s)
    for (std::size_t c = 0; c < grid.n_cells(); ++c)
      out[s][c] = mu[s][c] > 0.0
                      ? scale * (R1[s][c] + R2[s][c]) / std::sqrt(mu[s][c])
                      : 0.0;
  (void)c_bar;
  return out;
}

}  // namespace

SpeciesField apply_gamma(const MixtureSpec& spec, const std::vector<double>& c_bar,
                         const VelocityGrid& grid, const SpeciesField& g,
                         const SpeciesField& h, const LinearizedOptions& opts) {
  auto eq = equilibrium_params(spec, c_bar);
  const int N = spec.n_species;
  const std::size_t n_cells = grid.n_cells();
  check_field(g, N, n_cells, "apply_gamma");
  check_field(h, N, n_cells, "apply_gamma");
  auto mu = sample_maxwellians(eq, grid);
  SpeciesField A(N, std::vector<double>(n_cells)), B(N, std::vector<double>(n_cells));
  for (int s = 0; s < N; ++s)
    for (std::size_t c = 0; c < n_cells; ++c) {
      const double sm = std::sqrt(mu.values[s][c]);
      A[s][c] = sm * g[s][c];
      B[s][c] = sm * h[s][c];
    }
  return bilinear_weighted(spec, c_bar, grid, A, B, opts, 0.5, mu.values);
}

SpeciesField apply_l_eps(const MixtureSpec& spec, const std::vector<double>& c_bar,
                         const std::vector<MaxwellianParams>& params,
                         const VelocityGrid& grid, const SpeciesField& f,
                         const LinearizedOptions& opts) {
  auto eq = equilibrium_params(spec, c_bar);
  const int N = spec.n_species;
  const std::size_t n_cells = grid.n_cells();
  check_field(f, N, n_cells, "apply_l_eps");
  if (static_cast<int>(params.size()) != N)
    throw config_error("apply_l_eps: one Maxwellian per species required");
  for (int s = 0; s < N; ++s) {
    params[s].validate();
    if (params[s].m != spec.masses[s])
      throw config_error("apply_l_eps: Maxwellian mass differs from the species mass");
  }
  auto mu = sample_maxwellians(eq, grid);
  auto M = sample_maxwellians(params, grid);
  SpeciesField B(N, std::vector<double>(n_cells));
  for (int s = 0; s < N; ++s)
    for (std::size_t c = 0; c < n_cells; ++c)
      B[s][c] = std::sqrt(mu.values[s][c]) * f[s][c];
  return bilinear_weighted(spec, c_bar, grid, M.values, B, opts, 1.0, mu.values);
}

SpeciesField apply_k_eps(const MixtureSpec& spec, const std::vector<double>& c_bar,
                         const std::vector<MaxwellianParams>& params,
                         const VelocityGrid& grid, const SpeciesField& f,
                         const LinearizedOptions& opts) {
  SpeciesField out = apply_l_eps(spec, c_bar, params, grid, f, opts);
  const int N = spec.n_species;
  for (int s = 0; s < N; ++s)
    for (std::size_t c = 0; c < grid.n_cells(); ++c) {
      const Vec3 v = grid.node(c);
      double nu = 0.0;
      for (int j = 0; j < N; ++j) nu += nu_pair_at(spec, s, j, params[j], v);
      out[s][c] += nu * f[s][c];
    }
  return out;
}

OrthogonalityReport gamma_orthogonality_check(const MixtureSpec& spec,
                                              const std::vector<double>& c_bar,
                                              const VelocityGrid& grid,
                                              const SpeciesField& g,
                                              const SpeciesField& h,
                                              const LinearizedOptions& opts) {
  auto basis = make_kernel_basis(spec, c_bar, grid);
  auto F = apply_gamma(spec, c_bar, grid, g, h, opts);
  auto split = project_pi_L(F, basis);
  return {field_norm(split.parallel, grid), field_norm(F, grid)};
}

OrthogonalityReport l_eps_orthogonality_check(const MixtureSpec& spec,
                                              const std::vector<double>& c_bar,
                                              const std::vector<MaxwellianParams>& params,
                                              const VelocityGrid& grid,
                                              const SpeciesField& f,
                                              const LinearizedOptions& opts) {
  auto basis = make_kernel_basis(spec, c_bar, grid);
  auto F = apply_l_eps(spec, c_bar, params, grid, f, opts);
  auto split = project_pi_L(F, basis);
  return {field_norm(split.parallel, grid), field_norm(F, grid)};
}

double field_norm(const SpeciesField& f, const VelocityGrid& grid) {
  std::vector<double> scratch;
  for (const auto& fs : f)
    for (double x : fs) scratch.push_back(x * x);
  return std::sqrt(grid.w_cell * pairwise_sum(scratch));
}

double field_norm_weighted(const SpeciesField& f, const VelocityGrid& grid,
                           double gamma) {
  std::vector<double> scratch;
  for (const auto& fs : f) {
    for (std::size_t c = 0; c < fs.size(); ++c)
      scratch.push_back(fs[c] * fs[c] *
                        std::pow(1.0 + norm2(grid.node(c)), 0.5 * gamma));
  }
  return std::sqrt(grid.w_cell * pairwise_sum(scratch));
}

void write_spectrum_csv(const GapReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw config_error("write_spectrum_csv: cannot open " + path);
  out << "index,eigenvalue\n";
  for (std::size_t k = 0; k < report.spectrum.size(); ++k)
    out << k << "," << fmt_double(report.spectrum[k]) << "\n";
}

void write_kernel_defect_json(const GapReport& report, const DiscreteOperator& op,
                              const std::string& path) {
  nlohmann::ordered_json j;
  j["dof"] = op.active.dof();
  j["invariant_count"] = op.active.n_species + 4;
  j["kernel_dimension"] = report.kernel_dim;
  j["operator_norm"] = report.op_norm;
  j["kernel_defect"] = report.kernel_defect;
  j["relative_defect"] =
      report.op_norm > 0.0 ? report.kernel_defect / report.op_norm : 0.0;
  j["spectral_gap"] = report.lambda_L;
  j["asymmetry"] = op.asymmetry;
  const std::size_t head =
      std::min<std::size_t>(report.spectrum.size(),
                            static_cast<std::size_t>(op.active.n_species) + 6);
  j["spectrum_head"] = std::vector<double>(report.spectrum.begin(),
                                           report.spectrum.begin() + head);
  std::ofstream out(path);
  if (!out) throw config_error("write_kernel_defect_json: cannot open " + path);
  out << j.dump(2) << "\n";
}

}  // namespace mskin
