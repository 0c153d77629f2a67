#include "mskin/ms_matrix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mskin/rng.hpp"

namespace mskin {

MSMatrix build_ms_matrix(const Eigen::VectorXd& c, const Eigen::MatrixXd& delta) {
  const int n = static_cast<int>(c.size());
  if (n < 2) throw std::domain_error("build_ms_matrix: need at least two species");
  if (delta.rows() != n || delta.cols() != n)
    throw size_error("build_ms_matrix: delta shape mismatch");
  for (int i = 0; i < n; ++i) {
    if (!(c[i] > 0.0) || !std::isfinite(c[i]))
      throw std::domain_error("build_ms_matrix: concentrations must be positive");
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      if (!(delta(i, j) > 0.0) || !std::isfinite(delta(i, j)))
        throw std::domain_error("build_ms_matrix: delta entries must be positive");
      if (delta(i, j) != delta(j, i))
        throw std::domain_error("build_ms_matrix: delta must be symmetric");
    }
  }

  MSMatrix m;
  m.c = c;
  m.delta = delta;
  m.a = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    double diag = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double a_ij = c[i] * c[j] / delta(i, j);
      m.a(i, j) = a_ij;
      diag -= a_ij;
    }
    m.a(i, i) = diag;
  }
  return m;
}

Eigen::VectorXd project_off_kernel(const Eigen::VectorXd& x) {
  return x.array() - x.mean();
}

Eigen::MatrixXd solve_flux_force(const MSMatrix& A, const Eigen::MatrixXd& rhs,
                                 double tau_solv) {
  const int n = A.n();
  if (rhs.rows() != n) throw size_error("solve_flux_force: rhs row count mismatch");

  for (int k = 0; k < rhs.cols(); ++k) {
    const double s = rhs.col(k).sum();
    const double nrm = rhs.col(k).norm();
    if (std::abs(s) > tau_solv * nrm)
      throw solvability_error("solve_flux_force: component " + std::to_string(k) +
                              " has <rhs,1> = " + fmt_double(s) +
                              " beyond tolerance " + fmt_double(tau_solv * nrm));
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A.a);
  const Eigen::VectorXd& ev = es.eigenvalues();
  const Eigen::MatrixXd& V = es.eigenvectors();
  const double cutoff = 1e-12 * ev.cwiseAbs().maxCoeff();

  Eigen::MatrixXd U = Eigen::MatrixXd::Zero(n, rhs.cols());
  for (int k = 0; k < rhs.cols(); ++k) {
    Eigen::VectorXd b = project_off_kernel(rhs.col(k));
    Eigen::VectorXd y = V.transpose() * b;
    for (int r = 0; r < n; ++r) y[r] = std::abs(ev[r]) > cutoff ? y[r] / ev[r] : 0.0;
    U.col(k) = project_off_kernel(V * y);
  }
  return U;
}

namespace {

Eigen::VectorXd sample_box(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                           CounterRng& rng) {
  Eigen::VectorXd c(lo.size());
  for (int i = 0; i < c.size(); ++i) c[i] = lo[i] + (hi[i] - lo[i]) * rng.next_unit();
  return c;
}

void check_box(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  if (lo.size() == 0 || lo.size() != hi.size())
    throw std::domain_error("spectral constants: empty or mismatched sampling box");
  for (int i = 0; i < lo.size(); ++i)
    if (!(lo[i] > 0.0) || !(hi[i] >= lo[i]))
      throw std::domain_error("spectral constants: box must lie in the positive orthant");
}

// Normalized gap and normalized norm of A(c); the quantities whose extrema
// over the box define the spectral constants.
struct BoxObjectives {
  double gap_norm;   // lambda_2(-A) / (min c)^2
  double norm_norm;  // ||A||_2 / <c,1>^2
};

BoxObjectives eval_objectives(const Eigen::VectorXd& c, const Eigen::MatrixXd& delta) {
  MSMatrix m = build_ms_matrix(c, delta);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.a, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd& ev = es.eigenvalues();  // ascending, top one ~ 0
  const double c_min = c.minCoeff();
  const double csum = c.sum();
  BoxObjectives o;
  o.gap_norm = -ev[ev.size() - 2] / (c_min * c_min);
  o.norm_norm = ev.cwiseAbs().maxCoeff() / (csum * csum);
  return o;
}

// Deterministic coordinate pattern search from a starting point; pushes the
// sampled extremum toward the true extremum over the box so the safety
// margin applied afterwards is not eaten by sampling error.
template <typename F>
Eigen::VectorXd pattern_search(const Eigen::VectorXd& start, const Eigen::VectorXd& lo,
                               const Eigen::VectorXd& hi, F&& better) {
  const int n = static_cast<int>(start.size());
  Eigen::VectorXd step = (hi - lo) / 8.0;
  if (step.cwiseAbs().maxCoeff() == 0.0) return start;
  Eigen::VectorXd best = start;
  for (int round = 0; round < 60; ++round) {
    bool improved = false;
    for (int i = 0; i < n; ++i) {
      for (double sgn : {1.0, -1.0}) {
        Eigen::VectorXd trial = best;
        trial[i] = std::clamp(trial[i] + sgn * step[i], lo[i], hi[i]);
        if (trial[i] != best[i] && better(trial, best)) {
          best = trial;
          improved = true;
        }
      }
    }
    if (!improved) {
      step *= 0.5;
      if (step.maxCoeff() < 1e-4 * (hi - lo).maxCoeff()) break;
    }
  }
  return best;
}

}  // namespace

SpectralConstants estimate_spectral_constants(const Eigen::MatrixXd& delta,
                                              const Eigen::VectorXd& c_lo,
                                              const Eigen::VectorXd& c_hi,
                                              int n_samples, std::uint64_t seed) {
  check_box(c_lo, c_hi);
  if (n_samples < 1) throw std::domain_error("spectral constants: need n_samples >= 1");

  CounterRng rng(seed, 0);
  double lam = std::numeric_limits<double>::infinity();
  double mu = 0.0;
  Eigen::VectorXd arg_lam = c_lo, arg_mu = c_lo;
  for (int s = 0; s < n_samples; ++s) {
    const Eigen::VectorXd c = sample_box(c_lo, c_hi, rng);
    BoxObjectives o = eval_objectives(c, delta);
    if (o.gap_norm < lam) {
      lam = o.gap_norm;
      arg_lam = c;
    }
    if (o.norm_norm > mu) {
      mu = o.norm_norm;
      arg_mu = c;
    }
  }

  arg_lam = pattern_search(arg_lam, c_lo, c_hi,
                           [&](const Eigen::VectorXd& t, const Eigen::VectorXd& b) {
                             return eval_objectives(t, delta).gap_norm <
                                    eval_objectives(b, delta).gap_norm;
                           });
  lam = std::min(lam, eval_objectives(arg_lam, delta).gap_norm);
  arg_mu = pattern_search(arg_mu, c_lo, c_hi,
                          [&](const Eigen::VectorXd& t, const Eigen::VectorXd& b) {
                            return eval_objectives(t, delta).norm_norm >
                                   eval_objectives(b, delta).norm_norm;
                          });
  mu = std::max(mu, eval_objectives(arg_mu, delta).norm_norm);

  SpectralConstants sc;
  sc.lambda_a = 0.95 * lam;
  sc.mu_a = 1.05 * mu;
  sc.sample_count = n_samples;
  sc.c_lo = c_lo;
  sc.c_hi = c_hi;
  return sc;
}

SpectralCheck verify_spectral_constants(const Eigen::MatrixXd& delta,
                                        const SpectralConstants& sc,
                                        int n_samples, std::uint64_t seed) {
  check_box(sc.c_lo, sc.c_hi);
  CounterRng rng(seed, 1);
  SpectralCheck out;
  out.worst_lower = std::numeric_limits<double>::infinity();
  out.worst_upper = std::numeric_limits<double>::infinity();
  const int n = static_cast<int>(sc.c_lo.size());

  for (int s = 0; s < n_samples; ++s) {
    const Eigen::VectorXd c = sample_box(sc.c_lo, sc.c_hi, rng);
    MSMatrix m = build_ms_matrix(c, delta);
    Eigen::VectorXd x(n);
    for (int i = 0; i < n; ++i) x[i] = rng.next_gauss();

    const double quad = x.dot(m.a * x);
    const double ones = x.sum();
    const double bracket = x.squaredNorm() - ones * ones;
    const double c_min = c.minCoeff();
    out.worst_lower =
        std::min(out.worst_lower, -quad - sc.lambda_a * c_min * c_min * bracket);

    const double csum = c.sum();
    out.worst_upper = std::min(
        out.worst_upper, sc.mu_a * csum * csum * x.norm() - (m.a * x).norm());
  }
  out.ok = out.worst_lower >= -1e-12 && out.worst_upper >= -1e-12;
  return out;
}

}  // namespace mskin
