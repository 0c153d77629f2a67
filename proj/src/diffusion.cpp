#include "mskin/diffusion.hpp"

#include <cmath>
#include <thread>
#include <vector>

#include "mskin/io.hpp"
#include "mskin/rng.hpp"

namespace mskin {

namespace {

void check_pair(const MixtureSpec& spec, int i, int j) {
  if (i < 0 || j < 0 || i >= spec.n_species || j >= spec.n_species)
    throw std::domain_error("diffusion: species index out of range");
}

constexpr std::uint64_t kBatch = 8192;

}  // namespace

double k_closed_form(const MixtureSpec& spec, int i, int j, double T) {
  check_pair(spec, i, j);
  if (!(T > 0.0)) throw std::domain_error("k_closed_form: temperature must be positive");
  const double mu = spec.reduced_mass(i, j);
  const double wb = spec.b(i, j).weighted_l1();
  return spec.phi(i, j) * (8.0 * std::sqrt(M_PI) * mu / 3.0) * wb *
         gamma_fn((spec.gamma + 5.0) / 2.0) * std::pow(2.0 * T / mu, spec.gamma / 2.0);
}

McEstimate k_mc_oracle(const MixtureSpec& spec, int i, int j, double T,
                       std::uint64_t n_samples, std::uint64_t seed) {
  check_pair(spec, i, j);
  if (!(T > 0.0)) throw std::domain_error("k_mc_oracle: temperature must be positive");
  if (n_samples < 10000)
    throw std::domain_error("k_mc_oracle: need at least 1e4 samples");

  const double mu = spec.reduced_mass(i, j);
  const double pref = spec.phi(i, j) * (4.0 * M_PI / 3.0) * mu * mu / T;
  const double si = std::sqrt(T / spec.masses[i]);
  const double sj = std::sqrt(T / spec.masses[j]);
  const double p = 0.5 * (spec.gamma + 2.0);
  const AngularLaw& law = spec.b(i, j);

  const std::uint64_t n_batches = (n_samples + kBatch - 1) / kBatch;
  std::vector<double> sums(n_batches, 0.0), sumsq(n_batches, 0.0);

  auto run_batch = [&](std::uint64_t b) {
    CounterRng rng(seed, b);
    const std::uint64_t lo = b * kBatch;
    const std::uint64_t hi = std::min(n_samples, lo + kBatch);
    double s = 0.0, s2 = 0.0;
    for (std::uint64_t k = lo; k < hi; ++k) {
      const Vec3 v = si * rng.next_gauss3();
      const Vec3 vs = sj * rng.next_gauss3();
      const Vec3 sig = rng.next_unit_sphere();
      const Vec3 w = v - vs;
      const double r2 = norm2(w);
      double x = 0.0;
      if (r2 > 0.0) {
        const double ct = dot(w, sig) / std::sqrt(r2);
        x = pref * std::pow(r2, p) * (1.0 - ct) * law.eval(ct);
      }
      s += x;
      s2 += x * x;
    }
    sums[b] = s;
    sumsq[b] = s2;
  };

  const int workers = std::min<std::uint64_t>(thread_cap(), n_batches);
  if (workers <= 1) {
    for (std::uint64_t b = 0; b < n_batches; ++b) run_batch(b);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int t = 0; t < workers; ++t)
      pool.emplace_back([&, t] {
        for (std::uint64_t b = t; b < n_batches; b += workers) run_batch(b);
      });
    for (auto& th : pool) th.join();
  }

  return mc_reduce(sums, sumsq, n_samples);
}

DiffusionModel build_delta(const MixtureSpec& spec, double reference_T) {
  if (!(reference_T > 0.0))
    throw std::domain_error("build_delta: reference temperature must be positive");
  const int n = spec.n_species;
  DiffusionModel m;
  m.n_species = n;
  m.gamma = spec.gamma;
  m.mu_red.resize(n, n);
  m.b_l1.resize(n, n);
  m.b_weighted.resize(n, n);
  m.delta.resize(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      m.mu_red(i, j) = spec.reduced_mass(i, j);
      m.b_l1(i, j) = spec.b(i, j).l1();
      m.b_weighted(i, j) = spec.b(i, j).weighted_l1();
      m.delta(i, j) =
          std::pow(reference_T, spec.gamma / 2.0) / k_closed_form(spec, i, j, reference_T);
    }
  return m;
}

void write_coefficients_table(const std::filesystem::path& path,
                              const MixtureSpec& spec, const DiffusionModel& model,
                              std::uint64_t mc_samples, std::uint64_t seed) {
  CsvWriter csv(path, {"i", "j", "mu_ij", "delta_ij", "k_ij", "mc_estimate", "std_err"});
  for (int i = 0; i < spec.n_species; ++i)
    for (int j = i; j < spec.n_species; ++j) {
      const McEstimate mc = k_mc_oracle(spec, i, j, 1.0, mc_samples, seed);
      csv.row({static_cast<double>(i + 1), static_cast<double>(j + 1), model.mu_red(i, j),
               model.delta(i, j), k_closed_form(spec, i, j, 1.0), mc.value, mc.std_err});
    }
}

}  // namespace mskin
