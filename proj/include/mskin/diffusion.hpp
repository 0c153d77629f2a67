#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>

#include "mskin/mixture.hpp"
#include "mskin/util.hpp"

namespace mskin {

// Binary diffusion coefficients of the mixture.  For every pair,
// k_ij(T) = T^{gamma/2} / delta_ij with delta depending only on the masses
// and the kernels; all matrices are symmetric with positive entries.
struct DiffusionModel {
  int n_species = 0;
  double gamma = 0.0;
  Eigen::MatrixXd mu_red;      // reduced masses m_i m_j / (m_i + m_j)
  Eigen::MatrixXd b_l1;        // integral of b_ij over [-1,1]
  Eigen::MatrixXd b_weighted;  // integral of (1-s) b_ij(s); equals b_l1 for even laws
  Eigen::MatrixXd delta;       // k_ij(T) = T^{gamma/2} / delta_ij
};

// Closed form of the binary diffusion coefficient:
//   k_ij(T) = phi_ij * (8 sqrt(pi) mu_ij / 3) * [int (1-s) b_ij(s) ds]
//             * Gamma((gamma+5)/2) * (2T/mu_ij)^{gamma/2}.
double k_closed_form(const MixtureSpec& spec, int i, int j, double T);

// Monte-Carlo estimate of the 9-dimensional integral defining k_ij:
//   (phi mu^2 / 6T) (m_i/2piT)^{3/2} (m_j/2piT)^{3/2} *
//   int |v-v*|^gamma b(cos th) [(v*-v)+|v-v*|s]^2 e^{-(m_i|v|^2+m_j|v*|^2)/2T}
// with Gaussian importance sampling in (v, v*) and uniform s on the sphere,
// so only the polynomial-angular factor is averaged.  Deterministic for a
// fixed seed, independent of the worker count.
McEstimate k_mc_oracle(const MixtureSpec& spec, int i, int j, double T,
                       std::uint64_t n_samples, std::uint64_t seed);

// Tabulates delta_ij = T^{gamma/2} / k_ij evaluated at the reference
// temperature; the result is temperature-independent by the scaling law.
DiffusionModel build_delta(const MixtureSpec& spec, double reference_T = 1.0);

// Coefficients table (one row per unordered pair):
// i, j, mu_ij, delta_ij, k_ij(T=1), mc_estimate, std_err.
void write_coefficients_table(const std::filesystem::path& path,
                              const MixtureSpec& spec, const DiffusionModel& model,
                              std::uint64_t mc_samples, std::uint64_t seed);

}  // namespace mskin
