#include "mskin/util.hpp"

#include <charconv>
#include <cstdlib>

namespace mskin {

double pairwise_sum(const double* x, std::size_t n) {
  if (n <= 32) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  std::size_t half = n / 2;
  return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

double pairwise_sum(const std::vector<double>& x) {
  return pairwise_sum(x.data(), x.size());
}

McEstimate mc_reduce(const std::vector<double>& batch_sums,
                     const std::vector<double>& batch_sumsq,
                     std::uint64_t n_samples) {
  McEstimate e;
  if (n_samples == 0) return e;
  const double n = static_cast<double>(n_samples);
  const double s1 = pairwise_sum(batch_sums);
  const double s2 = pairwise_sum(batch_sumsq);
  e.value = s1 / n;
  double var = (s2 / n - e.value * e.value) * (n / std::max(1.0, n - 1.0));
  if (var < 0.0) var = 0.0;
  e.std_err = std::sqrt(var / n);
  return e;
}

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

int thread_cap() {
  const char* s = std::getenv("MSKIN_THREADS");
  if (!s) return 1;
  long v = std::strtol(s, nullptr, 10);
  if (v < 1) return 1;
  if (v > 64) return 64;
  return static_cast<int>(v);
}

double gamma_fn(double x) {
  // Lanczos approximation, g = 7, 9 coefficients.
  static const double c[9] = {
      0.99999999999980993,  676.5203681218851,     -1259.1392167224028,
      771.32342877765313,   -176.61502916214059,   12.507343278686905,
      -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7};
  if (x < 0.5) {
    // reflection
    return M_PI / (std::sin(M_PI * x) * gamma_fn(1.0 - x));
  }
  x -= 1.0;
  double a = c[0];
  double t = x + 7.5;
  for (int i = 1; i < 9; ++i) a += c[i] / (x + i);
  return std::sqrt(2.0 * M_PI) * std::pow(t, x + 0.5) * std::exp(-t) * a;
}

}  // namespace mskin
