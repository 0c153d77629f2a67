#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mskin {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3() = default;
  Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
  Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
  Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }

  double& comp(int k) { return k == 0 ? x : (k == 1 ? y : z); }
  double comp(int k) const { return k == 0 ? x : (k == 1 ? y : z); }
};

inline Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
inline Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
inline Vec3 operator*(double s, Vec3 a) { return a *= s; }
inline Vec3 operator*(Vec3 a, double s) { return a *= s; }
inline Vec3 operator/(Vec3 a, double s) { return a *= (1.0 / s); }
inline Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline double norm2(const Vec3& a) { return dot(a, a); }
inline double norm(const Vec3& a) { return std::sqrt(norm2(a)); }

inline bool finite(const Vec3& a) {
  return std::isfinite(a.x) && std::isfinite(a.y) && std::isfinite(a.z);
}

// Error taxonomy shared by all modules.  Plain std::domain_error /
// std::invalid_argument cover bad numeric inputs; the types below mark
// conditions callers are expected to branch on.
struct solvability_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct iteration_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct step_size_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct size_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct invariant_failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Deterministic summation: recursive pairwise reduction, independent of any
// threading arrangement as long as the element order is fixed.
double pairwise_sum(const double* x, std::size_t n);
double pairwise_sum(const std::vector<double>& x);

// Mean and standard error of a Monte-Carlo run accumulated batch-wise.
struct McEstimate {
  double value = 0.0;
  double std_err = 0.0;
};
McEstimate mc_reduce(const std::vector<double>& batch_sums,
                     const std::vector<double>& batch_sumsq,
                     std::uint64_t n_samples);

// Shortest round-trip decimal representation (std::to_chars).
std::string fmt_double(double v);

// Worker cap from MSKIN_THREADS (>=1).  Partitioning of work is always by
// fixed chunk, so results do not depend on this value.
int thread_cap();

// Lanczos-series Gamma function, |rel err| < 1e-13 on the range used here.
double gamma_fn(double x);

}  // namespace mskin
