#include "mskin/grid.hpp"

#include <algorithm>
#include <cmath>

namespace mskin {

VelocityGrid VelocityGrid::make(int n_v, double v_max) {
  if (n_v < 2) throw std::domain_error("velocity grid needs n_v >= 2");
  if (!(v_max > 0.0)) throw std::domain_error("velocity grid needs v_max > 0");
  VelocityGrid g;
  g.n_v = n_v;
  g.v_max = v_max;
  g.h = 2.0 * v_max / n_v;
  g.w_cell = g.h * g.h * g.h;
  g.axis.resize(n_v);
  for (int i = 0; i < n_v; ++i) g.axis[i] = -v_max + (i + 0.5) * g.h;
  return g;
}

DepositStencil deposit_stencil(const VelocityGrid& g, const Vec3& p) {
  DepositStencil s;
  const double coords[3] = {p.x, p.y, p.z};
  s.in_box = true;
  for (int ax = 0; ax < 3; ++ax) {
    double t = (coords[ax] - g.axis[0]) / g.h;
    // post-collision velocities frequently land on grid nodes exactly (lattice
    // geometry), but roundoff can leave mirror-image points an ulp apart; snap
    // near-node hits so reflected configurations take the same branch below
    double tn = std::nearbyint(t);
    if (std::abs(t - tn) <= 1e-9) t = tn;
    int b = static_cast<int>(std::floor(t));
    double xi = t - b;
    // an exact node hit reduces the weights to a delta; recentre the support
    // so edge nodes are not rejected on one side of the box only
    if (xi == 0.0 && b >= 0 && b <= g.n_v - 1) {
      b = std::min(std::max(b, 1), g.n_v - 3);
      xi = t - b;
    }
    s.base[ax] = b;
    s.w[ax][0] = -xi * (xi - 1.0) * (xi - 2.0) / 6.0;
    s.w[ax][1] = (xi + 1.0) * (xi - 1.0) * (xi - 2.0) / 2.0;
    s.w[ax][2] = -(xi + 1.0) * xi * (xi - 2.0) / 2.0;
    s.w[ax][3] = (xi + 1.0) * xi * (xi - 1.0) / 6.0;
    if (b < 1 || b > g.n_v - 3) s.in_box = false;
  }
  return s;
}

void DistributionVector::validate() const {
  for (const auto& f : values) {
    if (f.size() != grid.n_cells())
      throw std::domain_error("distribution array does not match its grid");
    for (double v : f)
      if (!(v >= 0.0) || !std::isfinite(v))
        throw std::domain_error("distribution values must be finite and >= 0");
  }
}

}  // namespace mskin
