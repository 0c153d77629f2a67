#pragma once

#include <cstddef>
#include <vector>

#include "mskin/util.hpp"

namespace mskin {

// Uniform Cartesian velocity box [-v_max, v_max]^3, cell-centred nodes
// (midpoint quadrature, no node at the origin or on the boundary; the node
// set is symmetric under v -> -v).
struct VelocityGrid {
  int n_v = 0;
  double v_max = 0.0;
  double h = 0.0;       // spacing
  double w_cell = 0.0;  // h^3
  std::vector<double> axis;

  static VelocityGrid make(int n_v, double v_max);

  std::size_t n_cells() const {
    return static_cast<std::size_t>(n_v) * n_v * n_v;
  }
  std::size_t flat(int ix, int iy, int iz) const {
    return (static_cast<std::size_t>(ix) * n_v + iy) * n_v + iz;
  }
  Vec3 node(int ix, int iy, int iz) const {
    return {axis[ix], axis[iy], axis[iz]};
  }
  Vec3 node(std::size_t f) const {
    int iz = static_cast<int>(f % n_v);
    int iy = static_cast<int>((f / n_v) % n_v);
    int ix = static_cast<int>(f / (static_cast<std::size_t>(n_v) * n_v));
    return node(ix, iy, iz);
  }
  bool same_layout(const VelocityGrid& o) const {
    return n_v == o.n_v && v_max == o.v_max;
  }
};

// Tensor-cubic deposit stencil (4 nodes per axis, 64 total), Lagrange
// weights on the cell containing the point. Reproducing cubics makes
// deposited collision gains conserve mass, momentum and energy to rounding.
// The weight family is continuous in the point and symmetric under
// reflection (xi -> 1-xi reverses the weights), so no direction of the
// velocity box is preferred; a nearest-node stencil would break that
// symmetry through rounding ties, which post-collision velocities hit
// exactly on lattice-aligned geometries.
struct DepositStencil {
  int base[3];       // lower-left node index of the inner cell, per axis
  double w[3][4];    // per-axis weights for offsets -1, 0, +1, +2
  bool in_box;       // all 64 nodes inside the index box

  double weight(int ox, int oy, int oz) const {
    return w[0][ox + 1] * w[1][oy + 1] * w[2][oz + 1];
  }
};

DepositStencil deposit_stencil(const VelocityGrid& g, const Vec3& p);

// Per-species nonnegative samples on a shared velocity grid.
struct DistributionVector {
  VelocityGrid grid;
  std::vector<std::vector<double>> values;  // [species][cell]

  int n_species() const { return static_cast<int>(values.size()); }
  void validate() const;
};

}  // namespace mskin
