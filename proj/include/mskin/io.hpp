#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mskin/grid.hpp"

namespace mskin {

// Flat binary container for distribution vectors.
// Header: magic "MSKD", u32 version, u32 N, u32 n_v, f64 v_max, N x f64 masses.
// Body: N row-major f64 arrays of n_v^3 values.
void write_distribution(const std::filesystem::path& path,
                        const DistributionVector& F,
                        const std::vector<double>& masses);

struct DistributionFile {
  DistributionVector F;
  std::vector<double> masses;
};
DistributionFile read_distribution(const std::filesystem::path& path);

// CSV form for small grids: ix,iy,iz,vx,vy,vz,F_1..F_N
void write_distribution_csv(const std::filesystem::path& path,
                            const DistributionVector& F);

// Minimal CSV table writer with shortest round-trip float formatting.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& columns);
  ~CsvWriter();
  void row(const std::vector<double>& values);
  void raw_row(const std::vector<std::string>& cells);

 private:
  std::string buffer_;
  std::filesystem::path path_;
  std::size_t n_cols_;
};

}  // namespace mskin
