#include "mskin/io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace mskin {

namespace {
constexpr char kMagic[4] = {'M', 'S', 'K', 'D'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("truncated distribution container");
  return v;
}
}  // namespace

void write_distribution(const std::filesystem::path& path,
                        const DistributionVector& F,
                        const std::vector<double>& masses) {
  if (masses.size() != F.values.size())
    throw std::domain_error("masses list must match species count");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(kMagic, 4);
  put(os, kVersion);
  put(os, static_cast<std::uint32_t>(F.values.size()));
  put(os, static_cast<std::uint32_t>(F.grid.n_v));
  put(os, F.grid.v_max);
  for (double m : masses) put(os, m);
  for (const auto& f : F.values)
    os.write(reinterpret_cast<const char*>(f.data()),
             static_cast<std::streamsize>(f.size() * sizeof(double)));
  if (!os) throw std::runtime_error("write failure on " + path.string());
}

DistributionFile read_distribution(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error(path.string() + " is not a distribution container");
  const auto version = get<std::uint32_t>(is);
  if (version != kVersion)
    throw std::runtime_error("unsupported container version");
  const auto n_species = get<std::uint32_t>(is);
  const auto n_v = get<std::uint32_t>(is);
  const double v_max = get<double>(is);
  DistributionFile out;
  out.masses.resize(n_species);
  for (auto& m : out.masses) m = get<double>(is);
  out.F.grid = VelocityGrid::make(static_cast<int>(n_v), v_max);
  out.F.values.resize(n_species);
  for (auto& f : out.F.values) {
    f.resize(out.F.grid.n_cells());
    is.read(reinterpret_cast<char*>(f.data()),
            static_cast<std::streamsize>(f.size() * sizeof(double)));
    if (!is) throw std::runtime_error("truncated distribution container");
  }
  return out;
}

void write_distribution_csv(const std::filesystem::path& path,
                            const DistributionVector& F) {
  std::vector<std::string> cols = {"ix", "iy", "iz", "vx", "vy", "vz"};
  for (int i = 0; i < F.n_species(); ++i) cols.push_back("F" + std::to_string(i + 1));
  CsvWriter w(path, cols);
  const auto& g = F.grid;
  for (int ix = 0; ix < g.n_v; ++ix)
    for (int iy = 0; iy < g.n_v; ++iy)
      for (int iz = 0; iz < g.n_v; ++iz) {
        const std::size_t k = g.flat(ix, iy, iz);
        std::vector<double> row = {static_cast<double>(ix), static_cast<double>(iy),
                                   static_cast<double>(iz), g.axis[ix], g.axis[iy],
                                   g.axis[iz]};
        for (const auto& f : F.values) row.push_back(f[k]);
        w.row(row);
      }
}

CsvWriter::CsvWriter(const std::filesystem::path& path,
                     const std::vector<std::string>& columns)
    : path_(path), n_cols_(columns.size()) {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (i) buffer_ += ',';
    buffer_ += columns[i];
  }
  buffer_ += '\n';
}

CsvWriter::~CsvWriter() {
  std::ofstream os(path_, std::ios::binary | std::ios::trunc);
  os.write(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
}

void CsvWriter::row(const std::vector<double>& values) {
  if (values.size() != n_cols_)
    throw std::domain_error("csv row width mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) buffer_ += ',';
    buffer_ += fmt_double(values[i]);
  }
  buffer_ += '\n';
}

void CsvWriter::raw_row(const std::vector<std::string>& cells) {
  if (cells.size() != n_cols_)
    throw std::domain_error("csv row width mismatch");
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) buffer_ += ',';
    buffer_ += cells[i];
  }
  buffer_ += '\n';
}

}  // namespace mskin
