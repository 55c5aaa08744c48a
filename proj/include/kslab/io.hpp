#pragma once
// On-disk formats. Two little-endian binary containers share one header
// scheme: KSGF holds a single grid field (dim, cells, half_width, time,
// then cells^dim f64 node values, row-major, last axis fastest) and KSPT
// holds a particle trajectory (dim, n, n_snaps, then per snapshot a f64
// time followed by an n x dim f64 block in id order). CSV emitters print
// every double with %.17g so round-trips and worker-count comparisons are
// byte-exact.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "kslab/errors.hpp"
#include "kslab/grid.hpp"

namespace ks {

static_assert(std::endian::native == std::endian::little,
              "binary snapshot formats assume a little-endian host");

inline std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline void put_f64(std::ostream& os, double v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(v)))
    throw IoError(std::string("truncated file while reading ") + what);
  return v;
}

inline double get_f64(std::istream& is, const char* what) {
  double v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(v)))
    throw IoError(std::string("truncated file while reading ") + what);
  return v;
}

inline std::ofstream open_out(const std::string& path, bool binary) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
  if (!os) throw IoError("cannot open for writing: " + path);
  return os;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path);
  return is;
}

inline void check_magic(std::istream& is, const char* magic,
                        const std::string& path) {
  char got[4];
  if (!is.read(got, 4) || std::string(got, 4) != magic)
    throw IoError("bad magic in " + path + " (expected " + magic + ")");
  std::uint32_t version = get_u32(is, "version");
  if (version != 1)
    throw IoError("unsupported " + std::string(magic) + " version in " + path);
}

}  // namespace detail

inline void write_grid_field(const std::string& path, const GridField& f) {
  auto os = detail::open_out(path, true);
  os.write("KSGF", 4);
  detail::put_u32(os, 1);
  detail::put_u32(os, static_cast<std::uint32_t>(f.spec.dim));
  detail::put_u32(os, static_cast<std::uint32_t>(f.spec.cells));
  detail::put_f64(os, f.spec.half_width);
  detail::put_f64(os, f.time);
  os.write(reinterpret_cast<const char*>(f.v.data()),
           static_cast<std::streamsize>(f.v.size() * sizeof(double)));
  if (!os) throw IoError("write failed: " + path);
}

inline GridField read_grid_field(const std::string& path) {
  auto is = detail::open_in(path);
  detail::check_magic(is, "KSGF", path);
  GridSpec spec;
  spec.dim = static_cast<int>(detail::get_u32(is, "dim"));
  spec.cells = static_cast<int>(detail::get_u32(is, "cells"));
  spec.half_width = detail::get_f64(is, "half_width");
  if (spec.dim < 1 || spec.dim > kMaxDim || spec.cells < 1 ||
      !(spec.half_width > 0))
    throw IoError("invalid grid header in " + path);
  GridField f(spec);
  f.time = detail::get_f64(is, "time");
  if (!is.read(reinterpret_cast<char*>(f.v.data()),
               static_cast<std::streamsize>(f.v.size() * sizeof(double))))
    throw IoError("truncated node data in " + path);
  return f;
}

// Trajectory container matching ParticleHistory: snaps[k] is the id-major
// position block at times[k].
struct Trajectory {
  int dim = 1, n = 0;
  std::vector<double> t;
  std::vector<std::vector<double>> snaps;
};

inline void write_trajectory(const std::string& path, const Trajectory& tr) {
  if (tr.t.size() != tr.snaps.size())
    throw IoError("trajectory times and snapshots disagree in length");
  auto os = detail::open_out(path, true);
  os.write("KSPT", 4);
  detail::put_u32(os, 1);
  detail::put_u32(os, static_cast<std::uint32_t>(tr.dim));
  detail::put_u32(os, static_cast<std::uint32_t>(tr.n));
  detail::put_u32(os, static_cast<std::uint32_t>(tr.t.size()));
  std::size_t block = static_cast<std::size_t>(tr.n) * tr.dim;
  for (std::size_t k = 0; k < tr.t.size(); ++k) {
    if (tr.snaps[k].size() != block)
      throw IoError("trajectory snapshot " + std::to_string(k) +
                    " has the wrong block size");
    detail::put_f64(os, tr.t[k]);
    os.write(reinterpret_cast<const char*>(tr.snaps[k].data()),
             static_cast<std::streamsize>(block * sizeof(double)));
  }
  if (!os) throw IoError("write failed: " + path);
}

inline Trajectory read_trajectory(const std::string& path) {
  auto is = detail::open_in(path);
  detail::check_magic(is, "KSPT", path);
  Trajectory tr;
  tr.dim = static_cast<int>(detail::get_u32(is, "dim"));
  tr.n = static_cast<int>(detail::get_u32(is, "n"));
  std::uint32_t n_snaps = detail::get_u32(is, "n_snaps");
  if (tr.dim < 1 || tr.dim > kMaxDim || tr.n < 1)
    throw IoError("invalid trajectory header in " + path);
  std::size_t block = static_cast<std::size_t>(tr.n) * tr.dim;
  for (std::uint32_t k = 0; k < n_snaps; ++k) {
    tr.t.push_back(detail::get_f64(is, "snapshot time"));
    std::vector<double> snap(block);
    if (!is.read(reinterpret_cast<char*>(snap.data()),
                 static_cast<std::streamsize>(block * sizeof(double))))
      throw IoError("truncated snapshot data in " + path);
    tr.snaps.push_back(std::move(snap));
  }
  return tr;
}

// Column-oriented CSV: one named column per series, all equal length.
inline void write_csv(const std::string& path,
                      std::span<const std::string> names,
                      std::span<const std::vector<double>> cols) {
  if (names.size() != cols.size())
    throw IoError("csv column names and data disagree in count");
  for (const auto& c : cols)
    if (c.size() != cols[0].size())
      throw IoError("csv columns disagree in length");
  auto os = detail::open_out(path, false);
  for (std::size_t j = 0; j < names.size(); ++j)
    os << (j ? "," : "") << names[j];
  os << "\n";
  std::size_t rows = cols.empty() ? 0 : cols[0].size();
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j)
      os << (j ? "," : "") << fmt17(cols[j][i]);
    os << "\n";
  }
  if (!os) throw IoError("write failed: " + path);
}

}  // namespace ks
