#pragma once
// Periodic grid fields on the box [-L, L)^d with M nodes per axis (M a power
// of two). Row-major storage, axis 0 slowest. Spectral helpers map fields
// through per-mode multipliers; wavenumber along an axis is pi*j/L for the
// signed frequency j.

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "kslab/fft.hpp"

namespace ks {

inline constexpr int kMaxDim = 3;
using Vec = std::array<double, kMaxDim>;

struct GridSpec {
  int dim = 1;          // spatial dimension, 1..3
  int cells = 0;        // nodes per axis, power of two
  double half_width = 0;  // L: box is [-L, L)^d

  double dx() const { return 2.0 * half_width / cells; }
  std::size_t size() const {
    std::size_t s = 1;
    for (int a = 0; a < dim; ++a) s *= static_cast<std::size_t>(cells);
    return s;
  }
  double node(int i) const { return -half_width + i * dx(); }
  bool operator==(const GridSpec&) const = default;
};

inline void validate_spec(const GridSpec& g) {
  if (g.dim < 1 || g.dim > kMaxDim)
    throw std::invalid_argument("grid dim must be in 1..3");
  if (g.cells < 2 || (g.cells & (g.cells - 1)) != 0)
    throw std::invalid_argument("M must be a power of two >= 2");
  if (!(g.half_width > 0))
    throw std::invalid_argument("box half-width L must be > 0");
}

// Wraps a coordinate into [-L, L).
inline double wrap_coord(double x, double L) {
  double y = std::fmod(x + L, 2.0 * L);
  if (y < 0) y += 2.0 * L;
  return y - L;
}

// Minimum-image displacement a-b on the torus.
inline double min_image(double a, double b, double L) {
  return wrap_coord(a - b, L);
}

struct GridField {
  GridSpec spec;
  double time = 0;
  std::vector<double> v;

  GridField() = default;
  explicit GridField(const GridSpec& g, double fill = 0)
      : spec(g), v(g.size(), fill) {}

  double& operator[](std::size_t i) { return v[i]; }
  double operator[](std::size_t i) const { return v[i]; }
  std::size_t size() const { return v.size(); }

  // Node coordinates of a flat index.
  void node_coords(std::size_t flat, std::span<double> out) const {
    for (int a = spec.dim - 1; a >= 0; --a) {
      out[a] = spec.node(static_cast<int>(flat % spec.cells));
      flat /= spec.cells;
    }
  }
};

struct VectorField {
  std::vector<GridField> comp;  // one field per axis

  VectorField() = default;
  VectorField(const GridSpec& g, int dim) : comp(dim, GridField(g)) {}
  int dim() const { return static_cast<int>(comp.size()); }
};

// Sampled pointwise values of fn at the nodes.
inline GridField sample_field(const GridSpec& g,
                              const std::function<double(std::span<const double>)>& fn) {
  GridField f(g);
  std::array<double, kMaxDim> x{};
  for (std::size_t i = 0; i < f.size(); ++i) {
    f.node_coords(i, std::span<double>(x.data(), g.dim));
    f.v[i] = fn(std::span<const double>(x.data(), g.dim));
  }
  return f;
}

// Compensated sum; the mass diagnostic must hold 1e-12 over long runs.
inline double kahan_sum(std::span<const double> xs) {
  double s = 0, c = 0;
  for (double x : xs) {
    double y = x - c;
    double t = s + y;
    c = (t - s) - y;
    s = t;
  }
  return s;
}

inline double total_mass(const GridField& f) {
  double cell = std::pow(f.spec.dx(), f.spec.dim);
  return kahan_sum(f.v) * cell;
}

inline double lp_norm(const GridField& f, double p) {
  double cell = std::pow(f.spec.dx(), f.spec.dim);
  double s = 0;
  for (double x : f.v) s += std::pow(std::abs(x), p);
  return std::pow(s * cell, 1.0 / p);
}

inline double linf_norm(const GridField& f) {
  double m = 0;
  for (double x : f.v) m = std::max(m, std::abs(x));
  return m;
}

// L2 norm of (a-b) restricted to the Euclidean ball |x| <= R. R at or beyond
// L*sqrt(d) degrades to the plain everywhere-L2 distance.
inline double l2_ball_distance(const GridField& a, const GridField& b, double R) {
  if (!(a.spec == b.spec)) throw std::invalid_argument("grid mismatch");
  double cell = std::pow(a.spec.dx(), a.spec.dim);
  double R2 = R * R, s = 0;
  std::array<double, kMaxDim> x{};
  for (std::size_t i = 0; i < a.size(); ++i) {
    a.node_coords(i, std::span<double>(x.data(), a.spec.dim));
    double r2 = 0;
    for (int k = 0; k < a.spec.dim; ++k) r2 += x[k] * x[k];
    if (r2 <= R2) {
      double d = a.v[i] - b.v[i];
      s += d * d;
    }
  }
  return std::sqrt(s * cell);
}

namespace detail {

inline std::vector<int> grid_dims(const GridSpec& g) {
  return std::vector<int>(static_cast<std::size_t>(g.dim), g.cells);
}

inline std::size_t complex_size(const GridSpec& g) {
  std::size_t s = 1;
  for (int a = 0; a + 1 < g.dim; ++a) s *= static_cast<std::size_t>(g.cells);
  return s * (static_cast<std::size_t>(g.cells) / 2 + 1);
}

// Iterates the r2c coefficient layout, handing fn the flat complex index and
// the signed integer frequencies per axis.
template <class Fn>
void for_each_mode(const GridSpec& g, Fn&& fn) {
  int M = g.cells;
  int last = M / 2 + 1;
  std::array<int, kMaxDim> idx{};
  std::size_t n = complex_size(g);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t rem = flat;
    for (int a = g.dim - 1; a >= 0; --a) {
      int extent = (a == g.dim - 1) ? last : M;
      idx[a] = static_cast<int>(rem % extent);
      rem /= extent;
    }
    std::array<int, kMaxDim> freq{};
    for (int a = 0; a < g.dim; ++a)
      freq[a] = idx[a] <= M / 2 ? idx[a] : idx[a] - M;
    fn(flat, freq);
  }
}

// out = IFFT( multiplier(freq) * FFT(in) ); multiplier returns complex.
template <class Fn>
GridField spectral_map(const GridField& in, Fn&& multiplier) {
  const GridSpec& g = in.spec;
  auto dims = grid_dims(g);
  std::vector<std::complex<double>> cx(complex_size(g));
  fft_forward_r2c(dims, in.v.data(), cx.data());
  for_each_mode(g, [&](std::size_t flat, const std::array<int, kMaxDim>& freq) {
    cx[flat] *= multiplier(freq);
  });
  GridField out(g);
  out.time = in.time;
  fft_inverse_c2r(dims, cx.data(), out.v.data());
  double scale = 1.0 / static_cast<double>(g.size());
  for (double& x : out.v) x *= scale;
  return out;
}

}  // namespace detail
}  // namespace ks
