#pragma once
// Wasserstein-1 distances between particle ensembles and against grid
// densities. Equal-size clouds use the sorted 1D coupling, an exact
// assignment solve (n <= 512), or sliced projections; empirical-vs-grid in
// d = 1 integrates |F_N - F_rho| exactly (quantile coupling, no sampling).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "kslab/grid.hpp"
#include "kslab/rng.hpp"

namespace ks {

struct W1Result {
  enum class Method { sorted_1d, assignment_exact, sliced, grid_cdf };
  double value = 0;
  Method method = Method::sorted_1d;
  // Certificate: matching[i] = index in ys coupled to xs[i] (exact methods).
  std::vector<int> matching;
};

namespace detail {

inline std::vector<int> sorted_order(std::span<const double> xs, int n,
                                     int stride, int offset) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    double xa = xs[static_cast<std::size_t>(a) * stride + offset];
    double xb = xs[static_cast<std::size_t>(b) * stride + offset];
    if (xa != xb) return xa < xb;
    return a < b;
  });
  return idx;
}

// O(n^3) Hungarian algorithm with potentials; exact for real costs.
inline double solve_assignment(const std::vector<double>& cost, int n,
                               std::vector<int>& row_to_col) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0), v(n + 1, 0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = -1;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = cost[static_cast<std::size_t>(i0 - 1) * n + (j - 1)] -
                     u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  row_to_col.assign(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
  double total = 0;
  for (int i = 0; i < n; ++i)
    total += cost[static_cast<std::size_t>(i) * n + row_to_col[i]];
  return total;
}

// W1 between two sorted atom lists with uniform weights 1/n and 1/m
// (integral of |F_a - F_b| over the merged breakpoints; exact).
inline double w1_sorted_unequal(const std::vector<double>& a,
                                const std::vector<double>& b) {
  std::size_t ia = 0, ib = 0;
  double last = std::min(a.front(), b.front());
  double w1 = 0;
  double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  while (ia < a.size() || ib < b.size()) {
    double next_a = ia < a.size() ? a[ia] : std::numeric_limits<double>::infinity();
    double next_b = ib < b.size() ? b[ib] : std::numeric_limits<double>::infinity();
    double x = std::min(next_a, next_b);
    w1 += std::abs(ia / na - ib / nb) * (x - last);
    while (ia < a.size() && a[ia] == x) ++ia;
    while (ib < b.size() && b[ib] == x) ++ib;
    last = x;
  }
  return w1;
}

}  // namespace detail

// Sorted coupling in one dimension: W1 = (1/n) sum |x_(k) - y_(k)|.
inline W1Result w1_1d(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size())
    throw std::invalid_argument("w1_1d: size mismatch");
  if (xs.empty()) throw std::invalid_argument("w1_1d: empty input");
  int n = static_cast<int>(xs.size());
  auto ox = detail::sorted_order(xs, n, 1, 0);
  auto oy = detail::sorted_order(ys, n, 1, 0);
  W1Result r;
  r.method = W1Result::Method::sorted_1d;
  r.matching.assign(n, -1);
  double s = 0;
  for (int k = 0; k < n; ++k) {
    s += std::abs(xs[ox[k]] - ys[oy[k]]);
    r.matching[ox[k]] = oy[k];
  }
  r.value = s / n;
  return r;
}

// Exact minimum-cost perfect matching with Euclidean costs. Guarded to
// n <= 512; larger instances must use the sliced estimator.
inline W1Result w1_exact(std::span<const double> xs, std::span<const double> ys,
                         int n, int d) {
  if (n <= 0) throw std::invalid_argument("w1_exact: empty input");
  if (n > 512)
    throw std::invalid_argument("w1_exact: instance too large (n > 512)");
  if (xs.size() != static_cast<std::size_t>(n) * d ||
      ys.size() != static_cast<std::size_t>(n) * d)
    throw std::invalid_argument("w1_exact: size mismatch");
  std::vector<double> cost(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double r2 = 0;
      for (int a = 0; a < d; ++a) {
        double diff = xs[static_cast<std::size_t>(i) * d + a] -
                      ys[static_cast<std::size_t>(j) * d + a];
        r2 += diff * diff;
      }
      cost[static_cast<std::size_t>(i) * n + j] = std::sqrt(r2);
    }
  }
  W1Result r;
  r.method = W1Result::Method::assignment_exact;
  r.value = detail::solve_assignment(cost, n, r.matching) / n;
  return r;
}

// Sliced W1: average of sorted 1D distances over seeded random directions.
// In d = 1 every unit direction reproduces w1_1d exactly.
inline W1Result w1_sliced(std::span<const double> xs, std::span<const double> ys,
                          int n, int d, int n_dirs, std::uint64_t seed) {
  if (n <= 0 || n_dirs <= 0)
    throw std::invalid_argument("w1_sliced: empty input");
  if (xs.size() != static_cast<std::size_t>(n) * d ||
      ys.size() != static_cast<std::size_t>(n) * d)
    throw std::invalid_argument("w1_sliced: size mismatch");
  CounterRng rng{seed, kStreamSlicedDirs};
  std::vector<double> px(n), py(n), dir(d);
  double acc = 0;
  for (int k = 0; k < n_dirs; ++k) {
    double norm = 0;
    while (norm == 0) {
      rng.normals(static_cast<std::uint32_t>(k), 0, std::span<double>(dir));
      for (double c : dir) norm += c * c;
    }
    norm = std::sqrt(norm);
    for (int i = 0; i < n; ++i) {
      double sx = 0, sy = 0;
      for (int a = 0; a < d; ++a) {
        sx += dir[a] * xs[static_cast<std::size_t>(i) * d + a];
        sy += dir[a] * ys[static_cast<std::size_t>(i) * d + a];
      }
      px[i] = sx / norm;
      py[i] = sy / norm;
    }
    acc += w1_1d(px, py).value;
  }
  W1Result r;
  r.method = W1Result::Method::sliced;
  r.value = acc / n_dirs;
  return r;
}

namespace detail {

// Nonnegative cell masses of a grid density (negatives clamped), total > 0.
inline std::vector<double> cell_masses(const GridField& rho) {
  double cell = std::pow(rho.spec.dx(), rho.spec.dim);
  std::vector<double> mass(rho.size());
  double total = 0;
  for (std::size_t i = 0; i < rho.size(); ++i) {
    mass[i] = std::max(rho.v[i], 0.0) * cell;
    total += mass[i];
  }
  if (!(total > 0))
    throw std::invalid_argument("w1_vs_grid: grid measure has no mass");
  for (double& m : mass) m /= total;
  return mass;
}

// Exact integral of |F_N - F_rho| in d = 1: F_N is the empirical staircase,
// F_rho is piecewise linear (cell [x_i, x_i + dx) carries density v_i).
inline double w1_grid_cdf_1d(std::span<const double> points, int n,
                             const GridField& rho) {
  auto mass = cell_masses(rho);
  int M = rho.spec.cells;
  double L = rho.spec.half_width, dx = rho.spec.dx();
  std::vector<double> xs(n);
  for (int i = 0; i < n; ++i) xs[i] = wrap_coord(points[i], L);
  std::sort(xs.begin(), xs.end());

  std::vector<double> cum(M + 1, 0.0);
  for (int i = 0; i < M; ++i) cum[i + 1] = cum[i] + mass[i];

  auto integrate_piece = [](double A, double B, double len) {
    // integral of |A + B u| du over [0, len]
    if (len <= 0) return 0.0;
    if (B == 0) return std::abs(A) * len;
    double root = -A / B;
    auto prim = [&](double u) { return std::abs(A * u + 0.5 * B * u * u); };
    if (root <= 0 || root >= len) {
      double v = A * len + 0.5 * B * len * len;
      return std::abs(v);
    }
    return prim(root) + std::abs(A * len + 0.5 * B * len * len -
                                 (A * root + 0.5 * B * root * root));
  };

  double w1 = 0;
  int ip = 0;  // particles strictly below the sweep position
  for (int c = 0; c < M; ++c) {
    double x0 = -L + c * dx, x1 = x0 + dx;
    double slope = mass[c] / dx;  // density of F_rho on this cell
    double pos = x0;
    double frho = cum[c];
    while (ip < n && xs[ip] == pos) ++ip;
    while (pos < x1) {
      double next = (ip < n && xs[ip] < x1) ? xs[ip] : x1;
      double fn = static_cast<double>(ip) / n;
      // On [pos, next): F_N = fn, F_rho = frho + slope*(u - pos).
      w1 += integrate_piece(frho - fn, slope, next - pos);
      frho += slope * (next - pos);
      pos = next;
      while (ip < n && xs[ip] == pos && pos < x1) ++ip;
    }
  }
  return w1;
}

// m_samples draws from the (clamped, normalized) grid measure: categorical
// over cells plus in-cell uniform offsets. Deterministic in (seed, k).
inline std::vector<double> sample_grid_measure(const GridField& rho, int m,
                                               std::uint64_t seed) {
  auto mass = cell_masses(rho);
  std::vector<double> cum(mass.size() + 1, 0.0);
  for (std::size_t i = 0; i < mass.size(); ++i) cum[i + 1] = cum[i] + mass[i];
  cum.back() = 1.0;
  const GridSpec& g = rho.spec;
  CounterRng rng{seed, kStreamGridSamples};
  std::vector<double> out(static_cast<std::size_t>(m) * g.dim);
  std::array<double, kMaxDim> corner{};
  for (int k = 0; k < m; ++k) {
    double u = rng.uniform(static_cast<std::uint32_t>(k), 0);
    std::size_t cell =
        std::upper_bound(cum.begin(), cum.end(), u) - cum.begin() - 1;
    if (cell >= mass.size()) cell = mass.size() - 1;
    std::size_t rem = cell;
    for (int a = g.dim - 1; a >= 0; --a) {
      corner[a] = g.node(static_cast<int>(rem % g.cells));
      rem /= g.cells;
    }
    for (int a = 0; a < g.dim; ++a) {
      double off = rng.uniform(static_cast<std::uint32_t>(k), 1,
                               static_cast<std::uint32_t>(a));
      out[static_cast<std::size_t>(k) * g.dim + a] = corner[a] + off * g.dx();
    }
  }
  return out;
}

}  // namespace detail

// W1 between an empirical measure and a grid density. d = 1 is exact via CDF
// integration (m_samples unused); d >= 2 draws m_samples from the grid
// measure and defers to w1_exact (sizes match, small) or the sliced bound.
inline W1Result w1_vs_grid(std::span<const double> points, int n,
                           const GridField& rho, int m_samples = 0,
                           std::uint64_t seed = 0, int n_dirs = 32) {
  if (n <= 0) throw std::invalid_argument("w1_vs_grid: empty input");
  const GridSpec& g = rho.spec;
  if (points.size() != static_cast<std::size_t>(n) * g.dim)
    throw std::invalid_argument("w1_vs_grid: size mismatch");
  W1Result r;
  if (g.dim == 1) {
    r.method = W1Result::Method::grid_cdf;
    r.value = detail::w1_grid_cdf_1d(points, n, rho);
    return r;
  }
  int m = m_samples > 0 ? m_samples : n;
  std::vector<double> draws = detail::sample_grid_measure(rho, m, seed);
  if (m == n && n <= 512) return w1_exact(points, draws, n, g.dim);
  if (m == n) return w1_sliced(points, draws, n, g.dim, n_dirs, seed);
  // Unequal sizes: average the exact unequal-weight 1D distance over
  // seeded directions.
  CounterRng rng{seed, kStreamSlicedDirs};
  std::vector<double> dir(g.dim);
  double acc = 0;
  for (int k = 0; k < n_dirs; ++k) {
    double norm = 0;
    while (norm == 0) {
      rng.normals(static_cast<std::uint32_t>(k), 0, std::span<double>(dir));
      for (double c : dir) norm += c * c;
    }
    norm = std::sqrt(norm);
    std::vector<double> pa(n), pb(m);
    for (int i = 0; i < n; ++i) {
      double s = 0;
      for (int a = 0; a < g.dim; ++a)
        s += dir[a] * points[static_cast<std::size_t>(i) * g.dim + a];
      pa[i] = s / norm;
    }
    for (int j = 0; j < m; ++j) {
      double s = 0;
      for (int a = 0; a < g.dim; ++a)
        s += dir[a] * draws[static_cast<std::size_t>(j) * g.dim + a];
      pb[j] = s / norm;
    }
    std::sort(pa.begin(), pa.end());
    std::sort(pb.begin(), pb.end());
    acc += detail::w1_sorted_unequal(pa, pb);
  }
  r.method = W1Result::Method::sliced;
  r.value = acc / n_dirs;
  return r;
}

// Max over a recorded curve.
inline double sup_metric(std::span<const double> values) {
  if (values.empty()) throw std::domain_error("sup_metric: empty curve");
  double m = values[0];
  for (double v : values) m = std::max(m, v);
  return m;
}

}  // namespace ks
