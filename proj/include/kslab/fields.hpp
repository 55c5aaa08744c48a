#pragma once
// Particle<->grid transfer (cloud-in-cell), spectral gradients, and the
// delayed-source chemical recurrence:
//
//   d/dt phi = Laplacian phi - lambda phi + e^{-lambda eps} e^{eps Laplacian} f(., t-eps),
//   phi(eps) = 0,
//
// advanced by an exponential integrator whose two-endpoint (trapezoid) source
// rule telescopes into exactly the trapezoid Duhamel quadrature, because the
// spectral semigroup composes without error. chemical_duhamel is that
// quadrature evaluated directly and serves as the oracle for the recurrence.

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "kslab/grid.hpp"
#include "kslab/kernels.hpp"

namespace ks {

namespace detail {

// CIC stencil: per axis the node pair (i, i+1 mod M) with weights (1-f, f).
struct CicStencil {
  std::array<int, kMaxDim> base;
  std::array<double, kMaxDim> frac;
};

inline CicStencil cic_stencil(std::span<const double> x, const GridSpec& g) {
  CicStencil st{};
  for (int a = 0; a < g.dim; ++a) {
    double u = (wrap_coord(x[a], g.half_width) + g.half_width) / g.dx();
    int i0 = static_cast<int>(std::floor(u));
    if (i0 >= g.cells) i0 = g.cells - 1;  // guards u == M from rounding
    st.base[a] = i0;
    st.frac[a] = u - i0;
  }
  return st;
}

template <class Fn>
void for_each_corner(const CicStencil& st, const GridSpec& g, Fn&& fn) {
  int corners = 1 << g.dim;
  int mask = g.cells - 1;
  for (int c = 0; c < corners; ++c) {
    std::size_t flat = 0;
    double w = 1;
    for (int a = 0; a < g.dim; ++a) {
      int bit = (c >> a) & 1;
      int idx = (st.base[a] + bit) & mask;
      flat = flat * g.cells + static_cast<std::size_t>(idx);
      w *= bit ? st.frac[a] : 1.0 - st.frac[a];
    }
    fn(flat, w);
  }
}

}  // namespace detail

// Empirical density of n particles (flat n*d coordinates), total mass 1.
// `order` fixes the accumulation order (ascending particle id) so a permuted
// ensemble deposits bitwise identically; empty means slot order.
inline GridField deposit(std::span<const double> pos, int n, const GridSpec& g,
                         std::span<const std::uint32_t> order = {}) {
  if (n <= 0) throw std::invalid_argument("deposit: need at least one particle");
  GridField f(g);
  double unit = 1.0 / (n * std::pow(g.dx(), g.dim));
  for (int r = 0; r < n; ++r) {
    int i = order.empty() ? r : static_cast<int>(order[r]);
    auto st = detail::cic_stencil(pos.subspan(static_cast<std::size_t>(i) * g.dim,
                                              g.dim), g);
    detail::for_each_corner(st, g, [&](std::size_t flat, double w) {
      f.v[flat] += w * unit;
    });
  }
  return f;
}

// Multilinear interpolation of a node field at x (periodic).
inline double interp(const GridField& f, std::span<const double> x) {
  auto st = detail::cic_stencil(x, f.spec);
  double s = 0;
  detail::for_each_corner(st, f.spec, [&](std::size_t flat, double w) {
    s += w * f.v[flat];
  });
  return s;
}

inline void interp(const VectorField& vf, std::span<const double> x,
                   std::span<double> out) {
  for (int a = 0; a < vf.dim(); ++a) out[a] = interp(vf.comp[a], x);
}

// Spectral node gradient; the Nyquist mode has no odd derivative and is
// zeroed. Each component has exactly zero mean.
inline VectorField gradient(const GridField& f) {
  const GridSpec& g = f.spec;
  VectorField out(g, g.dim);
  double base = std::numbers::pi / g.half_width;
  for (int a = 0; a < g.dim; ++a) {
    out.comp[a] = detail::spectral_map(
        f, [&](const std::array<int, kMaxDim>& freq) {
          if (std::abs(freq[a]) == g.cells / 2)
            return std::complex<double>(0, 0);
          return std::complex<double>(0, base * freq[a]);
        });
    out.comp[a].time = f.time;
  }
  return out;
}

// Per-step source snapshots covering the delay window. Snapshot j is the
// source at step j; capacity lag+2 keeps both endpoints of the current
// quadrature panel alive.
struct DelayedSourceRing {
  int lag = 0;
  long pushes = 0;
  std::vector<GridField> buf;

  explicit DelayedSourceRing(int lag_steps = 0)
      : lag(lag_steps), buf(static_cast<std::size_t>(lag_steps) + 2) {
    if (lag_steps < 0) throw std::invalid_argument("ring lag must be >= 0");
  }
  long capacity() const { return lag + 2; }
  void push(const GridField& f) {
    buf[static_cast<std::size_t>(pushes % capacity())] = f;
    ++pushes;
  }
  bool has(long j) const {
    return j >= 0 && j < pushes && j >= pushes - capacity();
  }
  const GridField& at(long j) const {
    if (!has(j))
      throw std::out_of_range("delayed-source ring underflow: snapshot " +
                              std::to_string(j) + " unavailable");
    return buf[static_cast<std::size_t>(j % capacity())];
  }
};

inline void add_scaled(GridField& a, const GridField& b, double s) {
  for (std::size_t i = 0; i < a.size(); ++i) a.v[i] += s * b.v[i];
}

// One exponential-integrator step of the delayed-source equation, advancing
// phi from its own recorded time t to t+dt:
//
//   phi <- e^{-lambda dt} e^{dt Lap} phi
//        + (dt/2) [ e^{-lambda(dt+eps)} e^{(dt+eps) Lap} f(t-eps)
//                 + e^{-lambda eps}     e^{eps Lap}      f(t+dt-eps) ],
//
// with source terms dropped while their times are negative (phi stays exactly
// zero until t > eps). eps is snapped to ring.lag * dt.
inline GridField chemical_step(const GridField& phi, const DelayedSourceRing& ring,
                               double dt, double lambda, double eps) {
  if (!(dt > 0)) throw std::invalid_argument("chemical_step: dt must be > 0");
  if (!(eps >= 0)) throw std::invalid_argument("chemical_step: eps must be >= 0");
  double eps_eff = ring.lag * dt;
  if (std::abs(eps_eff - eps) > 0.5 * dt + 1e-9)
    throw std::invalid_argument("chemical_step: ring lag inconsistent with eps");

  long n = std::llround(phi.time / dt);
  GridField out = semigroup_apply(phi, dt);
  double decay = std::exp(-lambda * dt);
  for (double& v : out.v) v *= decay;

  // The step covers the source panel [t-eps, t+dt-eps]; it enters only once
  // the whole panel sits inside [0, infinity), i.e. n >= lag, which keeps phi
  // exactly zero through t = eps.
  if (n >= ring.lag) {
    add_scaled(out, semigroup_apply(ring.at(n - ring.lag), dt + eps_eff),
               0.5 * dt * std::exp(-lambda * (dt + eps_eff)));
    add_scaled(out, semigroup_apply(ring.at(n + 1 - ring.lag), eps_eff),
               0.5 * dt * std::exp(-lambda * eps_eff));
  }
  out.time = (n + 1) * dt;
  return out;
}

// Source history sampled every h time units, snaps[j] at time j*h.
struct FieldPath {
  double h = 0;
  std::vector<GridField> snaps;
};

// Direct Duhamel quadrature (trapezoid over [0, t-eps] on the stored grid):
//
//   c(t) = e^{-lambda t} e^{t Lap} c0
//        + sum_j w_j e^{-lambda (t - s_j)} e^{(t-s_j) Lap} rho(s_j).
//
// This is the oracle the recurrence must reproduce; it is O(steps) semigroup
// applications per evaluation and is not used in inner loops.
inline GridField chemical_duhamel(const FieldPath& rho, const GridField* c0,
                                  double lambda, double eps, double t) {
  if (t < 0) throw std::domain_error("chemical_duhamel: t must be >= 0");
  const GridSpec* spec = nullptr;
  if (c0 != nullptr) spec = &c0->spec;
  else if (!rho.snaps.empty()) spec = &rho.snaps.front().spec;
  else throw std::invalid_argument("chemical_duhamel: no fields given");

  GridField out(*spec);
  if (c0 != nullptr) {
    out = semigroup_apply(*c0, t);
    double decay = std::exp(-lambda * t);
    for (double& v : out.v) v *= decay;
  }
  MemoryQuadrature q = memory_nodes(t, eps, rho.h);
  if (!q.empty() && q.nodes.size() > rho.snaps.size())
    throw std::invalid_argument("chemical_duhamel: rho path too short");
  for (std::size_t j = 0; j < q.nodes.size(); ++j) {
    double tau = t - q.nodes[j];
    add_scaled(out, semigroup_apply(rho.snaps[j], tau),
               q.weights[j] * std::exp(-lambda * tau));
  }
  out.time = t;
  return out;
}

}  // namespace ks
