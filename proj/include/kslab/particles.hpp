#pragma once
// Euler-Maruyama integrator for the three coupled processes: the N-particle
// system with memory drift, the intermediate self-consistent SDE, and the
// limiting mean-field SDE. All three read Brownian increments addressed by
// (particle id, step), so runs sharing a BrownianStore share noise paths.
// Storage order and worker count never change a trajectory byte: sums and
// deposits always iterate ids ascending.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <numeric>
#include <span>
#include <vector>

#include "kslab/errors.hpp"
#include "kslab/fields.hpp"
#include "kslab/grid.hpp"
#include "kslab/initial.hpp"
#include "kslab/kernels.hpp"
#include "kslab/parallel.hpp"
#include "kslab/pde.hpp"
#include "kslab/rng.hpp"
#include "kslab/transport.hpp"

namespace ks {

struct ParticleEnsemble {
  int dim = 1, n = 0;
  double time = 0;
  long step = 0;
  std::vector<double> pos;           // slot-major, n * dim
  std::vector<std::uint32_t> id;     // slot -> particle id
  std::vector<int> slot_of;          // id -> slot

  std::span<const double> at(int slot) const {
    return {pos.data() + static_cast<std::size_t>(slot) * dim,
            static_cast<std::size_t>(dim)};
  }
  std::span<const double> of_id(std::uint32_t i) const { return at(slot_of[i]); }

  // Canonical id-major copy (snapshot layout, independent of storage order).
  std::vector<double> positions_by_id() const {
    std::vector<double> out(pos.size());
    for (int i = 0; i < n; ++i) {
      auto x = of_id(static_cast<std::uint32_t>(i));
      std::copy(x.begin(), x.end(),
                out.begin() + static_cast<std::size_t>(i) * dim);
    }
    return out;
  }
};

// N i.i.d. samples from rho0; sample of particle id i is addressed by i in
// the init streams, so it never depends on N or on other particles.
inline ParticleEnsemble init_ensemble(const InitialData& init, int n,
                                      const BrownianStore& store, double L) {
  if (n < 1) throw ConfigError("ensemble size N must be >= 1");
  if (init.rho0.comp.empty())
    throw ConfigError("rho0 must have at least one mixture component");
  ParticleEnsemble ens;
  ens.dim = store.dim;
  ens.n = n;
  ens.pos.resize(static_cast<std::size_t>(n) * store.dim);
  ens.id.resize(n);
  ens.slot_of.resize(n);
  for (int i = 0; i < n; ++i) {
    ens.id[i] = static_cast<std::uint32_t>(i);
    ens.slot_of[i] = i;
  }
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    std::span<double> x{ens.pos.data() + i * store.dim,
                        static_cast<std::size_t>(store.dim)};
    init.rho0.sample(store, static_cast<std::uint32_t>(i), x);
    for (double& c : x) c = wrap_coord(c, L);
  });
  return ens;
}

// Decimated id-major snapshots on the clock {0, h, 2h, ...}.
struct ParticleHistory {
  double h = 0;
  std::vector<double> t;
  std::vector<std::vector<double>> snaps;

  void record(const ParticleEnsemble& ens) {
    if (!t.empty() && ens.time <= t.back())
      throw std::logic_error("history times must be strictly increasing");
    t.push_back(ens.time);
    snaps.push_back(ens.positions_by_id());
  }
};

// Memory drift of particle id i from the pairwise time-smeared kernel:
// (1/N) sum_j sum_k w_k e^{-lambda(s - r_k)} grad K(X_s^i - X_{r_k}^j, s - r_k)
// plus the decayed initial chemical term. Empty quadrature (s <= eps) leaves
// only the initial term. Differences are taken min-image on the torus; the
// box rule keeps image corrections below the global tolerance.
inline void drift_interacting_direct(const ParticleEnsemble& ens,
                                     const ParticleHistory& hist,
                                     const InitialData& init,
                                     const KernelParams& kp, double eps,
                                     double L, std::uint32_t i,
                                     std::span<double> out) {
  int d = ens.dim;
  double s = ens.time;
  init.c0.initial_chem_drift(ens.of_id(i), s, kp.lambda, out);
  MemoryQuadrature quad = memory_nodes(s, eps, hist.h);
  if (quad.empty()) return;

  std::array<double, kMaxDim> diff{}, g{};
  auto xi = ens.of_id(i);
  for (std::size_t q = 0; q < quad.nodes.size(); ++q) {
    double r = quad.nodes[q];
    double tau = s - r;
    std::size_t snap = static_cast<std::size_t>(std::llround(r / hist.h));
    if (snap >= hist.snaps.size() ||
        std::abs(hist.t[snap] - r) > 1e-9)
      throw std::logic_error("history does not cover the memory window");
    const std::vector<double>& past = hist.snaps[snap];
    double w = quad.weights[q] * std::exp(-kp.lambda * tau) / ens.n;
    for (int j = 0; j < ens.n; ++j) {
      for (int a = 0; a < d; ++a)
        diff[a] = min_image(xi[a], past[static_cast<std::size_t>(j) * d + a], L);
      grad_heat_kernel(std::span<const double>(diff.data(), d), tau,
                       std::span<double>(g.data(), d));
      for (int a = 0; a < d; ++a) out[a] += w * g[a];
    }
  }
}

// Grid-accelerated interacting drift: deposits drive the delayed-source
// recurrence for the memory field phi; the per-particle drift is the
// interpolated grad phi plus the same closed-form initial chemical term.
struct FastDriftState {
  GridSpec grid;
  KernelParams kp;
  double dt = 0, eps = 0;
  GridField phi;
  VectorField grad_phi;
  DelayedSourceRing ring;
  long n_steps = 0;
  bool primed = false;

  FastDriftState(const GridSpec& g, const KernelParams& kernel, double dt_,
                 double eps_)
      : grid(g), kp(kernel), dt(dt_), eps(eps_) {
    validate_spec(g);
    validate_kernel_params(kernel);
    if (!(dt > 0)) throw ConfigError("dt must be > 0");
    if (eps < 0) throw ConfigError("eps must be >= 0");
    double lag = eps / dt;
    if (std::abs(lag - std::llround(lag)) > 1e-9)
      throw ConfigError("eps must be an integer multiple of dt");
    ring = DelayedSourceRing(static_cast<int>(std::llround(lag)));
  }

  // Id-major input makes slot order the id order, fixing accumulation order.
  GridField deposit_now(std::span<const double> pos_id_major, int n,
                        double time) const {
    GridField f = deposit(pos_id_major, n, grid);
    f.time = time;
    return f;
  }

  void prime(std::span<const double> pos_id_major, int n) {
    phi = GridField(grid);
    grad_phi = gradient(phi);
    ring.push(deposit_now(pos_id_major, n, 0.0));
    n_steps = 0;
    primed = true;
  }
  void prime(const ParticleEnsemble& ens) {
    auto p = ens.positions_by_id();
    prime(p, ens.n);
  }

  // Called after each position update; keeps phi one step behind no one.
  void advance(std::span<const double> pos_id_major, int n) {
    if (!primed) throw std::logic_error("fast drift state not primed");
    n_steps += 1;
    ring.push(deposit_now(pos_id_major, n, n_steps * dt));
    phi = chemical_step(phi, ring, dt, kp.lambda, eps);
    grad_phi = gradient(phi);
  }
  void advance(const ParticleEnsemble& ens) {
    auto p = ens.positions_by_id();
    advance(p, ens.n);
  }

  void drift(const ParticleEnsemble& ens, std::uint32_t i,
             const InitialData& init, std::span<double> out) const {
    if (!primed || std::abs(phi.time - ens.time) > 1e-9)
      throw std::logic_error("stale memory field: advance() must track em_step");
    init.c0.initial_chem_drift(ens.of_id(i), ens.time, kp.lambda, out);
    std::array<double, kMaxDim> g{};
    interp(grad_phi, ens.of_id(i), std::span<double>(g.data(), ens.dim));
    for (int a = 0; a < ens.dim; ++a) out[a] += g[a];
  }
};

// Per-step gradient tables of a mean-field chemical trajectory. Built once
// per configuration and shared read-only across seeds and ensembles.
struct MeanFieldTables {
  double dt = 0;
  std::vector<VectorField> grad_c;  // index = step
};

inline MeanFieldTables build_meanfield_tables(const PdeConfig& cfg,
                                              const InitialData& init,
                                              double T) {
  long steps = std::llround(T / cfg.dt);
  if (!(T > 0) || std::abs(steps * cfg.dt - T) > 1e-9 || steps < 1)
    throw ConfigError("horizon T must be an integer multiple of dt");
  MeanFieldTables tab;
  tab.dt = cfg.dt;
  tab.grad_c.reserve(steps + 1);
  PdeState s = init_pde(cfg, init);
  tab.grad_c.push_back(gradient(s.c));
  for (long k = 0; k < steps; ++k) {
    pde_step(s);
    tab.grad_c.push_back(gradient(s.c));
  }
  return tab;
}

inline void drift_meanfield(const MeanFieldTables& tab,
                            const ParticleEnsemble& ens, std::uint32_t i,
                            std::span<double> out) {
  if (tab.dt <= 0 || tab.grad_c.empty())
    throw std::logic_error("mean-field tables are empty");
  long idx = std::llround(ens.time / tab.dt);
  if (idx < 0 || idx >= static_cast<long>(tab.grad_c.size()) ||
      std::abs(idx * tab.dt - ens.time) > 1e-9)
    throw std::logic_error("mean-field tables do not cover this time");
  interp(tab.grad_c[static_cast<std::size_t>(idx)], ens.of_id(i), out);
}

// One Euler-Maruyama step: X <- X + b dt + sqrt(2) dB(id, step), wrapped
// into the box. drifts are slot-major and must match the ensemble layout.
inline void em_step(ParticleEnsemble& ens, std::span<const double> drifts,
                    const BrownianStore& store, double dt, double L) {
  if (!(dt > 0)) throw ConfigError("dt must be > 0");
  if (drifts.size() != ens.pos.size())
    throw std::invalid_argument("drift array size mismatch");
  double root2 = std::sqrt(2.0);
  parallel_for(static_cast<std::size_t>(ens.n), [&](std::size_t k) {
    std::array<double, kMaxDim> dw{};
    std::span<double> w(dw.data(), ens.dim);
    store.increments(ens.id[k], static_cast<std::uint32_t>(ens.step), dt, w);
    for (int a = 0; a < ens.dim; ++a) {
      double& x = ens.pos[k * ens.dim + a];
      x = wrap_coord(x + drifts[k * ens.dim + a] * dt + root2 * dw[a], L);
    }
  });
  ens.step += 1;
  ens.time += dt;
}

// Coupled three-system run under one Brownian store.
struct CoupledParams {
  InitialData init;
  GridSpec grid;
  KernelParams kernel;
  int n = 64;
  std::uint64_t seed = 1;
  double T = 0.5, dt = 0.0125, eps = 0.05;
  int record_stride = 0;  // 0: every ceil(eps/(8 dt)) steps
  const MeanFieldTables* mid_tables = nullptr;    // intermediate SDE drift
  const MeanFieldTables* limit_tables = nullptr;  // limit SDE drift
  const PdePath* law_path = nullptr;  // optional: W1 vs rho^eps on record clock
  bool with_interacting = true;   // evolve the N-particle system
  bool with_meanfield = true;     // evolve the table-driven pair
  bool interaction_enabled = true;  // false: memory drift off, chem term kept
};

struct CoupledRun {
  std::vector<double> t;
  std::vector<double> gap_inter_mid;   // mean torus distance per record time
  std::vector<double> gap_mid_limit;
  std::vector<double> w1_inter_law;    // empty without a law path
  double mean_sup_inter_mid = 0;       // (1/N) sum_i sup_t |X^i - Xbar^i|
  double mean_sup_mid_limit = 0;
  double sup_w1_inter_law = 0;
  ParticleEnsemble final_inter, final_mid, final_limit;
};

inline int default_decimation(double eps, double dt) {
  if (eps <= 0) return 1;
  return std::max(1, static_cast<int>(std::ceil(eps / (8.0 * dt))));
}

inline void validate(const CoupledParams& p) {
  validate_spec(p.grid);
  validate_kernel_params(p.kernel);
  if (p.grid.dim != p.kernel.dim)
    throw ConfigError("grid and kernel dimensions must agree");
  if (p.n < 1) throw ConfigError("ensemble size N must be >= 1");
  if (!(p.dt > 0)) throw ConfigError("dt must be > 0");
  if (!(p.eps > 0)) throw ConfigError("eps must be > 0 for the coupled run");
  if (p.dt > p.eps / 4.0 + 1e-12)
    throw ConfigError("dt must be <= eps/4 so steps resolve the cut-off");
  double lag = p.eps / p.dt;
  if (std::abs(lag - std::llround(lag)) > 1e-9)
    throw ConfigError("eps must be an integer multiple of dt");
  long steps = std::llround(p.T / p.dt);
  if (!(p.T > 0) || std::abs(steps * p.dt - p.T) > 1e-9 || steps < 1)
    throw ConfigError("horizon T must be an integer multiple of dt");
  if (!p.with_interacting && !p.with_meanfield)
    throw ConfigError("coupled run needs at least one system enabled");
  if (p.with_meanfield &&
      (p.mid_tables == nullptr || p.limit_tables == nullptr))
    throw ConfigError("coupled run needs intermediate and limit drift tables");
  if (p.law_path != nullptr && !p.with_interacting)
    throw ConfigError("law-path tracking needs the interacting system");
}

namespace detail {

inline double torus_dist(std::span<const double> a, std::span<const double> b,
                         double L) {
  double r2 = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    double d = min_image(a[k], b[k], L);
    r2 += d * d;
  }
  return std::sqrt(r2);
}

// One-time stiffness tripwire: dt * max |second difference of phi| as a
// surrogate for dt * Lipschitz(drift).
inline double second_diff_sup(const GridField& f) {
  const GridSpec& g = f.spec;
  double dx2 = g.dx() * g.dx();
  int M = g.cells;
  std::array<std::size_t, kMaxDim> stride{};
  stride[g.dim - 1] = 1;
  for (int a = g.dim - 2; a >= 0; --a) stride[a] = stride[a + 1] * M;
  double sup = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    for (int a = 0; a < g.dim; ++a) {
      std::size_t ia = (i / stride[a]) % M;
      std::size_t up = i + (ia + 1 == static_cast<std::size_t>(M)
                                ? stride[a] * (1 - M)
                                : stride[a]);
      std::size_t dn = i - (ia == 0 ? stride[a] * (1 - M) : stride[a]);
      sup = std::max(sup,
                     std::abs(f.v[up] - 2.0 * f.v[i] + f.v[dn]) / dx2);
    }
  }
  return sup;
}

}  // namespace detail

inline CoupledRun run_coupled(const CoupledParams& p) {
  validate(p);
  long steps = std::llround(p.T / p.dt);
  int stride = p.record_stride > 0 ? p.record_stride
                                   : default_decimation(p.eps, p.dt);
  double L = p.grid.half_width;

  BrownianStore store{p.seed, p.grid.dim};
  ParticleEnsemble inter = init_ensemble(p.init, p.n, store, L);
  ParticleEnsemble mid = inter, lim = inter;
  bool track_gaps = p.with_interacting && p.with_meanfield;
  std::unique_ptr<FastDriftState> fast;
  if (p.with_interacting && p.interaction_enabled) {
    fast = std::make_unique<FastDriftState>(p.grid, p.kernel, p.dt, p.eps);
    fast->prime(inter);
  }

  std::vector<double> sup_im(p.n, 0.0), sup_ml(p.n, 0.0);
  CoupledRun out;
  std::size_t d = static_cast<std::size_t>(p.grid.dim);
  std::vector<double> b_inter(inter.pos.size()), b_mid(inter.pos.size()),
      b_lim(inter.pos.size());

  auto record = [&](long k) {
    out.t.push_back(k * p.dt);
    if (track_gaps) {
      double gim = 0, gml = 0;
      for (int i = 0; i < p.n; ++i) {
        gim += detail::torus_dist(inter.of_id(i), mid.of_id(i), L);
        gml += detail::torus_dist(mid.of_id(i), lim.of_id(i), L);
      }
      out.gap_inter_mid.push_back(gim / p.n);
      out.gap_mid_limit.push_back(gml / p.n);
    } else if (p.with_meanfield) {
      double gml = 0;
      for (int i = 0; i < p.n; ++i)
        gml += detail::torus_dist(mid.of_id(i), lim.of_id(i), L);
      out.gap_mid_limit.push_back(gml / p.n);
    }
    if (p.law_path != nullptr) {
      std::size_t snap = out.t.size() - 1;
      if (snap >= p.law_path->rho.size() ||
          std::abs(p.law_path->t[snap] - k * p.dt) > 1e-9)
        throw std::logic_error("law path does not match the record clock");
      auto posv = inter.positions_by_id();
      double w =
          w1_vs_grid(posv, p.n, p.law_path->rho[snap], 0, p.seed).value;
      out.w1_inter_law.push_back(w);
      out.sup_w1_inter_law = std::max(out.sup_w1_inter_law, w);
    }
  };
  record(0);

  bool warned = false;
  for (long k = 0; k < steps; ++k) {
    if (p.with_interacting) {
      if (fast) {
        parallel_for(static_cast<std::size_t>(p.n), [&](std::size_t slot) {
          std::uint32_t i = inter.id[slot];
          fast->drift(inter, i, p.init,
                      std::span<double>(b_inter.data() + slot * d, d));
        });
      } else {
        parallel_for(static_cast<std::size_t>(p.n), [&](std::size_t slot) {
          std::uint32_t i = inter.id[slot];
          p.init.c0.initial_chem_drift(
              inter.of_id(i), inter.time, p.kernel.lambda,
              std::span<double>(b_inter.data() + slot * d, d));
        });
      }
    }
    if (p.with_meanfield) {
      parallel_for(static_cast<std::size_t>(p.n), [&](std::size_t slot) {
        drift_meanfield(*p.mid_tables, mid, mid.id[slot],
                        std::span<double>(b_mid.data() + slot * d, d));
      });
      parallel_for(static_cast<std::size_t>(p.n), [&](std::size_t slot) {
        drift_meanfield(*p.limit_tables, lim, lim.id[slot],
                        std::span<double>(b_lim.data() + slot * d, d));
      });
    }
    if (p.with_interacting) em_step(inter, b_inter, store, p.dt, L);
    if (p.with_meanfield) {
      em_step(mid, b_mid, store, p.dt, L);
      em_step(lim, b_lim, store, p.dt, L);
    }
    if (fast) {
      fast->advance(inter);

      if (!warned && (k + 1) * p.dt > p.eps + 1e-12) {
        double lhat = detail::second_diff_sup(fast->phi);
        if (p.dt * lhat > 0.5) {
          std::fprintf(stderr,
                       "warning: dt * Lhat = %.3g > 0.5; the memory drift may "
                       "be under-resolved at eps = %.3g\n",
                       p.dt * lhat, p.eps);
        }
        warned = true;
      }
    }

    if (track_gaps) {
      for (int i = 0; i < p.n; ++i) {
        sup_im[i] = std::max(
            sup_im[i], detail::torus_dist(inter.of_id(i), mid.of_id(i), L));
        sup_ml[i] = std::max(
            sup_ml[i], detail::torus_dist(mid.of_id(i), lim.of_id(i), L));
      }
    } else if (p.with_meanfield) {
      for (int i = 0; i < p.n; ++i)
        sup_ml[i] = std::max(
            sup_ml[i], detail::torus_dist(mid.of_id(i), lim.of_id(i), L));
    }
    if ((k + 1) % stride == 0 || k + 1 == steps) record(k + 1);
  }

  out.mean_sup_inter_mid =
      std::accumulate(sup_im.begin(), sup_im.end(), 0.0) / p.n;
  out.mean_sup_mid_limit =
      std::accumulate(sup_ml.begin(), sup_ml.end(), 0.0) / p.n;
  out.final_inter = std::move(inter);
  out.final_mid = std::move(mid);
  out.final_limit = std::move(lim);
  return out;
}

}  // namespace ks
