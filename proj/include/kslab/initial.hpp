#pragma once
// Initial data families with closed forms: the density rho0 is a one- or
// two-component isotropic Gaussian mixture (a probability density), the
// initial chemical c0 is a Gaussian bump whose heat-semigroup image and
// gradient are analytic. Closed forms keep particle drift evaluations
// grid-free wherever the continuum expression is exact.

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "kslab/grid.hpp"
#include "kslab/rng.hpp"

namespace ks {

struct GaussianComponent {
  Vec mean{};
  double sigma = 1;
};

struct Rho0 {
  std::vector<GaussianComponent> comp{GaussianComponent{}};
  std::vector<double> weight{1.0};

  double pdf(std::span<const double> x) const {
    double s = 0;
    for (std::size_t c = 0; c < comp.size(); ++c) {
      double q = 0;
      double sig2 = comp[c].sigma * comp[c].sigma;
      for (std::size_t a = 0; a < x.size(); ++a) {
        double d = x[a] - comp[c].mean[a];
        q += d * d;
      }
      double norm = std::pow(2.0 * std::numbers::pi * sig2,
                             0.5 * static_cast<double>(x.size()));
      s += weight[c] * std::exp(-q / (2.0 * sig2)) / norm;
    }
    return s;
  }

  // Exact i.i.d. sample for particle id i: component pick from the init-pick
  // stream, then Box-Muller normals from the init-gauss stream.
  void sample(const BrownianStore& store, std::uint32_t i,
              std::span<double> out) const {
    std::size_t c = 0;
    if (comp.size() > 1) {
      double u = store.init_uniform(i), acc = 0;
      for (c = 0; c + 1 < comp.size(); ++c) {
        acc += weight[c];
        if (u < acc) break;
      }
    }
    store.init_normals(i, out);
    for (std::size_t a = 0; a < out.size(); ++a)
      out[a] = comp[c].mean[a] + comp[c].sigma * out[a];
  }

  // Probability mass outside [-half, half]^d (exact erf product).
  double mass_outside_box(double half, int dim) const {
    auto Phi = [](double z) { return 0.5 * (1.0 + std::erf(z / std::numbers::sqrt2)); };
    double inside = 0;
    for (std::size_t c = 0; c < comp.size(); ++c) {
      double p = 1;
      for (int a = 0; a < dim; ++a) {
        double mu = comp[c].mean[a], sg = comp[c].sigma;
        p *= Phi((half - mu) / sg) - Phi((-half - mu) / sg);
      }
      inside += weight[c] * p;
    }
    return 1.0 - inside;
  }
};

// c0(x) = amp * exp(-|x-mean|^2 / (2 sigma^2)); amp = 0 is the zero field.
struct C0 {
  double amp = 0;
  Vec mean{};
  double sigma = 1;

  double value(std::span<const double> x) const {
    if (amp == 0) return 0;
    double q = 0;
    for (std::size_t a = 0; a < x.size(); ++a) {
      double d = x[a] - mean[a];
      q += d * d;
    }
    return amp * std::exp(-q / (2.0 * sigma * sigma));
  }

  // e^{-lambda s} grad(e^{s Laplacian} c0) at x; Gaussian-convolution closed
  // form, exact on all of R^d. s = 0 gives e^{0} grad c0.
  void initial_chem_drift(std::span<const double> x, double s, double lambda,
                          std::span<double> out) const {
    if (s < 0) throw std::domain_error("initial_chem_drift: s must be >= 0");
    if (amp == 0) {
      for (double& o : out) o = 0;
      return;
    }
    double sig2 = sigma * sigma;
    double var = sig2 + 2.0 * s;
    double q = 0;
    for (std::size_t a = 0; a < x.size(); ++a) {
      double d = x[a] - mean[a];
      q += d * d;
    }
    double scale = amp * std::pow(sig2 / var, 0.5 * static_cast<double>(x.size())) *
                   std::exp(-q / (2.0 * var)) * std::exp(-lambda * s);
    for (std::size_t a = 0; a < x.size(); ++a)
      out[a] = scale * (-(x[a] - mean[a]) / var);
  }
};

struct InitialData {
  Rho0 rho0;
  C0 c0;
};

// Node samples of rho0 scaled and renormalized to carry exactly `mass`.
inline GridField rho0_grid(const InitialData& init, const GridSpec& spec,
                           double mass = 1.0) {
  GridField f = sample_field(spec, [&](std::span<const double> x) {
    return init.rho0.pdf(x);
  });
  double have = total_mass(f);
  if (!(have > 0)) throw std::runtime_error("rho0 grid has no mass");
  double s = mass / have;
  for (double& v : f.v) v *= s;
  return f;
}

inline GridField c0_grid(const InitialData& init, const GridSpec& spec) {
  return sample_field(spec, [&](std::span<const double> x) {
    return init.c0.value(x);
  });
}

}  // namespace ks
