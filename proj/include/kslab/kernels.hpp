#pragma once
// Heat-kernel primitives, the spectral heat semigroup on the periodic box,
// and the trapezoid quadrature over the delay window [0, s-eps].
//
// The periodic box stands in for free space: configs must keep the image
// charge exp(-L^2/(4T)) below 1e-10, after which periodized and free-space
// kernels agree to the tolerances used anywhere in this library.

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "kslab/grid.hpp"

namespace ks {

// Bundled kernel parameters carried by drift evaluators.
struct KernelParams {
  int dim = 1;
  double lambda = 0;  // chemical decay rate, >= 0
};

inline void validate_kernel_params(const KernelParams& kp) {
  if (kp.dim < 1 || kp.dim > kMaxDim)
    throw std::invalid_argument("kernel dim must be in 1..3");
  if (!(kp.lambda >= 0)) throw std::invalid_argument("lambda must be >= 0");
}

// K(x, tau) = exp(-|x|^2/(4 tau)) / (4 pi tau)^{d/2}, the heat kernel.
inline double heat_kernel(std::span<const double> x, double tau) {
  if (!(tau > 0)) throw std::domain_error("heat_kernel: tau must be > 0");
  double r2 = 0;
  for (double xi : x) r2 += xi * xi;
  double d = static_cast<double>(x.size());
  return std::exp(-r2 / (4.0 * tau)) /
         std::pow(4.0 * std::numbers::pi * tau, 0.5 * d);
}

// grad K = K * (-x) / (2 tau).
inline void grad_heat_kernel(std::span<const double> x, double tau,
                             std::span<double> out) {
  double k = heat_kernel(x, tau);
  for (std::size_t a = 0; a < x.size(); ++a) out[a] = k * (-x[a]) / (2.0 * tau);
}

// sup_x |grad K(., tau)| = (sqrt(2)/2) e^{-1/2} (4 pi tau)^{-d/2} tau^{-1/2},
// attained at |x| = sqrt(2 tau) (u e^{-u^2} <= (sqrt(2)/2) e^{-1/2}).
inline double grad_heat_kernel_sup(double tau, int dim) {
  if (!(tau > 0)) throw std::domain_error("grad_heat_kernel_sup: tau must be > 0");
  return 0.5 * std::numbers::sqrt2 * std::exp(-0.5) *
         std::pow(4.0 * std::numbers::pi * tau, -0.5 * dim) / std::sqrt(tau);
}

// e^{tau Laplacian} via the spectral multiplier exp(-|k|^2 tau). tau = 0 is
// the exact identity; mass (the zero mode) is preserved to rounding.
inline GridField semigroup_apply(const GridField& f, double tau) {
  if (tau < 0) throw std::domain_error("semigroup_apply: tau must be >= 0");
  if (tau == 0) return f;
  double base = std::numbers::pi / f.spec.half_width;
  return detail::spectral_map(f, [&](const std::array<int, kMaxDim>& freq) {
    double k2 = 0;
    for (int a = 0; a < f.spec.dim; ++a) {
      double k = base * freq[a];
      k2 += k * k;
    }
    return std::exp(-k2 * tau);
  });
}

// Trapezoid nodes/weights on the stored time grid {0, h, 2h, ...} capped at
// s-eps. The cap remainder is assigned to the last node, so the weights sum
// to exactly s-eps and nodes never exceed it.
struct MemoryQuadrature {
  std::vector<double> nodes;
  std::vector<double> weights;
  bool empty() const { return nodes.empty(); }
};

inline MemoryQuadrature memory_nodes(double s, double eps, double h) {
  if (!(h > 0)) throw std::invalid_argument("memory_nodes: stored step must be > 0");
  if (!(eps >= 0)) throw std::invalid_argument("memory_nodes: eps must be >= 0");
  MemoryQuadrature q;
  double T = s - eps;
  if (T <= 0) return q;
  // Snap the panel count across one-ulp subtraction noise in s-eps; the cap
  // remainder below absorbs the (at most 1e-12 h) signed difference.
  int K = static_cast<int>(std::floor(T / h + 1e-12));
  if (K < 1) {
    q.nodes = {0.0};
    q.weights = {T};
    return q;
  }
  q.nodes.resize(K + 1);
  q.weights.assign(K + 1, h);
  for (int j = 0; j <= K; ++j) q.nodes[j] = j * h;
  q.weights.front() = 0.5 * h;
  q.weights.back() = 0.5 * h;
  q.weights.back() += T - K * h;  // cap remainder keeps the sum at s-eps
  return q;
}

}  // namespace ks
