#pragma once
// Counter-based RNG (Philox 4x32-10). Every draw is addressed, never
// sequenced: key = the 64-bit run seed, counter = (a, b, block, stream).
// Particle increments use a = particle id, b = step index, so any (i, n)
// increment can be regenerated in O(1) regardless of ensemble size, worker
// count, or evaluation order.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>

namespace ks {

namespace detail {

inline constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
inline constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
inline constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
inline constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline std::array<std::uint32_t, 4> philox4x32_10(
    std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    std::uint64_t p0 = static_cast<std::uint64_t>(kPhiloxM0) * ctr[0];
    std::uint64_t p1 = static_cast<std::uint64_t>(kPhiloxM1) * ctr[2];
    ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
           static_cast<std::uint32_t>(p1),
           static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
           static_cast<std::uint32_t>(p0)};
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
  }
  return ctr;
}

// Strictly inside (0, 1); safe as a log argument.
inline double u32_to_unit(std::uint32_t x) {
  return (static_cast<double>(x) + 0.5) * 0x1p-32;
}

}  // namespace detail

// Fixed stream ids; a stream never reuses another stream's counters.
enum : std::uint32_t {
  kStreamIncrements = 0,
  kStreamInitGauss = 1,
  kStreamInitPick = 2,
  kStreamSlicedDirs = 16,
  kStreamGridSamples = 17,
  kStreamSynthetic = 32,
};

// Addressed uniform/Gaussian draws for one (seed, stream) pair.
struct CounterRng {
  std::uint64_t seed = 0;
  std::uint32_t stream = 0;

  std::array<std::uint32_t, 4> raw(std::uint32_t a, std::uint32_t b,
                                   std::uint32_t block = 0) const {
    return detail::philox4x32_10(
        {a, b, block, stream},
        {static_cast<std::uint32_t>(seed),
         static_cast<std::uint32_t>(seed >> 32)});
  }

  double uniform(std::uint32_t a, std::uint32_t b,
                 std::uint32_t block = 0) const {
    return detail::u32_to_unit(raw(a, b, block)[0]);
  }

  // Fills out with standard normals via Box-Muller, two per counter block.
  void normals(std::uint32_t a, std::uint32_t b, std::span<double> out) const {
    for (std::size_t k = 0; k < out.size(); k += 2) {
      auto words = raw(a, b, static_cast<std::uint32_t>(k / 2));
      double u1 = detail::u32_to_unit(words[0]);
      double u2 = detail::u32_to_unit(words[1]);
      double r = std::sqrt(-2.0 * std::log(u1));
      double th = 2.0 * std::numbers::pi * u2;
      out[k] = r * std::cos(th);
      if (k + 1 < out.size()) out[k + 1] = r * std::sin(th);
    }
  }
};

// Shared-noise source for coupled runs: the increment for particle i at step n
// depends only on (seed, i, n), so interacting, intermediate, and limit
// ensembles driven by the same store see identical Brownian paths.
struct BrownianStore {
  std::uint64_t seed = 0;
  int dim = 1;

  // out ~ N(0, dt I_d), the Brownian increment over one step.
  void increments(std::uint32_t i, std::uint32_t n, double dt,
                  std::span<double> out) const {
    if (!(dt > 0)) throw std::invalid_argument("invalid dt for increments");
    CounterRng rng{seed, kStreamIncrements};
    rng.normals(i, n, out);
    double s = std::sqrt(dt);
    for (double& x : out) x *= s;
  }

  // Standard normals for initial sampling; distinct stream from increments.
  void init_normals(std::uint32_t i, std::span<double> out) const {
    CounterRng rng{seed, kStreamInitGauss};
    rng.normals(i, 0, out);
  }

  // Uniform (0,1) used for mixture component picks.
  double init_uniform(std::uint32_t i) const {
    CounterRng rng{seed, kStreamInitPick};
    return rng.uniform(i, 0);
  }
};

}  // namespace ks
