#pragma once
// Real<->complex FFT plumbing over FFTW. Plans are cached per shape behind a
// mutex and created with FFTW_ESTIMATE | FFTW_UNALIGNED, so planning is
// deterministic and execution on caller buffers is thread safe.

#include <fftw3.h>

#include <complex>
#include <map>
#include <mutex>
#include <stdexcept>
#include <vector>

namespace ks::detail {

inline std::mutex& fftw_mutex() {
  static std::mutex m;
  return m;
}

inline fftw_plan fft_plan(const std::vector<int>& dims, bool forward) {
  static std::map<std::pair<std::vector<int>, bool>, fftw_plan> cache;
  std::lock_guard<std::mutex> lock(fftw_mutex());
  auto key = std::make_pair(dims, forward);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  std::size_t n_real = 1;
  for (int m : dims) n_real *= static_cast<std::size_t>(m);
  std::size_t n_cplx = n_real / dims.back() *
                       (static_cast<std::size_t>(dims.back()) / 2 + 1);
  std::vector<double> re(n_real);
  std::vector<std::complex<double>> cx(n_cplx);
  unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  fftw_plan p;
  if (forward) {
    p = fftw_plan_dft_r2c(static_cast<int>(dims.size()), dims.data(),
                          re.data(), reinterpret_cast<fftw_complex*>(cx.data()),
                          flags);
  } else {
    p = fftw_plan_dft_c2r(static_cast<int>(dims.size()), dims.data(),
                          reinterpret_cast<fftw_complex*>(cx.data()), re.data(),
                          flags);
  }
  if (p == nullptr) throw std::runtime_error("fftw plan creation failed");
  cache.emplace(std::move(key), p);
  return p;
}

// out must hold prod(dims)/dims.back()*(dims.back()/2+1) coefficients.
inline void fft_forward_r2c(const std::vector<int>& dims, const double* in,
                            std::complex<double>* out) {
  fftw_plan p = fft_plan(dims, true);
  // r2c out-of-place preserves the input; FFTW still wants a non-const ptr.
  fftw_execute_dft_r2c(p, const_cast<double*>(in),
                       reinterpret_cast<fftw_complex*>(out));
}

// Destroys `in` (FFTW multi-dimensional c2r has no preserve-input mode) and
// leaves the unnormalized transform in `out`; callers divide by prod(dims).
inline void fft_inverse_c2r(const std::vector<int>& dims,
                            std::complex<double>* in, double* out) {
  fftw_plan p = fft_plan(dims, false);
  fftw_execute_dft_c2r(p, reinterpret_cast<fftw_complex*>(in), out);
}

}  // namespace ks::detail
