#pragma once
// Deterministic worker pool. Work is split by static index partition and every
// task writes only slots it owns, so the worker count changes throughput but
// never output bytes.

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <thread>
#include <vector>

namespace ks {

// Programmatic override; 0 means "not set".
inline int& worker_override() {
  static int value = 0;
  return value;
}

// Resolution order: override, KSLAB_WORKERS env var, hardware concurrency.
inline int worker_count() {
  if (worker_override() > 0) return worker_override();
  if (const char* env = std::getenv("KSLAB_WORKERS")) {
    int v = std::atoi(env);
    if (v > 0) return v;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(i) for i in [0, n). fn must not touch state owned by other indices.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  std::size_t workers = std::min<std::size_t>(
      static_cast<std::size_t>(worker_count()), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    std::size_t lo = w * chunk;
    std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace ks
