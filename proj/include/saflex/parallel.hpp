#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace saflex {

namespace detail {
inline std::atomic<std::size_t>& thread_override() {
  static std::atomic<std::size_t> n{0};
  return n;
}
} // namespace detail

/// Worker cap: set_max_threads() if called, else SAFLEX_THREADS, else the
/// hardware concurrency.
inline std::size_t max_threads() {
  if (std::size_t n = detail::thread_override().load(); n > 0) return n;
  if (const char* env = std::getenv("SAFLEX_THREADS")) {
    try {
      long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (...) {
    }
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// 0 restores the environment/hardware default.
inline void set_max_threads(std::size_t n) { detail::thread_override().store(n); }

/// Runs fn(i) for i in [0, n). Each index is handled by exactly one worker, so
/// results written to per-index slots do not depend on the thread count.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t min_per_thread = 8) {
  std::size_t workers = std::min(max_threads(), (n + min_per_thread - 1) / std::max<std::size_t>(1, min_per_thread));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 1; w < workers; ++w) {
    std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (std::size_t i = 0; i < std::min(n, chunk); ++i) fn(i);
  for (auto& t : pool) t.join();
}

} // namespace saflex
