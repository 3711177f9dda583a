#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace sparse_drift {

/// Worker count: SPARSE_DRIFT_THREADS if set (>= 1), else hardware concurrency.
inline std::size_t default_workers() {
  if (const char* env = std::getenv("SPARSE_DRIFT_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Calls fn(k) for k in [0, count) on up to `workers` threads. Work is
/// assigned in a fixed interleaved pattern; fn must write only to slot k.
/// If several calls throw, the exception of the smallest k is rethrown.
template <class Fn>
void parallel_for(std::size_t count, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers <= 1) {
    for (std::size_t k = 0; k < count; ++k) fn(k);
    return;
  }
  std::mutex mu;
  std::size_t failed_at = std::numeric_limits<std::size_t>::max();
  std::exception_ptr failure;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t k = w; k < count; k += workers) {
        try {
          fn(k);
        } catch (...) {
          std::lock_guard lock(mu);
          if (k < failed_at) {
            failed_at = k;
            failure = std::current_exception();
          }
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace sparse_drift
