#pragma once

#include <algorithm>
#include <cstdlib>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace revcurl {

/// Worker cap from REVCURL_THREADS; defaults to 1 (single-worker mode).
inline int worker_count() {
  const char* env = std::getenv("REVCURL_THREADS");
  if (!env || !*env) return 1;
  const int n = std::atoi(env);
  if (n < 1) return 1;
  return std::min(n, 256);
}

/// Runs fn(i) for i in [0, n). Work items must be independent; each item owns
/// its output slot, so results do not depend on the worker count.
template <class Fn>
inline void parallel_for(int n, Fn&& fn) {
  const int workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  std::exception_ptr error;
  std::mutex error_mutex;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += workers) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace revcurl
