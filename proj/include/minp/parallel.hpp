#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace minp {

// Run fn(i) for i in [0, n) on `workers` threads. Work items are claimed
// through an atomic counter; results must be written by index so the output
// is independent of scheduling. Exceptions are captured and rethrown once.
inline void parallel_for(long n, int workers, const std::function<void(long)>& fn) {
  if (n <= 0) return;
  if (workers <= 1 || n == 1) {
    for (long i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<long> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto body = [&]() {
    for (;;) {
      const long i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(n, std::memory_order_relaxed);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const int nthreads = static_cast<int>(std::min<long>(workers, n));
  pool.reserve(nthreads);
  for (int w = 0; w < nthreads; ++w) pool.emplace_back(body);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

inline int default_workers() {
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

}  // namespace minp
