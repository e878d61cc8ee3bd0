#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace simavg {

//! Worker count for parallel loops. SIMAVG_THREADS caps the value taken
//! from hardware concurrency.
inline int worker_count()
{
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw <= 0) {
    hw = 1;
  }
  if (const char* env = std::getenv("SIMAVG_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) {
      return static_cast<int>(std::min<long>(v, hw));
    }
  }
  return hw;
}

//! Runs body(i) for i in [0, count) on a small pool of threads. The first
//! exception thrown by any body is rethrown after all workers stop.
template <class Body>
void parallel_for(std::ptrdiff_t count, const Body& body, int max_workers = 0)
{
  if (count <= 0) {
    return;
  }
  int workers = worker_count();
  if (max_workers > 0) {
    workers = std::min(workers, max_workers);
  }
  workers = static_cast<int>(std::min<std::ptrdiff_t>(workers, count));
  if (workers <= 1) {
    for (std::ptrdiff_t i = 0; i < count; ++i) {
      body(i);
    }
    return;
  }

  std::atomic<std::ptrdiff_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;

  auto run = [&] {
    for (;;) {
      if (failed.load(std::memory_order_relaxed)) {
        return;
      }
      const std::ptrdiff_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= count) {
        return;
      }
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) {
          error = std::current_exception();
        }
        failed.store(true, std::memory_order_relaxed);
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers - 1));
  for (int w = 1; w < workers; ++w) {
    pool.emplace_back(run);
  }
  run();
  for (auto& t : pool) {
    t.join();
  }
  if (error) {
    std::rethrow_exception(error);
  }
}

} // namespace simavg
