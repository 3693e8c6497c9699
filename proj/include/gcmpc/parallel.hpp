#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace gcmpc {

/// Runs fn(i) for i in [0, count) on up to `workers` threads (0 = hardware concurrency).
/// The first exception thrown by any task is rethrown after all workers join.
template <typename Fn>
void parallel_for(std::size_t count, Fn&& fn, unsigned workers = 0)
{
  if (workers == 0) { workers = std::max(1u, std::thread::hardware_concurrency()); }
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, std::max<std::size_t>(count, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) { fn(i); }
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) { error = std::current_exception(); }
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) { pool.emplace_back(work); }
  for (auto& t : pool) { t.join(); }
  if (error) { std::rethrow_exception(error); }
}

}  // namespace gcmpc
