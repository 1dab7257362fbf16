#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace u3d {

namespace detail {
inline std::atomic<std::size_t>& thread_setting() {
  static std::atomic<std::size_t> n{1};
  return n;
}
}  // namespace detail

/// Upper bound on worker threads used by parallel kernels. Results never
/// depend on this value: every parallel task owns its outputs.
inline void set_num_threads(std::size_t n) { detail::thread_setting() = std::max<std::size_t>(1, n); }
inline std::size_t num_threads() { return detail::thread_setting(); }

/// Runs fn(i) for i in [0, n). Each index must write disjoint memory.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min(num_threads(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto body = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(body);
  body();
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace u3d
