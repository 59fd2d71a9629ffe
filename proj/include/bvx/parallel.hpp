#ifndef BVX_PARALLEL_HPP
#define BVX_PARALLEL_HPP

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace bvx {

/// Worker count from an explicit request, then the BVX_JOBS variable, then the hardware.
unsigned resolve_jobs(unsigned requested);

/// Calls body(i) for every i in [0, n) on up to `jobs` threads. Bodies must
/// write only to their own slot. The exception of the lowest failing index is
/// rethrown, so error reporting is schedule-independent too.
template <typename Body>
void parallel_for(std::size_t n, unsigned jobs, Body&& body) {
  if (n == 0) return;
  const std::size_t workers = std::clamp<std::size_t>(jobs, 1, n);
  std::vector<std::exception_ptr> errors(n);
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            body(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace bvx

#endif  // BVX_PARALLEL_HPP
