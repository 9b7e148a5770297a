#pragma once

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "instantft/tensor.hpp"

namespace instantft {

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each i must write
// only its own output slot; callers reduce the slots in index order so the
// result does not depend on the worker count.
template <typename Fn>
void parallel_for(Index n, int threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<Index> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (Index i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const Index workers = std::min<Index>(threads, n);
    for (Index t = 0; t < workers; ++t) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace instantft
