#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace posespace {

// Process-wide cap on worker threads (the CLI's --threads). 1 runs inline.
void set_max_threads(int threads);
int max_threads();

// Runs fn(i) for i in [0, n) over contiguous chunks. Callers only use it for
// independent items writing to distinct outputs, so results do not depend on
// the thread count. The first exception thrown by any item is rethrown.
template <typename Fn>
void parallel_for(size_t n, Fn&& fn) {
  const size_t workers = std::min<size_t>(static_cast<size_t>(std::max(1, max_threads())), n);
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) {
      fn(i);
    }
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (size_t i = w * n / workers; i < (w + 1) * n / workers; ++i) {
          fn(i);
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) {
    t.join();
  }
  for (auto& e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }
}

}  // namespace posespace
