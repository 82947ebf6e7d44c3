// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace oraclemarch {

/// Worker count from ORACLEMARCH_THREADS, or 1 when unset or invalid.
inline int default_threads() {
  if (const char* env = std::getenv("ORACLEMARCH_THREADS")) {
    try {
      return std::max(1, std::stoi(env));
    } catch (...) {
    }
  }
  return 1;
}

/// Splits [0, n) into `threads` contiguous chunks and runs fn(begin, end) on each.
/// Chunk boundaries depend only on (n, threads), so reductions done per chunk in
/// chunk order are reproducible.
template <typename Fn>
void parallel_for(size_t n, int threads, Fn&& fn) {
  threads = std::max(1, std::min<int>(threads, int(std::max<size_t>(n, 1))));
  if (threads == 1) {
    fn(size_t(0), n);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (int w = 0; w < threads; ++w) {
    const size_t begin = n * w / threads, end = n * (w + 1) / threads;
    pool.emplace_back([&, w, begin, end] {
      try {
        fn(begin, end);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace oraclemarch
