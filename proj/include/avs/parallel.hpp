#pragma once

#include <cstdlib>
#include <thread>
#include <vector>

namespace avs {

inline int default_workers() {
  if (const char* env = std::getenv("AVS_WORKERS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

// Static, deterministic partition of [0, n) across up to `workers` threads.
// Safe only for independent items writing disjoint outputs.
template <typename F>
void parallel_for(size_t n, int workers, F&& fn) {
  if (n == 0) return;
  if (workers <= 1 || n == 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  size_t n_threads = std::min<size_t>(static_cast<size_t>(workers), n);
  std::vector<std::thread> threads;
  threads.reserve(n_threads);
  for (size_t t = 0; t < n_threads; ++t) {
    size_t begin = n * t / n_threads;
    size_t end = n * (t + 1) / n_threads;
    threads.emplace_back([begin, end, &fn] {
      for (size_t i = begin; i < end; ++i) fn(i);
    });
  }
  for (auto& th : threads) th.join();
}

}  // namespace avs
