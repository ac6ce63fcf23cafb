#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace hseg {

// Kernel parallelism is capped by HSEG_THREADS (0 or unset = single-threaded).
// Callers must hand parallel_for ranges whose iterations write disjoint outputs
// with a fixed per-output reduction order, so results are identical for any
// thread count.
inline int thread_count() {
  static const int n = [] {
    const char* env = std::getenv("HSEG_THREADS");
    if (!env) return 1;
    int v = std::atoi(env);
    return v <= 1 ? 1 : v;
  }();
  return n;
}

template <class Fn>
void parallel_for(long begin, long end, Fn&& body) {
  const long count = end - begin;
  if (count <= 0) return;
  const int threads = thread_count();
  if (threads <= 1 || count < 2) {
    for (long i = begin; i < end; ++i) body(i);
    return;
  }
  const int used = static_cast<int>(std::min<long>(threads, count));
  const long chunk = (count + used - 1) / used;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(used));
  for (int t = 0; t < used; ++t) {
    const long lo = begin + t * chunk;
    const long hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &body] {
      for (long i = lo; i < hi; ++i) body(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace hseg
