#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace troi {

// Thread cap from TROI_THREADS (default 1). Parallel kernels only ever split
// work by output rows with a fixed per-element summation order, so results
// are bit-identical for any thread count.
inline int thread_count() {
  static int n = [] {
    const char* env = std::getenv("TROI_THREADS");
    if (!env) return 1;
    int v = std::atoi(env);
    return v < 1 ? 1 : v;
  }();
  return n;
}

template <class Fn>
void parallel_rows(int n_rows, Fn&& fn) {
  int nt = std::min(thread_count(), n_rows);
  if (nt <= 1 || n_rows < 64) {
    fn(0, n_rows);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(nt);
  int chunk = (n_rows + nt - 1) / nt;
  for (int t = 0; t < nt; ++t) {
    int r0 = t * chunk;
    int r1 = std::min(n_rows, r0 + chunk);
    if (r0 >= r1) break;
    pool.emplace_back([&fn, r0, r1] { fn(r0, r1); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace troi
