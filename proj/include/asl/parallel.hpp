#pragma once

#include <algorithm>
#include <thread>
#include <vector>

#include "asl/tensor.hpp"

namespace asl {

/// Library-wide worker count. Kernels only ever split work across disjoint
/// output slices (batch items), so results are bit-identical for any setting.
inline int& num_threads_ref() {
  static int n = 1;
  return n;
}

inline int num_threads() { return num_threads_ref(); }

inline void set_num_threads(int n) {
  if (n < 1) throw ConfigError("set_num_threads: thread count must be >= 1");
  num_threads_ref() = n;
}

/// Runs fn(i) for i in [0, count), split over the configured thread count.
template <typename Fn>
void parallel_for(Index count, Fn&& fn) {
  const int workers = std::min<Index>(num_threads(), count);
  if (workers <= 1) {
    for (Index i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const Index chunk = (count + workers - 1) / workers;
  for (int t = 0; t < workers; ++t) {
    const Index begin = t * chunk;
    const Index end = std::min(count, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([begin, end, &fn] {
      for (Index i = begin; i < end; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace asl
