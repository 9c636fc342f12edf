#pragma once

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace fedmlp {

// Runs f(i) for i in [0, n). Work items must be independent and write only
// to their own output slots, so the result is identical for any thread count.
template <class F>
void parallel_for(int n, int threads, F&& f) {
  threads = std::max(1, std::min(threads, n));
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) f(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace fedmlp
