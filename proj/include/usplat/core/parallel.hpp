#pragma once

#include <algorithm>
#include <thread>
#include <vector>

namespace usplat {

inline int effective_workers(int n_blocks, int threads) {
  return std::max(1, std::min(threads, std::max(1, n_blocks)));
}

/// Runs fn(block_index, worker_index) for block_index in [0, n_blocks)
/// across workers. Blocks are assigned round-robin by worker id, so the
/// assignment (and any per-worker accumulation) is independent of timing.
template <typename Fn>
void parallel_for_blocks(int n_blocks, int threads, Fn&& fn) {
  const int workers = effective_workers(n_blocks, threads);
  if (workers == 1) {
    for (int b = 0; b < n_blocks; ++b) fn(b, 0);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([=, &fn] {
      for (int b = w; b < n_blocks; b += workers) fn(b, w);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace usplat
