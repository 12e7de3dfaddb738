#pragma once

#include <atomic>
#include <functional>
#include <thread>
#include <vector>

namespace volrig {

/// Runs fn(block) for block = 0..n_blocks-1 on up to n_threads workers.
/// Blocks are claimed through an atomic counter; any result that must be
/// deterministic is keyed by block index, never by worker identity.
inline void run_blocks(int n_blocks, int n_threads,
                       const std::function<void(int)>& fn) {
  n_threads = std::max(1, std::min(n_threads, n_blocks));
  if (n_threads == 1) {
    for (int b = 0; b < n_blocks; ++b) fn(b);
    return;
  }
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int b = next.fetch_add(1); b < n_blocks; b = next.fetch_add(1)) fn(b);
  };
  std::vector<std::thread> pool;
  pool.reserve(n_threads);
  for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

inline int default_thread_count() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(std::min(hw, 16u));
}

}  // namespace volrig
