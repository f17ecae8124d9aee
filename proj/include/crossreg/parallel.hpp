#pragma once

#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace crossreg {

// Runs fn(i) for i in [0, n). thread_count <= 1 runs inline. Work items are claimed
// through a shared counter, so per-slot outputs land in deterministic positions
// regardless of scheduling.
template <typename Fn>
void par_for(std::size_t n, int thread_count, Fn&& fn) {
    if (n == 0) return;
    if (thread_count <= 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const int workers = static_cast<int>(std::min<std::size_t>(thread_count, n));
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace crossreg
