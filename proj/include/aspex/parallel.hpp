#pragma once

#include <functional>
#include <thread>
#include <vector>

namespace aspex {

// Runs fn over [0, n) split into contiguous chunks, one per worker. Results
// must be written to disjoint, index-addressed slots so the output does not
// depend on scheduling.
inline void parallel_for(size_t n, int threads,
                         const std::function<void(size_t, size_t)>& fn) {
    if (threads <= 1 || n < 2) {
        fn(0, n);
        return;
    }
    size_t workers = std::min<size_t>(static_cast<size_t>(threads), n);
    size_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (size_t w = 0; w < workers; ++w) {
        size_t begin = w * chunk;
        size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back(fn, begin, end);
    }
    for (auto& t : pool) t.join();
}

}  // namespace aspex
