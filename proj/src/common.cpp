#include "nopkit/common.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace nop {

std::size_t worker_count() {
    static std::size_t n = [] {
        if (const char* env = std::getenv("NOPKIT_THREADS")) {
            long v = std::atol(env);
            if (v >= 1) return static_cast<std::size_t>(v);
        }
        unsigned hc = std::thread::hardware_concurrency();
        return static_cast<std::size_t>(hc > 0 ? hc : 1);
    }();
    return n;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
    if (n == 0) return;
    std::size_t workers = std::min(worker_count(), n);
    if (workers <= 1) {
        body(0, n);
        return;
    }
    std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) {
        std::size_t lo = w * chunk;
        std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&body, lo, hi] { body(lo, hi); });
    }
    body(0, std::min(n, chunk));
    for (auto& t : pool) t.join();
}

} // namespace nop
