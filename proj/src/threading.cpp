#include "tenvoo/threading.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace tenvoo {

namespace {

std::atomic<int> g_threads{0};  // 0 = unset, resolve lazily from hardware

int default_threads() {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace

int num_threads() {
    const int t = g_threads.load(std::memory_order_relaxed);
    return t > 0 ? t : default_threads();
}

void set_num_threads(int n) {
    g_threads.store(std::max(1, n), std::memory_order_relaxed);
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body) {
    if (n <= 0) return;
    const int nt = static_cast<int>(std::min<std::int64_t>(num_threads(), n));
    if (nt <= 1) {
        body(0, n);
        return;
    }
    const std::int64_t chunk = (n + nt - 1) / nt;
    std::vector<std::thread> workers;
    workers.reserve(static_cast<std::size_t>(nt - 1));
    for (int t = 1; t < nt; ++t) {
        const std::int64_t b = std::min<std::int64_t>(n, t * chunk);
        const std::int64_t e = std::min<std::int64_t>(n, b + chunk);
        if (b < e) workers.emplace_back([&body, b, e] { body(b, e); });
    }
    body(0, std::min<std::int64_t>(n, chunk));
    for (auto& w : workers) w.join();
}

}  // namespace tenvoo
