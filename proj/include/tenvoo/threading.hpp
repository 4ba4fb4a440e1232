#pragma once

#include <cstdint>
#include <functional>

namespace tenvoo {

// Process-wide worker count for parallel_for. Defaults to the hardware
// concurrency; clamped to >= 1.
int num_threads();
void set_num_threads(int n);

// Runs body(begin, end) over a partition of [0, n) into contiguous chunks,
// one chunk per worker. Each index is processed by exactly one chunk in
// ascending order, so results are identical for any thread count as long as
// chunks write disjoint outputs. body must not throw.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body);

}  // namespace tenvoo
