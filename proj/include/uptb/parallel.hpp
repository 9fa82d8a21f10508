#pragma once

#include <cstddef>
#include <functional>

namespace uptb {

// Worker count: UPTB_THREADS if set to a positive integer, otherwise the
// hardware concurrency (at least 1).
std::size_t worker_count();

// Calls fn(i) for every i in [0, n) using up to worker_count() threads.
// Each index runs exactly once; the first exception is rethrown after all
// workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace uptb
