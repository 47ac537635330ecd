#pragma once

#include <cstddef>
#include <functional>

namespace ddv {

// Worker count from DDVKIT_THREADS, else hardware concurrency (>= 1).
std::size_t default_threads();

/// Runs fn(0..n-1) on up to `threads` workers. Callers write results into
/// slot i so ordering never depends on scheduling. The first exception
/// thrown by any job is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace ddv
