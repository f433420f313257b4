#pragma once

#include <cstddef>
#include <functional>

namespace advlab {

/// Runs fn(i) for i in [0, n) on up to `workers` threads.
///
/// Callers write results into per-index slots and reduce afterwards in index
/// order, so the outcome never depends on the worker count. workers <= 1 runs
/// inline. The first exception thrown by any fn is rethrown after all threads
/// have joined.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace advlab
