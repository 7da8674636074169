#pragma once

#include <cstddef>
#include <functional>

namespace maskqa {

/// 0 or negative means "all available cores".
int resolve_threads(int requested);

/// Runs fn(0..n-1) on up to `threads` workers. Results must be written to
/// per-index slots so the outcome does not depend on the schedule. The
/// first exception thrown by any call is rethrown after all workers stop.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace maskqa
