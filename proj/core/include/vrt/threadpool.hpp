#pragma once

#include <cstddef>
#include <functional>

namespace vrt {

// Worker count for parallel sections: VLA_REDTEAM_THREADS when set, else
// hardware concurrency (at least 1).
std::size_t default_thread_count();

// Runs fn(i) for every i in [0, n), distributing indices over up to `threads`
// workers (0 = default_thread_count()). Blocks until all indices complete.
// The first exception thrown by any fn is rethrown on the calling thread.
// Callers own determinism: fn must write only to index-owned slots.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                  std::size_t threads = 0);

}  // namespace vrt
