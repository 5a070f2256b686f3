#pragma once

#include <cstddef>
#include <functional>

namespace fodnet {

/// Worker count: explicit value if > 0, else $FODNET_THREADS, else hardware concurrency.
int resolve_threads(int requested = 0);

/// Calls fn(begin, end) over contiguous static chunks of [0, n). Chunking
/// depends only on n and the thread count, and every index is handled by
/// exactly one call, so per-index results never depend on scheduling.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace fodnet
