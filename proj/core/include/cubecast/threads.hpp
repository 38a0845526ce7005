#pragma once
#include <cstdint>
#include <functional>

namespace cubecast {

// Resolves a thread count: explicit request wins, otherwise the CF_THREADS
// environment variable, otherwise 1.
int resolve_threads(int requested);

// Runs fn(i) for i in [0, n). Work is split into contiguous chunks, one per
// thread; every index is processed by exactly one thread, so any output that
// is written per-index is identical to the serial result.
void parallel_for(int64_t n, int threads, const std::function<void(int64_t)>& fn);

}  // namespace cubecast
