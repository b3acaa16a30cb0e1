#pragma once

#include <cstddef>
#include <functional>

namespace mgtraj {

// Thread count for parallel helpers: MGTRAJ_THREADS if set (clamped to >= 1),
// else std::thread::hardware_concurrency().
int worker_threads();

// Runs fn(0..n-1) across up to `threads` workers with a static index
// partition. Callers make results deterministic by writing to per-index
// slots; the partition itself never influences outputs.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace mgtraj
