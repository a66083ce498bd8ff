#pragma once

#include <cstddef>
#include <functional>

namespace msms {

// Runs body(b) for every block b in [0, n_blocks) on up to `threads` workers.
// Blocks are independent; callers reduce per-block results in block order,
// so results do not depend on the thread count. The first exception thrown
// by any block is rethrown after all workers stop.
void parallel_blocks(std::size_t n_blocks, int threads,
                     const std::function<void(std::size_t)>& body);

// Number of workers to use for `requested` (0 = hardware concurrency).
int resolve_threads(int requested);

}  // namespace msms
