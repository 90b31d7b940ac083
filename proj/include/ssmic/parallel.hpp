#pragma once

#include <cstddef>
#include <functional>

namespace ssmic {

// Worker cap for kernels. Initialized from SSMIC_THREADS (default: hardware
// concurrency). Work is split into contiguous index blocks, and every output
// element is produced by exactly one worker in the sequential order, so
// results do not depend on the thread count. set_num_threads(0) restores
// the default.
std::size_t num_threads();
void set_num_threads(std::size_t n);

// Runs fn(begin, end) over [0, n). Falls back to a single call when n is
// below 2 * grain or only one worker is allowed.
void parallel_for(std::size_t n, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace ssmic
