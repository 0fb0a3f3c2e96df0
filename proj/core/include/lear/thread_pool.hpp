#pragma once

#include <cstdint>
#include <functional>

namespace lear {

// Number of worker threads the kernels may use. Reads LEAR_THREADS once at
// first use; falls back to hardware_concurrency.
int worker_count();

// Runs fn over disjoint chunks of [0, n). Each index is processed by exactly
// one invocation, so writes to per-index outputs are race-free and results do
// not depend on the thread count. Nested calls from inside a worker run
// serially.
void parallel_for(std::int64_t n,
                  const std::function<void(std::int64_t, std::int64_t)>& fn);

}  // namespace lear
