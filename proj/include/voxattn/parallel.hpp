#pragma once

#include <cstdint>
#include <functional>

namespace voxattn {

// Number of worker threads kernels may use: the VOXATTN_THREADS environment
// variable when set, otherwise the hardware concurrency. Results never depend
// on this value, only wall time does.
int thread_budget();

// Splits [0, n) into contiguous chunks and runs `body(begin, end)` on each,
// possibly on multiple threads. Each index is processed exactly once by a
// single thread, so results are independent of the thread count as long as
// the body writes only to its own index range.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body);

}  // namespace voxattn
