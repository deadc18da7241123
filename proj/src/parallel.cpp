#include "voxattn/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace voxattn {

int thread_budget() {
  // Re-read on every call; kernels consult this once per launch, and tests
  // flip it between runs to prove results are independent of the budget.
  if (const char* env = std::getenv("VOXATTN_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) return static_cast<int>(std::min<long>(v, 256));
  }
  int n = static_cast<int>(std::thread::hardware_concurrency());
  return n < 1 ? 1 : n;
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body) {
  if (n <= 0) return;
  int threads = thread_budget();
  if (threads <= 1 || n < 2) {
    body(0, n);
    return;
  }
  std::int64_t chunks = std::min<std::int64_t>(threads, n);
  std::int64_t per = (n + chunks - 1) / chunks;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(chunks));
  for (std::int64_t c = 0; c < chunks; ++c) {
    std::int64_t begin = c * per;
    std::int64_t end = std::min<std::int64_t>(begin + per, n);
    if (begin >= end) break;
    pool.emplace_back([&body, begin, end] { body(begin, end); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace voxattn
