#pragma once

#include <cstddef>
#include <functional>

namespace logsae {

/// Worker count from LOGSAE_THREADS, falling back to the hardware concurrency.
int default_thread_count();

/// Runs body(i) for i in [0, n) on up to `threads` workers (0 = default).
/// Each index runs exactly once; if any call throws, the exception from the
/// lowest failing index is rethrown after all workers stop.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body);

}  // namespace logsae
