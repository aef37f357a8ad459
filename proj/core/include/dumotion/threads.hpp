#pragma once

#include <cstddef>
#include <functional>

namespace dumotion {

// Worker cap for batch-level parallelism. Resolution order: explicit
// set_max_threads() override, then the DUMOTION_THREADS environment
// variable, then hardware_concurrency.
std::size_t max_threads();
void set_max_threads(std::size_t n);  // 0 restores the default resolution

// Runs fn(i) for i in [0, n). Work items must be independent; results that
// need reduction should be written to per-index slots and combined by the
// caller in index order, which keeps any reduction bitwise deterministic
// regardless of the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace dumotion
