#pragma once

#include <cstddef>
#include <functional>

namespace riskpia {

/// Worker count used by every parallel phase. 0 selects the hardware
/// concurrency. Results never depend on this value.
void set_thread_count(unsigned n);
unsigned thread_count();

/// Runs fn(begin, end) over disjoint contiguous chunks covering [0, n).
/// Callers write only to per-index slots and reduce afterwards in index
/// order. If several chunks throw, the exception of the lowest chunk wins.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn,
                  std::size_t min_chunk = 1);

}  // namespace riskpia
