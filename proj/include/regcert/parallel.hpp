#pragma once

#include <cstddef>
#include <functional>

namespace regcert {

/// Caps the worker count used by parallel_for. Zero restores the hardware
/// default.
void set_max_threads(unsigned n);
unsigned max_threads();

/// Runs body(i) for i in [0, n). Indices are split into contiguous chunks,
/// one per worker. Calls made from inside a worker run serially, so nested
/// loops never oversubscribe. Every index must write only its own output.
void parallel_for(std::size_t n, const std::function<void(std::size_t)> &body);

/// Chunked variant: body(begin, end) over disjoint ranges.
void parallel_for_range(std::size_t n, const std::function<void(std::size_t, std::size_t)> &body);

} // namespace regcert
