#pragma once

#include <cstddef>
#include <functional>

namespace prood {

/// Worker count: PROOD_THREADS if set to a positive integer, otherwise the
/// hardware concurrency (at least 1).
std::size_t thread_count();

/// Runs fn(i) for i in [0, n) on up to thread_count() threads. Work items must
/// write to disjoint outputs; the first exception thrown is rethrown here.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace prood
