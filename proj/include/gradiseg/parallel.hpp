#pragma once

#include <cstddef>
#include <functional>

namespace gradiseg {

/// Worker count: GRADISEG_THREADS when set and positive, otherwise the
/// OpenMP default.
int thread_count();

/// Overrides the worker count for this process; 0 restores the default.
void set_thread_count(int n);

/// Runs body(i) for i in [0, n) with a static schedule. Callers that reduce
/// write into per-index slots and combine them afterwards in index order, so
/// results never depend on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace gradiseg
