#pragma once

#include <cstddef>
#include <functional>

namespace costq {

/// Number of worker threads: COSTQ_JOBS when set, else `requested`, else hardware concurrency.
int resolve_jobs(int requested);

/// Runs body(i) for i in [0, count) on up to `jobs` threads. The first exception
/// thrown by any body is rethrown after all workers finish.
void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& body);

}  // namespace costq
