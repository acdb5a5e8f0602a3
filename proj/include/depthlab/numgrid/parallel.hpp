#pragma once

#include <functional>

namespace depthlab::numgrid {

// Worker count: DEPTHLAB_THREADS if set (>= 1), else hardware concurrency.
int thread_budget();

// Runs fn(i) for i in [0, n). Callers write results into per-index slots and
// reduce them in index order afterwards, so results never depend on the
// thread count.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace depthlab::numgrid
