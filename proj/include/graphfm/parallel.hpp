#pragma once

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace graphfm {

// Parallel loop over [0, n). Every index is handled by exactly one thread and
// all writes target disjoint output slices, so results are bit-identical for
// any thread count (including 1). Keep reductions out of f; accumulate into
// per-index storage instead.
template <typename F>
void parallel_for(int64_t n, F&& f) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int64_t i = 0; i < n; ++i) f(i);
}

}  // namespace graphfm
