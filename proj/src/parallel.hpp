#pragma once

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace stgt {

// A one-thread team still pays for the outlined region, so the omp if
// clauses gate on a real team as well as on enough work to split.
inline bool parallel_worth(std::size_t work, std::size_t threshold) {
#ifdef _OPENMP
    return work > threshold && omp_get_max_threads() > 1;
#else
    (void)work;
    (void)threshold;
    return false;
#endif
}

} // namespace stgt
