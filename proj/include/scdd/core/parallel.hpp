#pragma once

// OpenMP wrappers. Without OpenMP every construct degrades to a serial loop.
#if defined(_OPENMP)
#include <omp.h>
#define SCDD_PRAGMA(x) _Pragma(#x)
#define SCDD_PARALLEL_FOR SCDD_PRAGMA(omp parallel for schedule(static))
#define SCDD_PARALLEL_FOR_DYNAMIC SCDD_PRAGMA(omp parallel for schedule(dynamic))
#define SCDD_SIMD SCDD_PRAGMA(omp simd)
#else
#define SCDD_PARALLEL_FOR
#define SCDD_PARALLEL_FOR_DYNAMIC
#define SCDD_SIMD
#endif

namespace scdd::parallel {

inline int max_threads() {
#if defined(_OPENMP)
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline int thread_id() {
#if defined(_OPENMP)
  return omp_get_thread_num();
#else
  return 0;
#endif
}

inline void set_threads(int n) {
#if defined(_OPENMP)
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

/// Deterministic mode pins the kernels to one thread so floating-point
/// reductions happen in a fixed order.
inline void set_deterministic(bool on) {
  if (on) set_threads(1);
}

}  // namespace scdd::parallel
