#pragma once

#ifdef _OPENMP
#include <omp.h>
#endif

namespace oct {

// Worker count for the conv kernels. Results are bit-identical at any
// setting; this only trades wall time.
inline void set_threads(int n) {
  if (n < 1) n = 1;
#ifdef _OPENMP
  omp_set_num_threads(n);
#else
  (void)n;
#endif
}

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace oct
