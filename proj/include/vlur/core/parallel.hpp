#pragma once

#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace vlur {

// Global switch between the OpenMP and single-thread execution of the
// compute kernels. Kernels assign each output element a fixed serial
// accumulation order, so results are bit-identical for any thread count;
// the switch exists for benchmarking and for debugging under a debugger.
inline bool& parallel_enabled() {
  static bool enabled = [] {
    const char* env = std::getenv("VLUR_SERIAL");
    return !(env && env[0] == '1');
  }();
  return enabled;
}

inline int thread_count() {
#ifdef _OPENMP
  return parallel_enabled() ? omp_get_max_threads() : 1;
#else
  return 1;
#endif
}

}  // namespace vlur
